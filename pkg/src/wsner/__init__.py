"""Training NER taggers from a mix of weak (rule-labelled) and strong (gold) data.

Modules:

- ``core``: entity types, tag schemes, sentences/corpora and the BIO codec
- ``data``: corpus IO, filtering, statistics and the Monte Carlo splitter
- ``weaklabel``: rule labelling, gold corruption and synthetic corpora
- ``metrics``: span P/R/F1, pairwise agreement, per-language breakdowns
- ``model``: the BiRNN tagger, vocabulary and checkpoints
- ``train``: noise-robust training, ensembles, self-training, staged plans
- ``experiment`` / ``cli``: the sweep harness and command line
"""

__version__ = "0.1.0"

from .core import (
    COVIDNEWS,
    WIKIGOLD,
    Corpus,
    EntitySpan,
    EntityType,
    Sentence,
    TagScheme,
    ValidationError,
    decode_bio,
    encode_bio,
)

__all__ = [
    "COVIDNEWS",
    "WIKIGOLD",
    "Corpus",
    "EntitySpan",
    "EntityType",
    "Sentence",
    "TagScheme",
    "ValidationError",
    "decode_bio",
    "encode_bio",
]
