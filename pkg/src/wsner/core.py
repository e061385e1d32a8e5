"""Domain types, the entity ontology and the BIO tag codec."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class EntityType(str, enum.Enum):
    ANIMAL = "Animal"
    BACTERIUM = "Bacterium"
    DISEASE = "Disease"
    LOCATION = "Location"
    ORGANISATION = "Organisation"
    PERSON = "Person"
    PRODUCT = "Product"
    SYMPTOM = "Symptom"
    TIME = "Time"
    VIRUS = "Virus"


LANGUAGES = ("English", "French", "Indonesian", "Mandarin")
QUALITIES = ("strong", "weak", "unlabeled")
LABEL_SOURCES = ("gold", "weak")


@dataclass(frozen=True)
class TagScheme:
    """An ordered set of entity types and the BIO label space over them.

    Label 0 is always ``O``; type ``i`` owns ``B-X`` at ``2i + 1`` and
    ``I-X`` at ``2i + 2``.
    """

    types: tuple[str, ...]
    name: str = field(default="", compare=False)
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        types = tuple(self.types)
        object.__setattr__(self, "types", types)
        if len(set(types)) != len(types):
            raise ValidationError(f"duplicate entity type in scheme: {types}")
        for t in types:
            if not t or "-" in t or any(c.isspace() for c in t) or t == "O":
                raise ValidationError(f"invalid entity type name {t!r}")
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(self.labels)})

    @property
    def labels(self) -> list[str]:
        out = ["O"]
        for t in self.types:
            out.extend((f"B-{t}", f"I-{t}"))
        return out

    @property
    def label_count(self) -> int:
        return 2 * len(self.types) + 1

    def label_index(self, tag: str) -> int:
        try:
            return self._index[tag]
        except KeyError:
            raise ValidationError(f"unknown tag {tag!r} for scheme {self.types}") from None

    def __contains__(self, etype) -> bool:
        return etype in self.types


COVIDNEWS = TagScheme(tuple(e.value for e in EntityType), name="covidnews")
WIKIGOLD = TagScheme(("PER", "LOC", "ORG", "MISC"), name="wikigold")


class EntitySpan(NamedTuple):
    """Token span ``[start, end)`` labelled with ``etype``."""

    start: int
    end: int
    etype: str


def validate_spans(spans: Iterable, length: int, scheme: Optional[TagScheme] = None) -> tuple:
    """Return ``spans`` as a sorted tuple of EntitySpan, or raise on any violation."""
    out = sorted(EntitySpan(int(s[0]), int(s[1]), str(s[2])) for s in spans)
    prev_end = 0
    for sp in out:
        if not (0 <= sp.start < sp.end <= length):
            raise ValidationError(f"span {tuple(sp)} out of bounds for length {length}")
        if sp.start < prev_end:
            raise ValidationError(f"span {tuple(sp)} overlaps a preceding span")
        if scheme is not None and sp.etype not in scheme:
            raise ValidationError(f"span {tuple(sp)} has type {sp.etype!r} not in scheme")
        prev_end = sp.end
    return tuple(out)


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]
    gold_spans: Optional[tuple[EntitySpan, ...]] = None
    weak_spans: Optional[tuple[EntitySpan, ...]] = None
    origin_language: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        n = len(self.tokens)
        for name in ("gold_spans", "weak_spans"):
            spans = getattr(self, name)
            if spans is not None:
                object.__setattr__(self, name, validate_spans(spans, n))

    def __len__(self):
        return len(self.tokens)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def spans(self, source: str) -> tuple[EntitySpan, ...]:
        if source not in LABEL_SOURCES:
            raise ValidationError(f"label source must be one of {LABEL_SOURCES}, got {source!r}")
        spans = self.gold_spans if source == "gold" else self.weak_spans
        if spans is None:
            raise ValidationError(f"sentence has no {source} labels")
        return spans

    def with_spans(self, source: str, spans) -> "Sentence":
        if source == "gold":
            return Sentence(self.tokens, spans, self.weak_spans, self.origin_language)
        if source == "weak":
            return Sentence(self.tokens, self.gold_spans, spans, self.origin_language)
        raise ValidationError(f"label source must be one of {LABEL_SOURCES}, got {source!r}")


@dataclass(frozen=True)
class Corpus:
    sentences: tuple[Sentence, ...]
    scheme: TagScheme = COVIDNEWS
    quality: str = "strong"
    domain_tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if self.quality not in QUALITIES:
            raise ValidationError(f"quality must be one of {QUALITIES}, got {self.quality!r}")
        types = set(self.scheme.types)
        for i, s in enumerate(self.sentences):
            for spans in (s.gold_spans, s.weak_spans):
                for sp in spans or ():
                    if sp.etype not in types:
                        raise ValidationError(
                            f"sentence {i}: span type {sp.etype!r} not in scheme {self.scheme.types}"
                        )

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def __getitem__(self, i):
        return self.sentences[i]

    @property
    def default_source(self) -> str:
        """Label source used for training: weak labels on weak corpora, gold otherwise."""
        return "weak" if self.quality == "weak" else "gold"

    def has_source(self, source: str) -> bool:
        attr = "gold_spans" if source == "gold" else "weak_spans"
        return all(getattr(s, attr) is not None for s in self.sentences)

    def span_lists(self, source: str) -> list[tuple[EntitySpan, ...]]:
        return [s.spans(source) for s in self.sentences]

    def replace(self, sentences=None, **kw) -> "Corpus":
        return Corpus(
            self.sentences if sentences is None else tuple(sentences),
            kw.get("scheme", self.scheme),
            kw.get("quality", self.quality),
            kw.get("domain_tag", self.domain_tag),
        )

    def subset(self, indices: Sequence[int]) -> "Corpus":
        return self.replace([self.sentences[i] for i in indices])


def encode_bio(spans: Iterable, length: int, scheme: TagScheme) -> list[str]:
    """Tag sequence of ``length`` with B-X on span heads and I-X inside."""
    spans = validate_spans(spans, length, scheme)
    tags = ["O"] * length
    for start, end, etype in spans:
        tags[start] = f"B-{etype}"
        for i in range(start + 1, end):
            tags[i] = f"I-{etype}"
    return tags


def encode_bio_indices(spans: Iterable, length: int, scheme: TagScheme) -> list[int]:
    return [scheme.label_index(t) for t in encode_bio(spans, length, scheme)]


def decode_bio(tags: Sequence[str], scheme: TagScheme) -> list[EntitySpan]:
    """Spans encoded by ``tags``.

    An ``I-X`` that does not continue a span of type X opens a new span, so
    every in-scheme sequence decodes to a valid flat span list.
    """
    for t in tags:
        scheme.label_index(t)
    spans = []
    start = etype = None
    for i, tag in enumerate(tags):
        if tag == "O":
            if etype is not None:
                spans.append(EntitySpan(start, i, etype))
            start = etype = None
            continue
        prefix, t = tag[0], tag[2:]
        if prefix == "I" and etype == t:
            continue
        if etype is not None:
            spans.append(EntitySpan(start, i, etype))
        start, etype = i, t
    if etype is not None:
        spans.append(EntitySpan(start, len(tags), etype))
    return spans


def decode_bio_indices(indices: Sequence[int], scheme: TagScheme) -> list[EntitySpan]:
    labels = scheme.labels
    return decode_bio([labels[int(i)] for i in indices], scheme)
