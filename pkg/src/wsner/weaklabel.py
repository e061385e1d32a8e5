"""Weak labelling: a gazetteer/regex rule engine, gold-label corruption and
template-based synthetic corpora.

The rule engine is a small stand-in for production rule systems: rules match
token sequences, and overlapping matches are resolved longest first, then by
priority, then leftmost.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .config import build, load_yaml
from .core import (
    COVIDNEWS,
    Corpus,
    EntitySpan,
    Sentence,
    TagScheme,
    ValidationError,
)


# ---------------------------------------------------------------------------
# rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rule:
    """One labelling rule.

    Exactly one of ``phrase`` (a literal token sequence) or ``pattern``
    (whitespace-separated per-token regular expressions, each matched
    against a whole token) must be given.
    """

    etype: str
    phrase: Optional[tuple[str, ...]] = None
    pattern: Optional[str] = None
    priority: int = 0
    case_sensitive: bool = True
    _compiled: tuple = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if (self.phrase is None) == (self.pattern is None):
            raise ValidationError(f"rule for {self.etype!r} needs exactly one of phrase or pattern")
        if self.phrase is not None:
            phrase = tuple(self.phrase.split()) if isinstance(self.phrase, str) else tuple(self.phrase)
            if not phrase:
                raise ValidationError(f"rule for {self.etype!r} has an empty phrase")
            object.__setattr__(self, "phrase", phrase)
            key = phrase if self.case_sensitive else tuple(t.lower() for t in phrase)
            object.__setattr__(self, "_compiled", key)
        else:
            parts = self.pattern.split()
            if not parts:
                raise ValidationError(f"rule for {self.etype!r} has an empty pattern")
            flags = 0 if self.case_sensitive else re.IGNORECASE
            try:
                compiled = tuple(re.compile(p, flags) for p in parts)
            except re.error as e:
                raise ValidationError(f"rule {self.pattern!r} ({self.etype}): bad pattern: {e}") from None
            object.__setattr__(self, "_compiled", compiled)

    @property
    def width(self) -> int:
        return len(self._compiled)

    def matches(self, tokens: Sequence[str]):
        """Yield start offsets where the rule matches ``tokens``."""
        n = self.width
        if self.phrase is not None:
            toks = tokens if self.case_sensitive else [t.lower() for t in tokens]
            for i in range(len(toks) - n + 1):
                if tuple(toks[i:i + n]) == self._compiled:
                    yield i
        else:
            for i in range(len(tokens) - n + 1):
                if all(rx.fullmatch(tokens[i + j]) for j, rx in enumerate(self._compiled)):
                    yield i


def load_rules(path, scheme: TagScheme = COVIDNEWS) -> list[Rule]:
    """Read a json-lines rule file (``phrase`` or ``pattern``, ``type``, ``priority``, ``case_sensitive``)."""
    rules = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
            unknown = set(obj) - {"phrase", "pattern", "type", "priority", "case_sensitive"}
            if unknown:
                raise ValidationError(f"{path}:{lineno}: unknown keys {sorted(unknown)}")
            if obj.get("type") not in scheme:
                raise ValidationError(f"{path}:{lineno}: unknown entity type {obj.get('type')!r}")
            try:
                rules.append(Rule(obj["type"], obj.get("phrase"), obj.get("pattern"),
                                  int(obj.get("priority", 0)), bool(obj.get("case_sensitive", True))))
            except ValidationError as e:
                raise ValidationError(f"{path}:{lineno}: {e}") from None
    return rules


def apply_rules(sentence: Sentence, rules: Sequence[Rule]) -> list[EntitySpan]:
    """Non-overlapping weak spans for ``sentence``.

    Candidates are accepted greedily in order of (longest, highest priority,
    leftmost, type name), which makes the result independent of rule order.
    """
    cands = set()
    for r in rules:
        for start in r.matches(sentence.tokens):
            cands.add((start, start + r.width, r.etype, r.priority))
    ordered = sorted(cands, key=lambda c: (-(c[1] - c[0]), -c[3], c[0], c[2]))
    taken = [False] * len(sentence)
    out = []
    for start, end, etype, _ in ordered:
        if any(taken[start:end]):
            continue
        taken[start:end] = [True] * (end - start)
        out.append(EntitySpan(start, end, etype))
    return sorted(out)


def label_corpus(corpus: Corpus, rules: Sequence[Rule]) -> Corpus:
    """Attach rule-produced weak spans to every sentence."""
    for r in rules:
        if r.etype not in corpus.scheme:
            raise ValidationError(f"rule type {r.etype!r} not in scheme {corpus.scheme.types}")
    return corpus.replace([s.with_spans("weak", apply_rules(s, rules)) for s in corpus], quality="weak")


# ---------------------------------------------------------------------------
# gold corruption
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseProfile:
    miss_rate: float = 0.0
    truncate_rate: float = 0.0
    confusion: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        for name in ("miss_rate", "truncate_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")
        conf = {}
        for src, row in dict(self.confusion).items():
            row = {str(k): float(v) for k, v in dict(row).items()}
            if any(not 0.0 <= v <= 1.0 for v in row.values()):
                raise ValidationError(f"confusion row {src!r} has a probability outside [0, 1]")
            if abs(sum(row.values()) - 1.0) > 1e-9:
                raise ValidationError(f"confusion row {src!r} sums to {sum(row.values())}, not 1")
            conf[str(src)] = row
        object.__setattr__(self, "confusion", conf)

    @classmethod
    def from_file(cls, path) -> "NoiseProfile":
        return build(cls, load_yaml(path), str(path))

    def check_scheme(self, scheme: TagScheme) -> None:
        for src, row in self.confusion.items():
            for t in (src, *row):
                if t not in scheme:
                    raise ValidationError(f"noise profile references type {t!r} not in scheme")


def _corrupt_spans(spans, profile: NoiseProfile, rng) -> list[EntitySpan]:
    out = []
    for sp in spans:
        # fixed four draws per span keep the stream aligned whatever branch is taken
        u_miss, u_trunc, u_len, u_type = rng.random(4)
        if u_miss < profile.miss_rate:
            continue
        end = sp.end
        length = sp.end - sp.start
        if length > 1 and u_trunc < profile.truncate_rate:
            end = sp.start + 1 + int(u_len * (length - 1))
        etype = sp.etype
        row = profile.confusion.get(sp.etype)
        if row:
            acc = 0.0
            for t, p in row.items():
                acc += p
                if u_type < acc:
                    etype = t
                    break
        out.append(EntitySpan(sp.start, end, etype))
    return out


def corrupt_gold(corpus: Corpus, profile: NoiseProfile) -> Corpus:
    """Derive weak labels from gold ones by dropping, truncating and retyping spans.

    Each sentence uses its own RNG stream seeded by (profile.seed, index),
    so the result does not depend on processing order.
    """
    profile.check_scheme(corpus.scheme)
    if not corpus.has_source("gold"):
        raise ValidationError("corrupt_gold needs gold spans on every sentence")
    out = []
    for i, s in enumerate(corpus):
        rng = np.random.default_rng([profile.seed, i])
        out.append(s.with_spans("weak", _corrupt_spans(s.gold_spans, profile, rng)))
    return corpus.replace(out, quality="weak")


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------

_SLOT = re.compile(r"^\{([A-Za-z_][A-Za-z0-9_]*)\}$")


@dataclass(frozen=True)
class SynthSpec:
    """Template grammar for synthetic gold-labelled corpora.

    Template tokens of the form ``{Type}`` are slots filled with a phrase
    drawn uniformly from ``gazetteers[Type]``; the phrase lists set the
    entity length distribution. ``scheme`` defaults to the ten-type
    outbreak-news scheme; ``languages`` optionally assigns origin tags with
    the given weights.
    """

    sentence_count: int
    templates: tuple[str, ...]
    gazetteers: Mapping[str, Sequence[str]]
    target_entities_per_entry: float
    seed: int = 0
    scheme: Optional[tuple[str, ...]] = None
    languages: Optional[Mapping[str, float]] = None

    def __post_init__(self):
        if self.sentence_count < 0:
            raise ValidationError("sentence_count must be >= 0")
        object.__setattr__(self, "templates", tuple(self.templates))
        if not self.templates:
            raise ValidationError("at least one template is required")
        gaz = {str(k): tuple(tuple(str(p).split()) for p in v) for k, v in dict(self.gazetteers).items()}
        object.__setattr__(self, "gazetteers", gaz)
        scheme = self.tag_scheme
        for k in gaz:
            if k not in scheme:
                raise ValidationError(f"gazetteer type {k!r} not in scheme {scheme.types}")
        for tpl in self.templates:
            for slot in self.slots(tpl):
                if slot not in scheme:
                    raise ValidationError(f"template slot {{{slot}}} is not a scheme type: {tpl!r}")
                if not gaz.get(slot) or any(not p for p in gaz[slot]):
                    raise ValidationError(f"template slot {{{slot}}} has no usable gazetteer: {tpl!r}")
        counts = [len(self.slots(t)) for t in self.templates]
        if self.sentence_count and not min(counts) <= self.target_entities_per_entry <= max(counts):
            raise ValidationError(
                f"target_entities_per_entry {self.target_entities_per_entry} outside the "
                f"range [{min(counts)}, {max(counts)}] the templates can realise")

    @property
    def tag_scheme(self) -> TagScheme:
        return TagScheme(tuple(self.scheme)) if self.scheme else COVIDNEWS

    @staticmethod
    def slots(template: str) -> list[str]:
        return [m.group(1) for m in map(_SLOT.match, template.split()) if m]

    @classmethod
    def from_file(cls, path, **overrides) -> "SynthSpec":
        return build(cls, load_yaml(path), str(path), **overrides)


def _tilted_weights(counts: np.ndarray, target: float) -> np.ndarray:
    """Template weights proportional to exp(lam * slots) with mean slots equal to target."""
    if counts.min() == counts.max():
        return np.full(len(counts), 1.0 / len(counts))

    def mean(lam):
        w = np.exp(lam * (counts - counts.max()))
        return float((w * counts).sum() / w.sum())

    lo, hi = -50.0, 50.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean(mid) < target:
            lo = mid
        else:
            hi = mid
    w = np.exp(0.5 * (lo + hi) * (counts - counts.max()))
    return w / w.sum()


def generate_synthetic(spec: SynthSpec, domain_tag: str = "synthetic") -> Corpus:
    """Gold-labelled corpus of ``spec.sentence_count`` template instantiations."""
    scheme = spec.tag_scheme
    counts = np.array([len(spec.slots(t)) for t in spec.templates], dtype=float)
    weights = _tilted_weights(counts, spec.target_entities_per_entry)
    split_templates = [t.split() for t in spec.templates]
    langs = list(spec.languages or {})
    lang_p = None
    if langs:
        lang_p = np.array([spec.languages[k] for k in langs], dtype=float)
        lang_p /= lang_p.sum()
    rng = np.random.default_rng(spec.seed)
    sentences = []
    for _ in range(spec.sentence_count):
        tpl = split_templates[rng.choice(len(split_templates), p=weights)]
        tokens, spans = [], []
        for tok in tpl:
            m = _SLOT.match(tok)
            if m:
                phrases = spec.gazetteers[m.group(1)]
                phrase = phrases[rng.integers(len(phrases))]
                spans.append(EntitySpan(len(tokens), len(tokens) + len(phrase), m.group(1)))
                tokens.extend(phrase)
            else:
                tokens.append(tok)
        lang = langs[rng.choice(len(langs), p=lang_p)] if langs else None
        sentences.append(Sentence(tuple(tokens), spans, None, lang))
    return Corpus(tuple(sentences), scheme, "strong", domain_tag)


def harvest_gazetteers(corpus: Corpus, source: str = "gold") -> dict[str, list[tuple[str, ...]]]:
    """Distinct entity phrases per type, in first-seen order."""
    gaz: dict[str, dict] = {t: {} for t in corpus.scheme.types}
    for s in corpus:
        for sp in s.spans(source):
            gaz[sp.etype].setdefault(tuple(s.tokens[sp.start:sp.end]), None)
    return {t: list(v) for t, v in gaz.items()}
