"""Corpus IO, sentence filtering, corpus statistics and the Monte Carlo splitter."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import _accel
from .core import (
    COVIDNEWS,
    Corpus,
    EntitySpan,
    Sentence,
    TagScheme,
    ValidationError,
    decode_bio,
    encode_bio,
)

logger = logging.getLogger(__name__)

FORMATS = ("bio-columns", "json-lines")


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temp file and rename, never leaving a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _parse_span_record(rec, lineno, scheme):
    if not isinstance(rec, (list, tuple)) or len(rec) != 3:
        raise ValidationError(f"line {lineno}: span record must be [start, end, type], got {rec!r}")
    start, end, etype = rec
    if etype not in scheme:
        raise ValidationError(f"line {lineno}: unknown entity type {etype!r}")
    return EntitySpan(int(start), int(end), str(etype))


def _read_jsonl(lines, scheme):
    sentences = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValidationError(f"line {lineno}: malformed JSON ({e.msg})") from None
        if not isinstance(obj, dict) or "tokens" not in obj:
            raise ValidationError(f"line {lineno}: record needs a 'tokens' array")
        unknown = set(obj) - {"tokens", "gold_spans", "weak_spans", "spans", "origin_language"}
        if unknown:
            raise ValidationError(f"line {lineno}: unknown keys {sorted(unknown)}")
        gold = obj.get("gold_spans", obj.get("spans"))
        weak = obj.get("weak_spans")
        try:
            sentences.append(Sentence(
                tuple(obj["tokens"]),
                None if gold is None else [_parse_span_record(r, lineno, scheme) for r in gold],
                None if weak is None else [_parse_span_record(r, lineno, scheme) for r in weak],
                obj.get("origin_language"),
            ))
        except ValidationError as e:
            raise ValidationError(f"line {lineno}: {e}") from None
    return sentences


def _read_columns(lines, scheme, source):
    sentences = []
    tokens, tags = [], []

    def flush():
        if tokens:
            spans = decode_bio(tags, scheme)
            sentences.append(Sentence(tuple(tokens)).with_spans(source, spans))
            tokens.clear()
            tags.clear()

    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\n").rstrip("\r")
        if not line.strip():
            flush()
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValidationError(f"line {lineno}: expected 'token TAG', got {line!r}")
        tok, tag = parts
        if tag != "O":
            if len(tag) < 3 or tag[1] != "-" or tag[0] not in "BI":
                raise ValidationError(f"line {lineno}: malformed tag {tag!r}")
            if tag[2:] not in scheme:
                raise ValidationError(f"line {lineno}: unknown entity type {tag[2:]!r}")
        tokens.append(tok)
        tags.append(tag)
    flush()
    return sentences


def read_corpus(path, format: str = "json-lines", scheme: TagScheme = COVIDNEWS,
                quality: str = "strong", domain_tag: Optional[str] = None,
                source: str = "gold") -> Corpus:
    """Load a corpus.

    ``source`` says which label slot the single tag column of a
    ``bio-columns`` file fills; json-lines records carry both slots explicitly.
    """
    if format not in FORMATS:
        raise ValidationError(f"format must be one of {FORMATS}, got {format!r}")
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    if format == "json-lines":
        sentences = _read_jsonl(lines, scheme)
    else:
        sentences = _read_columns(lines, scheme, source)
    return Corpus(tuple(sentences), scheme, quality, domain_tag if domain_tag is not None else path.stem)


def dumps_corpus(corpus: Corpus, format: str = "json-lines", source: str = "gold") -> str:
    if format not in FORMATS:
        raise ValidationError(f"format must be one of {FORMATS}, got {format!r}")
    buf = io.StringIO()
    if format == "json-lines":
        for s in corpus:
            rec = {"tokens": list(s.tokens)}
            if s.gold_spans is not None:
                rec["gold_spans"] = [list(sp) for sp in s.gold_spans]
            if s.weak_spans is not None:
                rec["weak_spans"] = [list(sp) for sp in s.weak_spans]
            if s.origin_language is not None:
                rec["origin_language"] = s.origin_language
            buf.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")))
            buf.write("\n")
    else:
        for i, s in enumerate(corpus):
            if i:
                buf.write("\n")
            for tok, tag in zip(s.tokens, encode_bio(s.spans(source), len(s), corpus.scheme)):
                if not tok or any(c.isspace() for c in tok):
                    raise ValidationError(f"sentence {i}: token {tok!r} cannot be written as a column")
                buf.write(f"{tok} {tag}\n")
    return buf.getvalue()


def write_corpus(corpus: Corpus, path, format: str = "json-lines", source: str = "gold") -> None:
    atomic_write_text(path, dumps_corpus(corpus, format, source))


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------

FILTER_RULES = ("length-words", "length-chars-min", "length-chars-max", "non-ascii", "duplicate", "predicate")

_WS = re.compile(r"\s+")
_PRINTABLE_ASCII = re.compile(r"^[\x20-\x7e]*$")


@dataclass(frozen=True)
class FilterConfig:
    min_words: int = 4
    min_chars: int = 15
    max_chars: int = 500
    reject_non_ascii: bool = True
    dedupe: bool = True
    quality_predicate: Optional[Callable[[Sentence], bool]] = None

    def __post_init__(self):
        if self.min_words < 1:
            raise ValidationError("min_words must be >= 1")
        if not self.min_chars < self.max_chars:
            raise ValidationError("min_chars must be < max_chars")


def _first_failing_rule(sentence: Sentence, cfg: FilterConfig, seen: set) -> Optional[str]:
    text = sentence.text
    if len(sentence.tokens) < cfg.min_words:
        return "length-words"
    if len(text) < cfg.min_chars:
        return "length-chars-min"
    if len(text) > cfg.max_chars:
        return "length-chars-max"
    if cfg.reject_non_ascii and not _PRINTABLE_ASCII.match(text):
        return "non-ascii"
    if cfg.dedupe and _WS.sub(" ", text).strip() in seen:
        return "duplicate"
    if cfg.quality_predicate is not None and not cfg.quality_predicate(sentence):
        return "predicate"
    return None


def filter_corpus(corpus: Corpus, config: FilterConfig = FilterConfig()) -> tuple[Corpus, dict]:
    """Keep sentences passing every enabled rule.

    Each rejection is attributed to the first failing rule in
    :data:`FILTER_RULES` order. Only kept sentences count as "seen" for
    duplicate detection, so a duplicate of a rejected sentence may survive.
    """
    report = {rule: 0 for rule in FILTER_RULES}
    kept, seen = [], set()
    for s in corpus:
        rule = _first_failing_rule(s, config, seen)
        if rule is None:
            kept.append(s)
            seen.add(_WS.sub(" ", s.text).strip())
        else:
            report[rule] += 1
    return corpus.replace(kept), report


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

STATS_ROWS = (
    ("total_entries", "Total Entries (Sentences)"),
    ("total_words", "Total Words"),
    ("total_labelled_words", "Total Labelled Words"),
    ("total_entities", "Total Entities"),
    ("mean_entity_length", "Mean Entity Length"),
    ("percent_labelled_words", "Percent Labelled Words"),
    ("mean_entities_per_entry", "Mean Entities Per Entry"),
)


@dataclass(frozen=True)
class CorpusStats:
    total_entries: int
    total_words: int
    total_labelled_words: int
    total_entities: int
    mean_entity_length: float
    percent_labelled_words: float
    mean_entities_per_entry: float

    def formatted(self) -> dict:
        """Values rendered as in the published statistics table."""
        return {
            "total_entries": str(self.total_entries),
            "total_words": str(self.total_words),
            "total_labelled_words": str(self.total_labelled_words),
            "total_entities": str(self.total_entities),
            "mean_entity_length": f"{self.mean_entity_length:.2f}",
            "percent_labelled_words": f"{self.percent_labelled_words:.1f}%",
            "mean_entities_per_entry": f"{self.mean_entities_per_entry:.2f}",
        }


def _require_source(corpus: Corpus, label_source: str):
    if not corpus.has_source(label_source):
        raise ValidationError(f"corpus is missing {label_source} labels on some sentences")


def corpus_stats(corpus: Corpus, label_source: str = "gold") -> CorpusStats:
    _require_source(corpus, label_source)
    entries = len(corpus)
    words = sum(len(s) for s in corpus)
    labelled = entities = 0
    for s in corpus:
        for sp in s.spans(label_source):
            labelled += sp.end - sp.start
            entities += 1
    return CorpusStats(
        total_entries=entries,
        total_words=words,
        total_labelled_words=labelled,
        total_entities=entities,
        mean_entity_length=labelled / entities if entities else 0.0,
        percent_labelled_words=100.0 * labelled / words if words else 0.0,
        mean_entities_per_entry=entities / entries if entries else 0.0,
    )


def entity_counts(corpus: Corpus, label_source: str = "gold") -> dict[str, int]:
    _require_source(corpus, label_source)
    counts = {t: 0 for t in corpus.scheme.types}
    for s in corpus:
        for sp in s.spans(label_source):
            counts[sp.etype] += 1
    return counts


def format_stats_table(columns: dict[str, CorpusStats]) -> str:
    """Aligned text table with one column per named corpus."""
    header = ["Metric", *columns]
    rows = [[label, *(c.formatted()[key] for c in columns.values())] for key, label in STATS_ROWS]
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    lines = []
    for r in [header, *rows]:
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"


def stats_csv(columns: dict[str, CorpusStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Metric", *columns])
    for key, label in STATS_ROWS:
        w.writerow([label, *(c.formatted()[key] for c in columns.values())])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Monte Carlo entity-stratified split
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    sizes: tuple[int, ...]
    iterations: int = 10000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if any(s < 0 for s in self.sizes):
            raise ValidationError("split sizes must be non-negative")


def default_split_sizes(n: int) -> tuple[int, int, int]:
    """70/10/20 partition sizes for ``n`` entries (2100/300/600 at n = 3000)."""
    train = round(0.7 * n)
    val = round(0.1 * n)
    return train, val, n - train - val


def type_count_matrix(corpus: Corpus, label_source: str) -> np.ndarray:
    """(N, K) per-sentence entity counts by scheme type."""
    _require_source(corpus, label_source)
    col = {t: k for k, t in enumerate(corpus.scheme.types)}
    m = np.zeros((len(corpus), len(col)))
    for i, s in enumerate(corpus):
        for sp in s.spans(label_source):
            m[i, col[sp.etype]] += 1
    return m


def candidate_permutations(n: int, iterations: int, seed: int):
    """Yield the candidate shuffles in enumeration order."""
    rng = np.random.default_rng(seed)
    for _ in range(iterations):
        yield rng.permutation(n)


def score_candidates(corpus: Corpus, spec: SplitSpec, label_source: str = "gold",
                     chunk: int = 512) -> np.ndarray:
    """Deviation score of every candidate in enumeration order."""
    n = len(corpus)
    if sum(spec.sizes) != n:
        raise ValidationError(f"split sizes {spec.sizes} sum to {sum(spec.sizes)}, corpus has {n}")
    counts = type_count_matrix(corpus, label_source)
    bounds = np.concatenate([[0], np.cumsum(spec.sizes)]).astype(np.int64)
    expected = np.array(spec.sizes, dtype=np.float64) / n if n else np.zeros(len(spec.sizes))
    scores = np.empty(spec.iterations)
    buf = []
    done = 0
    for perm in candidate_permutations(n, spec.iterations, spec.seed):
        buf.append(perm)
        if len(buf) == chunk:
            scores[done:done + chunk] = _accel.split_scores(np.stack(buf), counts, bounds, expected)
            done += chunk
            buf = []
    if buf:
        perms = np.stack(buf) if n else np.zeros((len(buf), 0), dtype=np.int64)
        scores[done:] = _accel.split_scores(perms, counts, bounds, expected)
    return scores


def monte_carlo_split(corpus: Corpus, spec: SplitSpec, label_source: str = "gold") -> tuple[Corpus, ...]:
    """Best of ``spec.iterations`` seeded random splits by per-type proportionality.

    A candidate scores sum over types t and partitions p of
    ``|count(t, p) / count(t) - size(p) / N|``. The lowest score wins, ties
    going to the earliest candidate. Sentences keep their corpus order within
    each partition.
    """
    scores = score_candidates(corpus, spec, label_source)
    best = int(np.argmin(scores))
    logger.info("split: best candidate %d of %d, score %.6f (median %.6f)",
                best, spec.iterations, scores[best], float(np.median(scores)))
    *_, perm = candidate_permutations(len(corpus), best + 1, spec.seed)
    bounds = np.concatenate([[0], np.cumsum(spec.sizes)])
    parts = []
    for p in range(len(spec.sizes)):
        idx = np.sort(perm[bounds[p]:bounds[p + 1]])
        parts.append(corpus.subset([int(i) for i in idx]))
    return tuple(parts)
