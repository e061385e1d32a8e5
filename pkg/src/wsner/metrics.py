"""Span-level precision/recall/F1, pairwise agreement and per-language breakdowns.

Matching is exact: a predicted span counts only if a gold span with the same
start, end and type exists in the same sentence. All scores are percentages.
"""
from __future__ import annotations

import csv
import io
import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import LANGUAGES, Corpus, ValidationError

logger = logging.getLogger(__name__)


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass(frozen=True)
class PRFReport:
    """per_type maps type -> (precision, recall, f1, support)."""

    per_type: dict
    micro: tuple
    weighted_avg: tuple
    counts: dict = field(default_factory=dict, compare=False)

    @property
    def support(self) -> int:
        return sum(row[3] for row in self.per_type.values())


@dataclass(frozen=True)
class AgreementReport:
    mean_f1: float
    std_dev: float
    pair_scores: list


def _count(pred_lists, gold_lists):
    tp, n_pred, n_gold = Counter(), Counter(), Counter()
    for i, (pred, gold) in enumerate(zip(pred_lists, gold_lists)):
        gold_set = set(gold)
        for sp in set(pred):
            n_pred[sp[2]] += 1
            if sp in gold_set:
                tp[sp[2]] += 1
        for sp in gold_set:
            n_gold[sp[2]] += 1
    return tp, n_pred, n_gold


def prf_from_span_lists(pred_lists: Sequence, gold_lists: Sequence, types: Sequence[str]) -> PRFReport:
    """PRF over aligned per-sentence span lists.

    Per-type precision is taken over predicted spans of that type and recall
    over gold spans of that type; the weighted average weights each type's
    scores by its gold support.
    """
    if len(pred_lists) != len(gold_lists):
        raise ValidationError(f"{len(pred_lists)} predicted sentences vs {len(gold_lists)} gold")
    tp, n_pred, n_gold = _count(pred_lists, gold_lists)
    extra = sorted((set(n_pred) | set(n_gold)) - set(types))
    per_type = {}
    for t in [*types, *extra]:
        p = 100.0 * tp[t] / n_pred[t] if n_pred[t] else 0.0
        r = 100.0 * tp[t] / n_gold[t] if n_gold[t] else 0.0
        per_type[t] = (p, r, f1_score(p, r), n_gold[t])
    T, P, G = sum(tp.values()), sum(n_pred.values()), sum(n_gold.values())
    mp = 100.0 * T / P if P else 0.0
    mr = 100.0 * T / G if G else 0.0
    if G:
        weighted = tuple(sum(row[k] * row[3] for row in per_type.values()) / G for k in range(3))
    else:
        weighted = (0.0, 0.0, 0.0)
    return PRFReport(per_type, (mp, mr, f1_score(mp, mr)), weighted,
                     {"tp": T, "pred": P, "gold": G})


def _check_aligned(a: Corpus, b: Corpus):
    if len(a) != len(b):
        raise ValidationError(f"corpora differ in length: {len(a)} vs {len(b)}")
    for i, (x, y) in enumerate(zip(a, b)):
        if x.tokens != y.tokens:
            raise ValidationError(f"sentence {i} is not aligned (tokens differ)")


def span_prf(pred: Corpus, gold: Corpus, pred_source: str = "weak", gold_source: str = "gold") -> PRFReport:
    """Exact-match span PRF of ``pred``'s ``pred_source`` labels against ``gold``."""
    _check_aligned(pred, gold)
    return prf_from_span_lists(pred.span_lists(pred_source), gold.span_lists(gold_source), gold.scheme.types)


def pairwise_agreement(annotations: Sequence[Sequence], population: bool = True) -> AgreementReport:
    """Mean and std of micro span F1 over every unordered pair of annotations.

    Each annotation is a sequence of per-sentence span lists over the same
    sentences. Std is the population std unless ``population`` is false.
    """
    if len(annotations) < 2:
        raise ValidationError("pairwise agreement needs at least two annotations")
    n = len(annotations[0])
    for k, a in enumerate(annotations):
        if len(a) != n:
            raise ValidationError(f"annotation {k} covers {len(a)} sentences, expected {n}")
    scores = []
    for a, b in itertools.combinations(annotations, 2):
        tp, n_pred, n_gold = _count(a, b)
        T, P, G = sum(tp.values()), sum(n_pred.values()), sum(n_gold.values())
        p = 100.0 * T / P if P else 0.0
        r = 100.0 * T / G if G else 0.0
        scores.append(f1_score(p, r))
    arr = np.asarray(scores)
    std = float(arr.std(ddof=0 if population or len(arr) == 1 else 1))
    return AgreementReport(float(arr.mean()), std, scores)


def compare_by_language(weak: Corpus, strong: Corpus, weak_source: str = "weak",
                        gold_source: str = "gold") -> dict[str, tuple[int, PRFReport]]:
    """PRF of weak against strong labels, combined and per origin language.

    Returns ``{"Combined": (entries, report), language: (entries, report), ...}``.
    Languages with no sentences are left out with a warning.
    """
    _check_aligned(weak, strong)
    langs = [s.origin_language for s in strong]
    if any(l is None for l in langs):
        raise ValidationError("every sentence needs an origin_language tag")
    out = {"Combined": (len(strong), span_prf(weak, strong, weak_source, gold_source))}
    present = set(langs)
    for lang in LANGUAGES:
        if lang not in present:
            logger.warning("no sentences with origin language %s; row omitted", lang)
    ordered = [l for l in LANGUAGES if l in present] + sorted(present - set(LANGUAGES))
    for lang in ordered:
        idx = [i for i, l in enumerate(langs) if l == lang]
        out[lang] = (len(idx), span_prf(weak.subset(idx), strong.subset(idx), weak_source, gold_source))
    return out


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

def _align(rows, right_from=1):
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join(
        "  ".join(c.ljust(w) if i < right_from else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
        for r in rows) + "\n"


def _to_csv(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def prf_rows(report: PRFReport) -> list[list[str]]:
    rows = [["Entity Type", "Pre.", "Rec.", "F1", "Support"]]
    for t, (p, r, f, n) in report.per_type.items():
        rows.append([t, f"{p:.1f}", f"{r:.1f}", f"{f:.1f}", str(n)])
    p, r, f = report.weighted_avg
    rows.append(["Weighted Avg", f"{p:.1f}", f"{r:.1f}", f"{f:.1f}", str(report.support)])
    return rows


def format_prf_table(report: PRFReport) -> str:
    return _align(prf_rows(report))


def prf_csv(report: PRFReport) -> str:
    return _to_csv(prf_rows(report))


def agreement_rows(named: dict[str, AgreementReport]) -> list[list[str]]:
    rows = [["Test", "F1", "Std. Dev"]]
    for name, rep in named.items():
        std = "-" if len(rep.pair_scores) == 1 else f"{rep.std_dev:.2f}"
        rows.append([name, f"{rep.mean_f1:.1f}", std])
    return rows


def format_agreement_table(named: dict[str, AgreementReport]) -> str:
    return _align(agreement_rows(named))


def language_rows(by_lang: dict) -> list[list[str]]:
    rows = [["Entry Language", "Entries", "Pre.", "Rec.", "F1"]]
    for lang, (n, rep) in by_lang.items():
        p, r, f = rep.weighted_avg
        rows.append([lang, str(n), f"{p:.1f}", f"{r:.1f}", f"{f:.1f}"])
    return rows


def format_language_table(by_lang: dict) -> str:
    return _align(language_rows(by_lang))
