"""Resumable sweep over backbone variants, weak sizes, strong sizes and seeds.

Each grid cell trains one staged pipeline and scores it on a held-out test
corpus. Completed cells are written as one JSON file each and their keys
appended to a plain-text ledger, so an interrupted sweep picks up where it
stopped and produces the same CSV as an uninterrupted one.

Weak-stage models ("backbones") are cached per (variant, weak size, seed) and
shared by every strong size of that triple.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import build, check_keys, load_yaml, resource_path
from .core import WIKIGOLD, Corpus, ValidationError
from .data import atomic_write_text, read_corpus, write_corpus
from .model import ModelConfig, build_vocab, load_params, save_params
from .train import Stage, StagePlan, TrainConfig, _evaluate, run_controster
from .weaklabel import NoiseProfile, SynthSpec, corrupt_gold, generate_synthetic

logger = logging.getLogger(__name__)

VARIANTS = ("none", "indomain_weak", "ood_weak+indomain_weak")
WEAK_PHASES = frozenset({"noise_robust", "ensemble", "self_train"})
BASE_COLUMNS = ["variant", "weak_size", "strong_size", "seed", "precision", "recall", "f1"]


@dataclass(frozen=True)
class ExperimentGrid:
    variants: tuple = VARIANTS
    weak_sizes: tuple = (3000,)
    strong_sizes: tuple = (100,)
    seeds: tuple = (1, 2, 3, 4, 5)

    def __post_init__(self):
        for name in ("variants", "weak_sizes", "strong_sizes", "seeds"):
            v = tuple(getattr(self, name))
            if not v:
                raise ValidationError(f"grid axis {name} is empty")
            object.__setattr__(self, name, v)
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ValidationError(f"unknown variants {bad}; choose from {VARIANTS}")
        for name in ("weak_sizes", "strong_sizes"):
            if any(int(n) != n or n < 0 for n in getattr(self, name)):
                raise ValidationError(f"{name} must be non-negative integers")

    def cells(self) -> list[tuple]:
        """(variant, weak_size, strong_size, seed) in sweep order.

        The no-backbone variant ignores the weak axis and is listed once per
        strong size with weak_size 0; cells that would train on nothing are
        left out.
        """
        out = []
        for variant in self.variants:
            weak_sizes = (0,) if variant == "none" else self.weak_sizes
            for w in weak_sizes:
                for s in self.strong_sizes:
                    if s == 0 and (variant == "none" or w == 0):
                        continue
                    for seed in self.seeds:
                        cell = (variant, int(w), int(s), int(seed))
                        if cell not in out:
                            out.append(cell)
        return out


def cell_key(cell) -> str:
    variant, w, s, seed = cell
    return f"{variant}__w{w}__s{s}__seed{seed}"


# ---------------------------------------------------------------------------
# benchmark corpora
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkCorpora:
    """In-domain weak pool, in-domain strong pool, gold test set, optional OOD weak corpus."""

    weak: Corpus
    strong: Corpus
    test: Corpus
    ood: Optional[Corpus] = None

    FILES = {"weak": "weak.jsonl", "strong": "strong.jsonl", "test": "test.jsonl", "ood": "ood.jsonl"}

    def write(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name, fname in self.FILES.items():
            corpus = getattr(self, name)
            if corpus is not None:
                write_corpus(corpus, d / fname)

    @classmethod
    def read(cls, directory, ood_scheme=WIKIGOLD) -> "BenchmarkCorpora":
        d = Path(directory)
        missing = [f for n, f in cls.FILES.items() if n != "ood" and not (d / f).exists()]
        if missing:
            raise ValidationError(f"benchmark directory {d} lacks {missing}")
        ood = d / cls.FILES["ood"]
        return cls(
            read_corpus(d / cls.FILES["weak"], quality="weak", domain_tag="indomain_weak"),
            read_corpus(d / cls.FILES["strong"], quality="strong", domain_tag="strong"),
            read_corpus(d / cls.FILES["test"], quality="strong", domain_tag="test"),
            read_corpus(ood, scheme=ood_scheme, quality="weak", domain_tag="ood_weak") if ood.exists() else None,
        )

    def training_vocab(self, config: ModelConfig):
        """One vocabulary over every training pool, so cached backbones fit any cell."""
        pools = [c for c in (self.ood, self.weak, self.strong) if c is not None]
        return build_vocab(pools, config.min_freq, config.lowercase)


@dataclass(frozen=True)
class BenchmarkSpec:
    weak_pool: int = 3000
    strong_pool: int = 3000
    test: int = 600
    ood: int = 3000
    synth: str = "covid_synth.yaml"
    noise: str = "noise_profile.yaml"
    ood_synth: str = "ood_synth.yaml"
    ood_noise: str = "ood_noise_profile.yaml"


def _resource_or_path(name: str) -> Path:
    p = Path(name)
    return p if p.exists() else resource_path(name)


def build_benchmark(spec: BenchmarkSpec = BenchmarkSpec()) -> BenchmarkCorpora:
    """Generate the frozen synthetic benchmark.

    One in-domain corpus of ``max(weak_pool, strong_pool) + test`` sentences
    is generated; its first ``strong_pool`` sentences form the gold strong
    pool, the same leading sentences with corrupted labels form the weak pool
    (so weak and strong pools overlap the way a released weak-3k/strong-3k
    pair does), and the last ``test`` sentences are the test set.
    """
    n_train = max(spec.weak_pool, spec.strong_pool)
    synth = SynthSpec.from_file(_resource_or_path(spec.synth), sentence_count=n_train + spec.test)
    corpus = generate_synthetic(synth, domain_tag="synthetic")
    profile = NoiseProfile.from_file(_resource_or_path(spec.noise))
    weak = corrupt_gold(corpus.subset(range(spec.weak_pool)), profile)
    weak = weak.replace(domain_tag="indomain_weak")
    strong = corpus.subset(range(spec.strong_pool)).replace(quality="strong", domain_tag="strong")
    test = corpus.subset(range(n_train, n_train + spec.test)).replace(quality="strong", domain_tag="test")
    ood = None
    if spec.ood:
        ood_spec = SynthSpec.from_file(_resource_or_path(spec.ood_synth), sentence_count=spec.ood)
        ood_gold = generate_synthetic(ood_spec, domain_tag="ood")
        ood = corrupt_gold(ood_gold, NoiseProfile.from_file(_resource_or_path(spec.ood_noise)))
        ood = ood.replace(domain_tag="ood_weak")
    return BenchmarkCorpora(weak, strong, test, ood)


# ---------------------------------------------------------------------------
# cells
# ---------------------------------------------------------------------------

def sample_indices(pool_size: int, size: int, seed: int) -> np.ndarray:
    """First ``size`` entries of a seeded permutation: nested across sizes for one seed."""
    if size > pool_size:
        raise ValidationError(f"requested {size} sentences from a pool of {pool_size}")
    return np.random.default_rng(seed).permutation(pool_size)[:size]


def backbone_stages(data: BenchmarkCorpora, variant: str, weak_size: int, seed: int) -> list[Stage]:
    stages = []
    if variant == "ood_weak+indomain_weak":
        if data.ood is None:
            raise ValidationError(f"variant {variant} needs an out-of-domain weak corpus")
        stages.append(Stage(data.ood, WEAK_PHASES, name="ood_weak"))
    if variant != "none":
        if weak_size > len(data.weak):
            raise ValidationError(
                f"cell {variant}/w{weak_size}: weak pool has only {len(data.weak)} sentences")
        sub = data.weak.subset(sample_indices(len(data.weak), weak_size, seed))
        stages.append(Stage(sub, WEAK_PHASES, name="indomain_weak"))
    return stages


def strong_stage(data: BenchmarkCorpora, strong_size: int, seed: int) -> list[Stage]:
    if strong_size == 0:
        return []
    if strong_size > len(data.strong):
        raise ValidationError(f"strong size {strong_size} exceeds the strong pool ({len(data.strong)})")
    sub = data.strong.subset(sample_indices(len(data.strong), strong_size, seed + 7919))
    return [Stage(sub, frozenset({"noise_robust"}), name="strong")]


def _row(cell, report, types) -> dict:
    variant, w, s, seed = cell
    p, r, f = report.weighted_avg
    row = {"variant": variant, "weak_size": w, "strong_size": s, "seed": seed,
           "precision": round(p, 4), "recall": round(r, 4), "f1": round(f, 4)}
    for t in types:
        row[f"f1_{t}"] = round(report.per_type[t][2], 4)
    return row


def _run_group(args) -> list[tuple]:
    """Train one backbone (or load it) and finetune every strong size that shares it."""
    data, variant, weak_size, seed, cells, config, model_config, cache_dir = args
    vocab = data.training_vocab(model_config)
    cfg = replace(config, seed=seed)
    stages = backbone_stages(data, variant, weak_size, seed)
    backbone = None
    if stages:
        path = Path(cache_dir) / f"{variant}__w{weak_size}__seed{seed}.npz" if cache_dir else None
        if path is not None and path.exists():
            backbone = load_params(path)
            logger.info("loaded cached backbone %s", path.name)
        else:
            backbone, _ = run_controster(StagePlan(stages), cfg, model_config, vocab=vocab)
            if path is not None:
                save_params(backbone, path)
    out = []
    for cell in cells:
        strong = strong_stage(data, cell[2], seed)
        if strong:
            params, _ = run_controster(StagePlan(strong), cfg, model_config, init=backbone,
                                       vocab=vocab, seed_offset=len(stages))
        else:
            params = backbone
        report = _evaluate(params, data.test)
        out.append((cell, _row(cell, report, data.test.scheme.types)))
        logger.info("%s: F1 %.2f", cell_key(cell), report.weighted_avg[2])
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    grid: ExperimentGrid = field(default_factory=ExperimentGrid)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    benchmark: BenchmarkSpec = field(default_factory=BenchmarkSpec)
    workers: int = 1
    plot_format: str = "png"


def load_experiment_config(path=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read an experiment YAML (sections grid/train/model/benchmark); unknown keys are errors.

    Missing sections fall back to the packaged desk-scale preset.
    """
    preset = load_yaml(resource_path("desk_experiment.yaml"))
    raw = load_yaml(path) if path is not None else {}
    where = str(path) if path is not None else "experiment config"
    check_keys(raw, ["grid", "train", "model", "benchmark", "workers", "plot_format"], where)
    merged = {k: {**preset.get(k, {}), **raw.get(k, {})} for k in ("grid", "train", "model", "benchmark")}
    for k, v in (overrides or {}).items():
        merged[k].update(v)
    grid = merged["grid"]
    check_keys(grid, ["variants", "weak_sizes", "strong_sizes", "seeds"], f"{where}: grid")
    return ExperimentConfig(
        ExperimentGrid(**{k: tuple(v) for k, v in grid.items()}),
        build(TrainConfig, merged["train"], f"{where}: train"),
        build(ModelConfig, merged["model"], f"{where}: model"),
        build(BenchmarkSpec, merged["benchmark"], f"{where}: benchmark"),
        int(raw.get("workers", preset.get("workers", 1))),
        str(raw.get("plot_format", preset.get("plot_format", "png"))),
    )


def _columns(types) -> list[str]:
    return BASE_COLUMNS + [f"f1_{t}" for t in types]


def results_csv(rows: Sequence[dict], types) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=_columns(types), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def read_ledger(path) -> list[str]:
    p = Path(path)
    if not p.exists():
        return []
    return [line.strip() for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]


def run_experiment(config: ExperimentConfig, out_dir, data: Optional[BenchmarkCorpora] = None,
                   max_cells: Optional[int] = None) -> Path:
    """Run (or resume) the sweep; returns the path of the results CSV.

    Writes ``results.csv``, ``summary.csv``, ``f1_vs_strong.<fmt>``,
    ``f1_vs_weak.<fmt>``, per-cell JSON under ``cells/`` and the ledger
    ``ledger.txt``. ``max_cells`` stops after that many new cells (used to
    simulate interruption).
    """
    out = Path(out_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    (out / "backbones").mkdir(exist_ok=True)
    if data is None:
        data = build_benchmark(config.benchmark)
    cells = config.grid.cells()
    for cell in cells:
        if cell[1] > len(data.weak) or cell[2] > len(data.strong):
            raise ValidationError(f"cell {cell_key(cell)}: corpus too small "
                                  f"(weak {len(data.weak)}, strong {len(data.strong)})")
        if cell[0] == "ood_weak+indomain_weak" and data.ood is None:
            raise ValidationError(f"cell {cell_key(cell)}: no out-of-domain weak corpus")
    ledger = out / "ledger.txt"
    done = {k for k in read_ledger(ledger) if (out / "cells" / f"{k}.json").exists()}
    todo = [c for c in cells if cell_key(c) not in done]
    if max_cells is not None:
        todo = todo[:max_cells]
    logger.info("%d cells, %d already complete, running %d", len(cells), len(done), len(todo))

    groups: dict = {}
    for c in todo:
        groups.setdefault((c[0], c[1], c[3]), []).append(c)
    jobs = [(data, v, w, seed, cs, config.train, config.model, out / "backbones")
            for (v, w, seed), cs in groups.items()]

    def record(results):
        with open(ledger, "a", encoding="utf-8") as fh:
            for cell, row in results:
                key = cell_key(cell)
                atomic_write_text(out / "cells" / f"{key}.json", json.dumps(row, sort_keys=True) + "\n")
                fh.write(key + "\n")
                fh.flush()
                os.fsync(fh.fileno())

    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            for results in pool.map(_run_group, jobs):
                record(results)
    else:
        for job in jobs:
            record(_run_group(job))

    finished = set(read_ledger(ledger))
    rows = [json.loads((out / "cells" / f"{cell_key(c)}.json").read_text(encoding="utf-8"))
            for c in cells if cell_key(c) in finished]
    types = data.test.scheme.types
    csv_path = out / "results.csv"
    atomic_write_text(csv_path, results_csv(rows, types))
    if rows:
        atomic_write_text(out / "summary.csv", summary_csv(summarize(rows)))
        plot_results(csv_path, out, config.plot_format)
    return csv_path


# ---------------------------------------------------------------------------
# aggregation and plots
# ---------------------------------------------------------------------------

def read_results(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("weak_size", "strong_size", "seed"):
            r[k] = int(r[k])
        for k in r:
            if k not in ("variant", "weak_size", "strong_size", "seed"):
                r[k] = float(r[k])
    return rows


def summarize(rows: Sequence[dict]) -> list[dict]:
    """Mean and population std of P/R/F1 per (variant, weak_size, strong_size)."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["variant"], int(r["weak_size"]), int(r["strong_size"])), []).append(r)
    out = []
    for (v, w, s), rs in groups.items():
        entry = {"variant": v, "weak_size": w, "strong_size": s, "runs": len(rs)}
        for k in ("precision", "recall", "f1"):
            vals = np.array([float(r[k]) for r in rs])
            entry[f"{k}_mean"] = float(vals.mean())
            entry[f"{k}_std"] = float(vals.std())
        out.append(entry)
    return out


def summary_csv(summary: Sequence[dict]) -> str:
    cols = ["variant", "weak_size", "strong_size", "runs",
            "precision_mean", "precision_std", "recall_mean", "recall_std", "f1_mean", "f1_std"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for e in summary:
        w.writerow([e[c] if not isinstance(e[c], float) else f"{e[c]:.4f}" for c in cols])
    return buf.getvalue()


def _save_figure(fig, path: Path):
    fmt = path.suffix.lstrip(".").lower()
    metadata = {"png": {"Software": None}, "pdf": {"CreationDate": None, "Producer": None},
                "svg": {"Date": None, "Creator": None}}.get(fmt)
    if fmt == "svg":
        import matplotlib
        with matplotlib.rc_context({"svg.hashsalt": "wsner"}):
            fig.savefig(path, metadata=metadata)
    else:
        fig.savefig(path, metadata=metadata)


def plot_results(csv_path, out_dir, fmt: str = "png") -> list[Path]:
    """F1-vs-strong-size and F1-vs-weak-size line plots, computed only from the CSV."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    summary = summarize(read_results(csv_path))
    out = Path(out_dir)
    paths = []

    fig, ax = plt.subplots(figsize=(6, 4))
    series: dict = {}
    for e in summary:
        if e["strong_size"] == 0:
            continue
        label = e["variant"] if e["variant"] == "none" else f"{e['variant']} (weak {e['weak_size']})"
        series.setdefault(label, []).append((e["strong_size"], e["f1_mean"], e["f1_std"]))
    for label, pts in sorted(series.items()):
        pts.sort()
        x, y, s = zip(*pts)
        ax.errorbar(x, y, yerr=s, marker="o", capsize=3, label=label)
    ax.set_xlabel("strong sentences")
    ax.set_ylabel("weighted F1")
    if series:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    p = out / f"f1_vs_strong.{fmt}"
    _save_figure(fig, p)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(6, 4))
    series = {}
    for e in summary:
        if e["variant"] == "none":
            continue
        label = f"{e['variant']} (strong {e['strong_size']})" if e["strong_size"] else f"{e['variant']} (weak only)"
        series.setdefault(label, []).append((e["weak_size"], e["f1_mean"], e["f1_std"]))
    for label, pts in sorted(series.items()):
        pts.sort()
        x, y, s = zip(*pts)
        ax.errorbar(x, y, yerr=s, marker="o", capsize=3, label=label)
    ax.set_xlabel("weak sentences")
    ax.set_ylabel("weighted F1")
    if series:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    p = out / f"f1_vs_weak.{fmt}"
    _save_figure(fig, p)
    plt.close(fig)
    paths.append(p)
    return paths


def config_dict(config: ExperimentConfig) -> dict:
    """Plain-dict form of ``config`` (for recording next to results)."""
    d = asdict(config)
    d["grid"] = {k: list(v) for k, v in d["grid"].items()}
    return d
