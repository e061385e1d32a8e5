"""Command-line entry point: ``wsner <subcommand> ...``.

Each subcommand wraps one library operation. Output files are written
atomically; validation failures exit with status 1 and a one-line message,
usage errors with status 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import __version__
from .config import build, check_keys, load_yaml, resource_path
from .core import COVIDNEWS, WIKIGOLD, TagScheme, ValidationError
from .data import (
    FORMATS,
    FilterConfig,
    SplitSpec,
    atomic_write_text,
    corpus_stats,
    default_split_sizes,
    format_stats_table,
    filter_corpus,
    monte_carlo_split,
    read_corpus,
    stats_csv,
    write_corpus,
)
from .experiment import BenchmarkCorpora, build_benchmark, load_experiment_config, run_experiment, sample_indices
from .metrics import (
    compare_by_language,
    format_agreement_table,
    format_language_table,
    format_prf_table,
    pairwise_agreement,
    prf_csv,
    span_prf,
)
from .model import ModelConfig, load_params, predict_tags, save_params
from .train import LabelMapping, Stage, StagePlan, TrainConfig, run_controster, stage_log_rows
from .weaklabel import NoiseProfile, SynthSpec, corrupt_gold, generate_synthetic, label_corpus, load_rules

logger = logging.getLogger("wsner")

SCHEMES = {"covidnews": COVIDNEWS, "wikigold": WIKIGOLD}


def resolve_scheme(name: str) -> TagScheme:
    """A named scheme, or a comma-separated list of entity types."""
    if name.lower() in SCHEMES:
        return SCHEMES[name.lower()]
    types = tuple(t.strip() for t in name.split(",") if t.strip())
    if not types:
        raise ValidationError(f"empty scheme {name!r}")
    return TagScheme(types, name="custom")


def _read(args, path, quality="strong", source=None):
    return read_corpus(path, args.format, resolve_scheme(args.scheme), quality,
                       source=source or getattr(args, "labels", "gold"))


def _write_csv(path, text):
    if path:
        atomic_write_text(path, text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_stats(args):
    sources = args.labels_list or ["gold"]
    if len(sources) not in (1, len(args.inputs)):
        raise ValidationError("give one --labels value, or one per --in")
    names = args.names.split(",") if args.names else [Path(p).stem for p in args.inputs]
    if len(names) != len(args.inputs):
        raise ValidationError("--names must list one name per --in")
    columns = {}
    for i, path in enumerate(args.inputs):
        source = sources[0] if len(sources) == 1 else sources[i]
        corpus = read_corpus(path, args.format, resolve_scheme(args.scheme), source=source)
        columns[names[i]] = corpus_stats(corpus, source)
    sys.stdout.write(format_stats_table(columns))
    _write_csv(args.csv, stats_csv(columns))
    return 0


def cmd_split(args):
    corpus = _read(args, args.input)
    sizes = (tuple(int(x) for x in args.sizes.split(",")) if args.sizes
             else default_split_sizes(len(corpus)))
    parts = monte_carlo_split(corpus, SplitSpec(sizes, args.iters, args.seed), args.labels)
    prefix = args.out_prefix or str(Path(args.input).with_suffix(""))
    names = ("train", "val", "test") if len(parts) == 3 else tuple(f"part{i}" for i in range(len(parts)))
    for name, part in zip(names, parts):
        path = f"{prefix}.{name}.{'jsonl' if args.format == 'json-lines' else 'txt'}"
        write_corpus(part, path, args.format, args.labels)
        print(f"{path}\t{len(part)}")
    return 0


def cmd_filter(args):
    cfg = {}
    if args.config:
        cfg = load_yaml(args.config)
    for k in ("min_words", "min_chars", "max_chars"):
        if getattr(args, k) is not None:
            cfg[k] = getattr(args, k)
    if args.allow_non_ascii:
        cfg["reject_non_ascii"] = False
    if args.keep_duplicates:
        cfg["dedupe"] = False
    config = build(FilterConfig, cfg, args.config or "filter options")
    corpus = _read(args, args.input)
    kept, report = filter_corpus(corpus, config)
    write_corpus(kept, args.out, args.format, args.labels)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.report:
        atomic_write_text(args.report, text)
    else:
        sys.stderr.write(text)
    return 0


def cmd_weak_label(args):
    scheme = resolve_scheme(args.scheme)
    rules = load_rules(args.rules, scheme)
    corpus = read_corpus(args.input, args.format, scheme, "weak", source="gold")
    labelled = label_corpus(corpus, rules)
    write_corpus(labelled, args.out, args.format, "weak")
    return 0


def cmd_corrupt(args):
    profile = NoiseProfile.from_file(args.profile) if args.profile else NoiseProfile()
    if args.seed is not None:
        profile = replace(profile, seed=args.seed)
    corpus = _read(args, args.input, source="gold")
    weak = corrupt_gold(corpus, profile)
    write_corpus(weak, args.out, args.format, "weak")
    return 0


def cmd_gensynth(args):
    if args.benchmark:
        from .experiment import BenchmarkSpec
        spec = load_yaml(args.config).get("benchmark", {}) if args.config else {}
        data = build_benchmark(build(BenchmarkSpec, spec, args.config or "benchmark"))
        data.write(args.out)
        for name, fname in BenchmarkCorpora.FILES.items():
            c = getattr(data, name)
            if c is not None:
                print(f"{Path(args.out) / fname}\t{len(c)}")
        return 0
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.count is not None:
        overrides["sentence_count"] = args.count
    spec = SynthSpec.from_file(args.spec or resource_path("covid_synth.yaml"), **overrides)
    corpus = generate_synthetic(spec)
    write_corpus(corpus, args.out, args.format, "gold")
    return 0


PLAN_STAGE_KEYS = ("path", "format", "scheme", "quality", "phases", "mapping", "name", "limit", "sample_seed")


def load_train_config(path, seed=None) -> tuple[TrainConfig, ModelConfig]:
    raw = load_yaml(path) if path else {}
    where = str(path) if path else "train config"
    check_keys(raw, ["train", "model"], where)
    train = build(TrainConfig, raw.get("train", {}), f"{where}: train")
    model = build(ModelConfig, raw.get("model", {}), f"{where}: model")
    if seed is not None:
        train = replace(train, seed=seed)
    return train, model


def load_plan(path, target: TagScheme = COVIDNEWS) -> StagePlan:
    """Stage plan from YAML: ``stages: [{path, quality, phases, scheme, mapping, ...}]``.

    Relative corpus paths resolve against the plan file's directory.
    ``mapping`` renames source types into ``target`` (unmapped types dropped);
    ``limit`` keeps a seeded sample of that many sentences.
    """
    raw = load_yaml(path)
    check_keys(raw, ["stages"], str(path))
    stages = []
    for i, st in enumerate(raw.get("stages") or []):
        where = f"{path}: stage {i + 1}"
        if not isinstance(st, dict) or "path" not in st:
            raise ValidationError(f"{where}: each stage needs a path")
        check_keys(st, PLAN_STAGE_KEYS, where)
        scheme = resolve_scheme(st.get("scheme", "covidnews"))
        quality = st.get("quality", "weak")
        corpus_path = Path(st["path"])
        if not corpus_path.is_absolute():
            corpus_path = Path(path).parent / corpus_path
        corpus = read_corpus(corpus_path, st.get("format", "json-lines"), scheme, quality,
                             source="weak" if quality == "weak" else "gold")
        if "limit" in st:
            corpus = corpus.subset(sample_indices(len(corpus), int(st["limit"]), int(st.get("sample_seed", 0))))
        mapping = LabelMapping(scheme, target, st["mapping"]) if st.get("mapping") else None
        default_phases = ["noise_robust"] if quality == "strong" else (
            ["self_train"] if quality == "unlabeled" else ["noise_robust", "ensemble", "self_train"])
        stages.append(Stage(corpus, frozenset(st.get("phases", default_phases)), mapping,
                            st.get("name", corpus_path.stem)))
    return StagePlan(tuple(stages))


def cmd_train(args):
    train_cfg, model_cfg = load_train_config(args.config, args.seed)
    plan = load_plan(args.plan)
    eval_corpus = _read(args, args.eval) if args.eval else None
    init = load_params(args.init) if args.init else None
    params, results = run_controster(plan, train_cfg, model_cfg, eval_corpus, init)
    save_params(params, args.out)
    for r in results:
        if r.report is not None:
            print(f"stage {r.stage} ({r.name}) on {r.corpus}: weighted F1 {r.report.weighted_avg[2]:.1f}")
    if args.stage_log:
        import csv
        import io
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(stage_log_rows(results))
        atomic_write_text(args.stage_log, buf.getvalue())
    return 0


def cmd_evaluate(args):
    gold = read_corpus(args.gold, args.format, resolve_scheme(args.scheme), source=args.gold_labels)
    if args.model:
        pred, pred_source = predict_tags(load_params(args.model), gold), "weak"
        if args.pred_out:
            write_corpus(pred, args.pred_out, args.format, "weak")
    elif args.pred:
        pred = read_corpus(args.pred, args.format, resolve_scheme(args.scheme), source=args.pred_labels)
        pred_source = args.pred_labels
    else:
        raise ValidationError("evaluate needs --pred or --model")
    if args.by_language:
        table = compare_by_language(pred, gold, pred_source, args.gold_labels)
        sys.stdout.write(format_language_table(table))
        return 0
    report = span_prf(pred, gold, pred_source, args.gold_labels)
    sys.stdout.write(format_prf_table(report))
    print(f"weighted F1: {report.weighted_avg[2]:.1f}")
    _write_csv(args.csv, prf_csv(report))
    return 0


def cmd_iaa(args):
    if len(args.annotations) < 2:
        raise ValidationError("iaa needs at least two --ann files")
    scheme = resolve_scheme(args.scheme)
    corpora = [read_corpus(p, args.format, scheme, source=args.labels) for p in args.annotations]
    for c in corpora[1:]:
        if [s.tokens for s in c] != [s.tokens for s in corpora[0]]:
            raise ValidationError("annotation files do not cover the same sentences")
    rep = pairwise_agreement([c.span_lists(args.labels) for c in corpora], population=not args.sample_std)
    sys.stdout.write(format_agreement_table({args.name: rep}))
    return 0


def cmd_experiment(args):
    overrides = {"grid": {}, "train": {}, "model": {}, "benchmark": {}}
    if args.seed is not None:
        overrides["grid"]["seeds"] = [int(s) for s in args.seed.split(",")]
    config = load_experiment_config(args.config, overrides)
    if args.workers is not None:
        config = replace(config, workers=args.workers)
    data = BenchmarkCorpora.read(args.data) if args.data else None
    path = run_experiment(config, args.out, data, args.max_cells)
    print(path)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_io(p, labels=True):
    p.add_argument("--format", choices=FORMATS, default="json-lines")
    p.add_argument("--scheme", default="covidnews",
                   help="covidnews, wikigold, or a comma-separated list of entity types")
    if labels:
        p.add_argument("--labels", choices=("gold", "weak"), default="gold", help="label slot to use")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wsner", description="Weak + strong NER training toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="corpus statistics table")
    p.add_argument("--in", dest="inputs", action="append", required=True, help="corpus file (repeatable)")
    p.add_argument("--labels", dest="labels_list", action="append", choices=("gold", "weak"),
                   help="label slot, once for all inputs or once per input")
    p.add_argument("--names", help="comma-separated column names (default: file stems)")
    p.add_argument("--csv", help="also write the table as CSV")
    _add_io(p, labels=False)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("split", help="entity-stratified Monte Carlo split")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--sizes", help="comma-separated partition sizes (default 70/10/20)")
    p.add_argument("--iters", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", help="output path prefix (default: input path without suffix)")
    _add_io(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("filter", help="drop short, non-ASCII and duplicate sentences")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="write the per-rule report here (default: stderr)")
    p.add_argument("--config", help="YAML with FilterConfig fields")
    p.add_argument("--min-words", type=int)
    p.add_argument("--min-chars", type=int)
    p.add_argument("--max-chars", type=int)
    p.add_argument("--allow-non-ascii", action="store_true")
    p.add_argument("--keep-duplicates", action="store_true")
    _add_io(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("weak-label", help="label a corpus with gazetteer/regex rules")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--rules", required=True, help="JSON-lines rule file")
    p.add_argument("--out", required=True)
    _add_io(p, labels=False)
    p.set_defaults(func=cmd_weak_label)

    p = sub.add_parser("corrupt", help="derive weak labels from gold with a noise profile")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--profile", help="noise profile YAML")
    p.add_argument("--seed", type=int, help="override the profile seed")
    p.add_argument("--out", required=True)
    _add_io(p, labels=False)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("gensynth", help="generate a synthetic gold corpus")
    p.add_argument("--spec", help="synthesis spec YAML (default: packaged in-domain grammar)")
    p.add_argument("--count", type=int, help="override sentence_count")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.add_argument("--benchmark", action="store_true",
                   help="write the full benchmark (weak/strong/test/ood) into the --out directory")
    p.add_argument("--config", help="experiment YAML whose benchmark section sizes the benchmark")
    p.add_argument("--out", required=True)
    _add_io(p, labels=False)
    p.set_defaults(func=cmd_gensynth)

    p = sub.add_parser("train", help="run a staged training plan")
    p.add_argument("--plan", required=True, help="stage plan YAML")
    p.add_argument("--config", help="YAML with train/model sections")
    p.add_argument("--seed", type=int)
    p.add_argument("--init", help="start from this checkpoint")
    p.add_argument("--eval", help="gold corpus scored after every stage")
    p.add_argument("--stage-log", help="CSV of per-stage scores")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    _add_io(p, labels=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="span-level P/R/F1")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", help="corpus holding predicted labels")
    p.add_argument("--model", help="checkpoint to predict with instead of --pred")
    p.add_argument("--pred-out", help="with --model, also write the predictions")
    p.add_argument("--pred-labels", choices=("gold", "weak"), default="weak")
    p.add_argument("--gold-labels", choices=("gold", "weak"), default="gold")
    p.add_argument("--by-language", action="store_true", help="break scores down by origin language")
    p.add_argument("--csv", help="also write the table as CSV")
    _add_io(p, labels=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("iaa", help="pairwise inter-annotator agreement")
    p.add_argument("--ann", dest="annotations", action="append", required=True,
                   help="annotation file (repeat for each annotator)")
    p.add_argument("--name", default="Annotators")
    p.add_argument("--sample-std", action="store_true", help="use the n-1 standard deviation")
    _add_io(p)
    p.set_defaults(func=cmd_iaa)

    p = sub.add_parser("experiment", help="resumable backbone/size/seed sweep")
    p.add_argument("--config", help="experiment YAML (default: packaged desk preset)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--data", help="benchmark directory from `gensynth --benchmark` (default: generate)")
    p.add_argument("--seed", help="comma-separated seeds overriding the grid")
    p.add_argument("--workers", type=int)
    p.add_argument("--max-cells", type=int, help="stop after this many new cells")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else (logging.INFO if args.verbose == 1 else logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"wsner {args.command}: error: {e}", file=sys.stderr)
        return 1
    except (OSError, yaml.YAMLError, json.JSONDecodeError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"wsner {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
