from dataclasses import replace

import pytest

from wsner.core import ValidationError
from wsner.experiment import (
    BenchmarkCorpora,
    BenchmarkSpec,
    ExperimentConfig,
    ExperimentGrid,
    build_benchmark,
    cell_key,
    load_experiment_config,
    plot_results,
    read_ledger,
    read_results,
    run_experiment,
    sample_indices,
    summarize,
)
from wsner.model import ModelConfig
from wsner.train import TrainConfig

TINY_TRAIN = TrainConfig(q=0.5, K=1, epochs_per_phase=1, strong_epochs=2, batch_size=16, self_train_rounds=1)
TINY_MODEL = ModelConfig(embedding_dim=8, hidden_dim=8)


@pytest.fixture(scope="module")
def data():
    return build_benchmark(BenchmarkSpec(weak_pool=60, strong_pool=60, test=30, ood=40))


def tiny(grid):
    return ExperimentConfig(grid, TINY_TRAIN, TINY_MODEL)


def test_grid_cells():
    g = ExperimentGrid(("none", "indomain_weak"), (0, 100), (0, 10), (1,))
    assert g.cells() == [("none", 0, 10, 1), ("indomain_weak", 0, 10, 1),
                         ("indomain_weak", 100, 0, 1), ("indomain_weak", 100, 10, 1)]
    with pytest.raises(ValidationError):
        ExperimentGrid(seeds=())
    with pytest.raises(ValidationError):
        ExperimentGrid(variants=("both",))
    assert cell_key(("none", 0, 10, 1)) == "none__w0__s10__seed1"


def test_sample_indices_nested():
    small, big = sample_indices(100, 10, 3), sample_indices(100, 40, 3)
    assert list(big[:10]) == list(small)
    with pytest.raises(ValidationError):
        sample_indices(5, 6, 0)


def test_benchmark_layout(data):
    assert len(data.weak) == 60 and len(data.strong) == 60 and len(data.test) == 30 and len(data.ood) == 40
    assert [s.tokens for s in data.weak] == [s.tokens for s in data.strong]
    assert data.weak.quality == "weak" and data.strong.quality == "strong"


def test_benchmark_round_trip(data, tmp_path):
    data.write(tmp_path)
    back = BenchmarkCorpora.read(tmp_path)
    assert back.weak.sentences == data.weak.sentences
    assert back.ood.scheme == data.ood.scheme
    (tmp_path / "strong.jsonl").unlink()
    with pytest.raises(ValidationError, match="strong.jsonl"):
        BenchmarkCorpora.read(tmp_path)


def test_single_cell(data, tmp_path):
    csv_path = run_experiment(tiny(ExperimentGrid(("indomain_weak",), (40,), (10,), (1,))), tmp_path, data)
    rows = read_results(csv_path)
    assert len(rows) == 1
    assert rows[0]["variant"] == "indomain_weak" and rows[0]["strong_size"] == 10
    assert 0 <= rows[0]["f1"] <= 100
    assert "f1_Virus" in rows[0]
    assert read_ledger(tmp_path / "ledger.txt") == ["indomain_weak__w40__s10__seed1"]
    assert (tmp_path / "summary.csv").exists() and (tmp_path / "f1_vs_strong.png").exists()


def test_resume_matches_uninterrupted(data, tmp_path):
    cfg = tiny(ExperimentGrid(("none", "indomain_weak", "ood_weak+indomain_weak"), (40,), (0, 10), (1, 2)))
    full = run_experiment(cfg, tmp_path / "full", data).read_text()
    part = tmp_path / "part"
    run_experiment(cfg, part, data, max_cells=3)
    assert len(read_ledger(part / "ledger.txt")) < len(cfg.grid.cells())
    # a half-written ledger line (crash mid-append) must not count as done
    with open(part / "ledger.txt", "a") as fh:
        fh.write("indomain_weak__w40__s10__seed2\n")
    resumed = run_experiment(cfg, part, data).read_text()
    assert resumed == full
    assert len(read_results(part / "results.csv")) == len(cfg.grid.cells())


def test_missing_inputs_rejected(data, tmp_path):
    with pytest.raises(ValidationError, match="too small"):
        run_experiment(tiny(ExperimentGrid(("indomain_weak",), (500,), (10,), (1,))), tmp_path, data)
    no_ood = replace(data, ood=None)
    with pytest.raises(ValidationError, match="out-of-domain"):
        run_experiment(tiny(ExperimentGrid(("ood_weak+indomain_weak",), (40,), (10,), (1,))), tmp_path, no_ood)


def test_summary_and_plots_deterministic(tmp_path):
    csv_text = ("variant,weak_size,strong_size,seed,precision,recall,f1\n"
                "none,0,10,1,50,50,50\nnone,0,10,2,60,60,60\n"
                "indomain_weak,40,10,1,70,70,70\nindomain_weak,40,0,1,30,30,30\n")
    p = tmp_path / "r.csv"
    p.write_text(csv_text)
    s = {(e["variant"], e["strong_size"]): e for e in summarize(read_results(p))}
    assert s[("none", 10)]["f1_mean"] == 55 and s[("none", 10)]["f1_std"] == 5
    for fmt in ("png", "svg"):
        a = [x.read_bytes() for x in plot_results(p, tmp_path, fmt)]
        b = [x.read_bytes() for x in plot_results(p, tmp_path, fmt)]
        assert a == b


def test_config_loading(tmp_path):
    preset = load_experiment_config()
    assert preset.grid.seeds == (1, 2, 3, 4, 5)
    cfg = tmp_path / "exp.yaml"
    cfg.write_text("grid:\n  seeds: [7]\ntrain:\n  K: 2\n")
    loaded = load_experiment_config(cfg)
    assert loaded.grid.seeds == (7,) and loaded.train.K == 2
    assert loaded.train.q == preset.train.q
    cfg.write_text("train:\n  kk: 2\n")
    with pytest.raises(ValidationError, match="kk"):
        load_experiment_config(cfg)
    cfg.write_text("extra: 1\n")
    with pytest.raises(ValidationError, match="extra"):
        load_experiment_config(cfg)
