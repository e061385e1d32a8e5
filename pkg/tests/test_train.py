import math
from dataclasses import replace

import numpy as np
import pytest

import oracles
from wsner.config import resource_path
from wsner.core import COVIDNEWS, WIKIGOLD, Corpus, Sentence, ValidationError
from wsner.metrics import span_prf
from wsner.model import ModelConfig, build_vocab, forward, init_params, params_digest, predict_tags
from wsner.train import (
    LabelMapping,
    Stage,
    StagePlan,
    TrainConfig,
    augment_sentence,
    augment_with_alignment,
    compute_label_weights,
    gce_grad_logits,
    gce_loss,
    kl_divergence,
    map_label_scheme,
    phase_epochs,
    run_controster,
    self_train,
    sharpen,
    stage_log_rows,
    teacher_distribution,
    train_ensemble,
    train_noise_robust,
)
from wsner.weaklabel import NoiseProfile, SynthSpec, corrupt_gold, generate_synthetic

SMALL = ModelConfig(embedding_dim=16, hidden_dim=16)


def one(p):
    return np.array([[p, 1 - p]])


# ---------------------------------------------------------------- losses

def test_gce_examples():
    assert gce_loss(one(0.5), [0], [1.0], 1.0) == pytest.approx(0.5)
    assert gce_loss(one(0.5), [0], [0.0], 0.7) == 0.0
    assert gce_loss(one(0.81), [0], [1.0], 0.5) == pytest.approx(0.2)
    assert gce_loss(one(0.5), [0], [1.0], 1e-6) == pytest.approx(-math.log(0.5), abs=1e-4)
    assert gce_loss(one(0.0), [0], [1.0], 0.5) == pytest.approx(2.0)
    with pytest.raises(ValidationError):
        gce_loss(one(0.5), [0], [1.0], 0.0)
    with pytest.raises(ValidationError):
        gce_loss(one(0.5), [0, 1], [1.0], 0.5)


def test_gce_limits(rng):
    for _ in range(20):
        P = rng.dirichlet(np.ones(21), size=30)
        y = rng.integers(0, 21, 30)
        w = rng.integers(0, 2, 30).astype(float)
        assert abs(gce_loss(P, y, w, 1.0) - float(np.sum(w * (1 - P[np.arange(30), y])))) < 1e-9
        ce = oracles.cross_entropy(P, y, w)
        if ce > 0:
            assert abs(gce_loss(P, y, w, 1e-6) - ce) / ce < 1e-4


def test_gce_accepts_sentence_lists(rng):
    P = rng.dirichlet(np.ones(21), size=7)
    y = rng.integers(0, 21, 7)
    w = np.ones(7)
    whole = gce_loss(P, y, w, 0.7)
    split = gce_loss([P[:3], P[3:]], [y[:3], y[3:]], [w[:3], w[3:]], 0.7)
    assert whole == pytest.approx(split)


def test_gce_grad_zero_where_unweighted(rng):
    P = rng.dirichlet(np.ones(5), size=(2, 4))
    y = rng.integers(0, 5, (2, 4))
    w = np.array([[1, 0, 1, 0], [0, 0, 1, 1]], dtype=float)
    g = gce_grad_logits(P, y, w, 0.7)
    assert (g[w == 0] == 0).all()
    assert np.allclose(g.sum(axis=-1), 0)


def test_label_weights():
    P = np.array([[0.9, 0.1], [0.5, 0.5], [0.3, 0.7]])
    assert list(compute_label_weights(P, [0, 0, 1], 0.7)) == [1, 0, 1]
    assert list(compute_label_weights(P, [1, 1, 0], 0.0)) == [1, 1, 1]
    out = compute_label_weights([P[:1], P[1:]], [[0], [0, 1]], 0.7)
    assert [list(x) for x in out] == [[1], [0, 1]]
    with pytest.raises(ValidationError):
        compute_label_weights(P, [0, 0, 0], 1.5)


def test_sharpen_examples():
    assert np.allclose(sharpen([0.5, 0.5]), [0.5, 0.5])
    assert np.allclose(sharpen([1.0, 0.0]), [1.0, 0.0])
    assert np.allclose(sharpen([0.8, 0.2]), [0.941176, 0.058824], atol=1e-6)
    with pytest.raises(ValidationError):
        sharpen([0.5, 0.6])


def test_sharpen_and_kl_properties(rng):
    P = rng.dirichlet(np.full(21, 0.5), size=1000)
    T = sharpen(P)
    assert np.all(np.abs(T.sum(axis=1) - 1) <= 1e-9)
    assert (T.argmax(axis=1) == P.argmax(axis=1)).all()
    assert all(oracles.entropy(t) <= oracles.entropy(p) + 1e-12 for t, p in zip(T, P))
    assert np.all(kl_divergence(P, P) == 0)
    Q = rng.dirichlet(np.ones(21), size=1000)
    assert (kl_divergence(P, Q) >= 0).all()
    assert (kl_divergence(P, Q) > 0).all()


# ---------------------------------------------------------------- config

def test_config_validation():
    for bad in [dict(q=0), dict(q=1.5), dict(tau=-0.1), dict(K=0), dict(gamma=2), dict(removal_source="x"),
                dict(removal_start_epoch=0), dict(min_steps=-1), dict(batch_size=0)]:
        with pytest.raises(ValidationError):
            TrainConfig(**bad)


def test_phase_epochs():
    cfg = TrainConfig(batch_size=10, min_steps=25)
    assert phase_epochs(cfg, 100, 2) == 3  # 10 steps per epoch
    assert phase_epochs(cfg, 1000, 2) == 2
    assert phase_epochs(cfg, 100, 0) == 0
    assert phase_epochs(replace(cfg, min_steps=0), 100, 2) == 2


# ---------------------------------------------------------------- training

@pytest.fixture(scope="module")
def toy():
    gold = generate_synthetic(SynthSpec.from_file(resource_path("covid_synth.yaml"), sentence_count=40, seed=5))
    return gold.subset(range(20)).replace(quality="strong"), build_vocab([gold])


def test_zero_epochs_is_identity(toy):
    corpus, vocab = toy
    init = init_params(vocab, COVIDNEWS, SMALL, seed=0)
    out = train_noise_robust(init, corpus, TrainConfig(epochs_per_phase=0))
    assert params_digest(out) == params_digest(init)


def test_empty_corpus_rejected(toy):
    _, vocab = toy
    with pytest.raises(ValidationError):
        train_noise_robust(init_params(vocab, COVIDNEWS, SMALL), Corpus((), quality="strong"), TrainConfig())


def test_overfits_clean_corpus(toy):
    corpus, vocab = toy
    cfg = TrainConfig(q=0.3, tau=0.0, epochs_per_phase=50, batch_size=4, learning_rate=1e-2, unk_rate=0.0)
    params = train_noise_robust(init_params(vocab, COVIDNEWS, SMALL, seed=0), corpus, cfg)
    assert span_prf(predict_tags(params, corpus), corpus).micro[2] == 100.0


def test_noise_robust_deterministic_and_logged(toy):
    corpus, vocab = toy
    init = init_params(vocab, COVIDNEWS, SMALL, seed=0)
    cfg = TrainConfig(q=0.5, tau=0.5, epochs_per_phase=3, seed=4)
    log = []
    a = train_noise_robust(init, corpus, cfg, log=log)
    b = train_noise_robust(init, corpus, cfg)
    assert params_digest(a) == params_digest(b)
    kept = [e for e in log if "kept_fraction" in e]
    assert [e["epoch"] for e in kept] == [1, 2]
    assert len(log[-1]["loss"]) == 3
    c = train_noise_robust(init, corpus, replace(cfg, seed=5))
    assert params_digest(c) != params_digest(a)


def test_teacher_is_member_mean(toy):
    corpus, vocab = toy
    a = init_params(vocab, COVIDNEWS, SMALL, seed=1)
    b = init_params(vocab, COVIDNEWS, SMALL, seed=2)
    toks = [s.tokens for s in corpus][:3]
    t = teacher_distribution([a, b], toks)
    fa, fb = forward(a, toks), forward(b, toks)
    for x, y, z in zip(t, fa, fb):
        assert np.allclose(x, (y + z) / 2)


def test_teacher_two_class_arithmetic():
    # the reduction itself: members giving [0.6, 0.4] and [0.8, 0.2] average to [0.7, 0.3]
    assert np.allclose(np.mean([[0.6, 0.4], [0.8, 0.2]], axis=0), [0.7, 0.3])


def test_single_member_student_matches_teacher(toy):
    corpus, vocab = toy
    init = init_params(vocab, COVIDNEWS, SMALL, seed=0)
    cfg = TrainConfig(q=0.5, tau=0.0, K=1, epochs_per_phase=5, distill_epochs=150, learning_rate=1e-2,
                      batch_size=4, unk_rate=0.0)
    members, student = train_ensemble(init, corpus, cfg)
    toks = [s.tokens for s in corpus]
    teacher = forward(members[0], toks)
    kl = np.concatenate([kl_divergence(t, s) for t, s in zip(teacher, forward(student, toks))])
    assert kl.mean() <= 0.01


def test_ensemble_modes_deterministic(toy):
    corpus, vocab = toy
    init = init_params(vocab, COVIDNEWS, SMALL, seed=0)
    for source in ("member", "ensemble"):
        cfg = TrainConfig(q=0.5, tau=0.3, K=2, epochs_per_phase=2, seed=1, removal_source=source)
        log = []
        m1, s1 = train_ensemble(init, corpus, cfg, log=log)
        m2, s2 = train_ensemble(init, corpus, cfg)
        assert [params_digest(m) for m in m1] == [params_digest(m) for m in m2]
        assert params_digest(s1) == params_digest(s2)
        assert log[-1]["phase"] == "distill"
    # member k trains with seed + k, exactly as a standalone run would
    cfg = TrainConfig(q=0.5, tau=0.3, K=2, epochs_per_phase=2, seed=1)
    members, _ = train_ensemble(init, corpus, cfg)
    solo = train_noise_robust(init, corpus, replace(cfg, seed=3))
    assert params_digest(members[1]) == params_digest(solo)


# ---------------------------------------------------------------- augmentation / self-training

def test_augment_identity_and_determinism():
    s = Sentence(("Zika", "spreads", "in", "Wuhan"), [(0, 1, "Virus"), (3, 4, "Location")])
    assert augment_sentence(s, {"Location": ["New York"]}, 0.0, 1, replace_prob=0.0) == s
    gaz = {"Location": ["New York", "Paris"], "Virus": ["SARS-CoV-2"]}
    a = augment_sentence(s, gaz, 0.3, 9, replace_prob=1.0)
    assert a == augment_sentence(s, gaz, 0.3, 9, replace_prob=1.0)
    assert [sp.etype for sp in a.gold_spans] == ["Virus", "Location"]
    for sp in a.gold_spans:
        phrase = " ".join(a.tokens[sp.start:sp.end])
        assert phrase in {"SARS-CoV-2", "New York", "Paris"}


def test_augment_alignment_flags_single_token_sources():
    s = Sentence(("in", "Wuhan"), [(1, 2, "Location")])
    aug, align = augment_with_alignment(s, {"Location": ["New York"]}, 0.0, 0, replace_prob=1.0)
    assert aug.tokens == ("in", "New", "York")
    assert align == [(0, False), (1, False), (1, True)]


def test_self_train_degenerate_gamma(toy):
    corpus, vocab = toy
    init = init_params(vocab, COVIDNEWS, SMALL, seed=0)
    cfg = TrainConfig(gamma=1.0, strict_selection=True, self_train_rounds=2)
    log = []
    out = self_train(init, corpus, cfg, log=log)
    assert params_digest(out) == params_digest(init)
    assert [e["selected"] for e in log] == [0, 0]
    assert params_digest(self_train(init, corpus, replace(cfg, self_train_rounds=0))) == params_digest(init)


def test_self_train_deterministic(toy):
    corpus, vocab = toy
    init = init_params(vocab, COVIDNEWS, SMALL, seed=0)
    cfg = TrainConfig(gamma=0.5, epochs_per_phase=1, seed=2)
    assert params_digest(self_train(init, corpus, cfg)) == params_digest(self_train(init, corpus, cfg))


def test_self_train_improves_a_weak_model():
    gold = generate_synthetic(SynthSpec.from_file(resource_path("covid_synth.yaml"), sentence_count=500))
    types = gold.scheme.types
    confusion = {t: {u: 0.5 if u == t else 0.5 / (len(types) - 1) for u in types} for t in types}
    weak = corrupt_gold(gold.subset(range(400)), NoiseProfile(confusion=confusion, seed=1))
    assert 45 <= span_prf(weak, gold.subset(range(400))).weighted_avg[2] <= 55
    test = gold.subset(range(400, 500))
    vocab = build_vocab([gold])
    model = ModelConfig(embedding_dim=32, hidden_dim=32)
    wins = 0
    for seed in range(5):
        cfg = TrainConfig(q=0.3, tau=0.0, K=1, epochs_per_phase=40, seed=seed, gamma=0.9)
        base = train_noise_robust(init_params(vocab, COVIDNEWS, model, seed=seed), weak, cfg)
        before = span_prf(predict_tags(base, test), test).weighted_avg[2]
        after = span_prf(predict_tags(self_train(base, weak, cfg), test), test).weighted_avg[2]
        wins += after >= before
    assert wins >= 4


# ---------------------------------------------------------------- schemes and stages

def _wiki_corpus():
    spans = [(0, 1, "PER"), (2, 3, "PER"), (4, 5, "LOC"), (6, 7, "ORG"), (7, 8, "MISC")]
    s = Sentence(("Ann", "met", "Bob", "in", "Oslo", "at", "Nato", "Cup"), spans, spans)
    return Corpus((s,), WIKIGOLD, "weak", "wiki")


def test_map_label_scheme():
    c = _wiki_corpus()
    m = LabelMapping(WIKIGOLD, COVIDNEWS, {"PER": "Person", "LOC": "Location", "ORG": "Organisation"})
    out = map_label_scheme(c, m)
    assert out.scheme == COVIDNEWS
    assert {sp.etype for sp in out[0].gold_spans} == {"Person", "Location", "Organisation"}
    assert len(out[0].gold_spans) == 4
    assert out[0].weak_spans == out[0].gold_spans
    same = map_label_scheme(c, LabelMapping(WIKIGOLD, WIKIGOLD, {t: t for t in WIKIGOLD.types}))
    assert same.sentences == c.sentences
    empty = map_label_scheme(c, LabelMapping(WIKIGOLD, COVIDNEWS, {}))
    assert empty[0].gold_spans == ()
    with pytest.raises(ValidationError):
        LabelMapping(WIKIGOLD, COVIDNEWS, {"PER": "Human"})
    with pytest.raises(ValidationError):
        map_label_scheme(empty, m)


def test_stage_validation(toy):
    corpus, _ = toy
    with pytest.raises(ValidationError, match="noise_robust"):
        Stage(corpus, frozenset({"ensemble"}))
    with pytest.raises(ValidationError):
        Stage(corpus.replace(quality="weak"), frozenset({"bogus"}))
    with pytest.raises(ValidationError):
        Stage(corpus.replace(quality="unlabeled"), frozenset({"noise_robust"}))
    with pytest.raises(ValidationError):
        StagePlan(())


def test_strong_only_plan_is_plain_noise_robust(toy):
    corpus, vocab = toy
    cfg = TrainConfig(q=0.5, epochs_per_phase=2, seed=3)
    params, results = run_controster(StagePlan([Stage(corpus, frozenset({"noise_robust"}))]), cfg, SMALL, vocab=vocab)
    direct = train_noise_robust(init_params(vocab, COVIDNEWS, SMALL, seed=3), corpus, replace(cfg, tau=0.0))
    assert params_digest(params) == params_digest(direct)
    assert len(results) == 1 and results[0].stage == 1


def test_three_stage_plan(toy):
    corpus, vocab = toy
    wiki = _wiki_corpus()
    weak = corrupt_gold(corpus, NoiseProfile(miss_rate=0.3, seed=1))
    plan = StagePlan([Stage(wiki, name="ood"), Stage(weak, name="weak"),
                      Stage(corpus, frozenset({"noise_robust"}), name="strong")])
    cfg = TrainConfig(q=0.5, K=2, epochs_per_phase=1, seed=0)
    vocab = build_vocab([wiki, corpus])
    log = []
    params, results = run_controster(plan, cfg, SMALL, eval_corpus=corpus, vocab=vocab, log=log)
    assert params.scheme == COVIDNEWS
    assert [r.name for r in results] == ["ood", "weak", "strong"]
    assert results[0].corpus == "wiki"  # scored on its own labels: scheme differs from the eval corpus
    rows = stage_log_rows(results)
    assert rows[0][:4] == ["stage", "name", "corpus", "type"]
    assert sum(r[3] == "Weighted Avg" for r in rows) == 3
    again, _ = run_controster(plan, cfg, SMALL, eval_corpus=corpus, vocab=vocab)
    assert params_digest(again) == params_digest(params)
    # the strong corpus is never modified
    assert corpus.sentences == toy[0].sentences
