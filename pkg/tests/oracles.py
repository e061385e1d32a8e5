"""Independent reference implementations used by the test suite.

These are written from the definitions, deliberately without reusing any
package internals, so agreement with the package is meaningful.
"""
import itertools
import math

import numpy as np


def brute_force_prf(pred_lists, gold_lists, types):
    """Per-type and support-weighted P/R/F1 from explicit (sentence, span) sets."""
    pred = {(i, tuple(s)) for i, spans in enumerate(pred_lists) for s in spans}
    gold = {(i, tuple(s)) for i, spans in enumerate(gold_lists) for s in spans}

    def prf(p_set, g_set):
        hit = len(p_set & g_set)
        p = 100.0 * hit / len(p_set) if p_set else 0.0
        r = 100.0 * hit / len(g_set) if g_set else 0.0
        return p, r, (2 * p * r / (p + r) if p + r > 0 else 0.0)

    per_type = {}
    for t in types:
        ps = {x for x in pred if x[1][2] == t}
        gs = {x for x in gold if x[1][2] == t}
        per_type[t] = (*prf(ps, gs), len(gs))
    total = sum(v[3] for v in per_type.values())
    weighted = tuple(sum(v[k] * v[3] for v in per_type.values()) / total if total else 0.0
                     for k in range(3))
    return per_type, prf(pred, gold), weighted


def pairwise_micro_f1(annotations):
    scores = []
    for a, b in itertools.combinations(annotations, 2):
        _, micro, _ = brute_force_prf(a, b, types=())
        scores.append(micro[2])
    return scores


def cross_entropy(probs, labels, weights):
    """sum_i w_i * -log p_i[y_i], computed with plain python floats."""
    total = 0.0
    for row, y, w in zip(probs, labels, weights):
        total += float(w) * -math.log(float(row[int(y)]))
    return total


def split_l1_score(type_counts, parts, fractions):
    """Sum over parts and types of |observed share - expected share| of entity counts."""
    counts = np.asarray(type_counts, dtype=float)
    totals = counts.sum(axis=0)
    score = 0.0
    for idx, frac in zip(parts, fractions):
        got = counts[list(idx)].sum(axis=0)
        for k in range(counts.shape[1]):
            if totals[k] > 0:
                score += abs(got[k] / totals[k] - frac)
    return score


def numeric_grad(f, x, idx, eps):
    old = x[idx]
    x[idx] = old + eps
    up = f()
    x[idx] = old - eps
    down = f()
    x[idx] = old
    return (up - down) / (2 * eps)


def entropy(p):
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def finite_difference_check(n_coords=500, seed=0, q=0.7, eps=1e-6):
    """Compare analytic GCE-through-tagger gradients with central differences.

    Returns (relative errors, max |grad| over zero-weight token logits).
    Runs in float64 on a small tagger; coordinates are drawn uniformly over
    every parameter array, embeddings restricted to rows the batch uses.
    """
    from wsner.core import COVIDNEWS
    from wsner.model import ModelConfig, Vocab, backward_batch, forward_batch, init_params
    from wsner.train import gce_grad_logits, gce_loss

    rng = np.random.default_rng(seed)
    vocab = Vocab(["<pad>", "<unk>"] + [f"w{i}" for i in range(28)])
    params = init_params(vocab, COVIDNEWS, ModelConfig(embedding_dim=8, hidden_dim=8, o_bias=0.0,
                                                        dtype="float64"), seed=seed)
    for a in params.arrays().values():  # move away from the symmetric start
        a += rng.standard_normal(a.shape) * 0.3
    lengths = np.array([7, 4, 6])
    ids = np.zeros((3, 7), dtype=np.int64)
    for b, n in enumerate(lengths):
        ids[b, :n] = rng.integers(2, len(vocab), n)
    labels = rng.integers(0, COVIDNEWS.label_count, ids.shape)
    weights = (rng.random(ids.shape) < 0.7).astype(float)
    weights[np.arange(7)[None, :] >= lengths[:, None]] = 0.0

    def loss():
        probs, _ = forward_batch(params, ids, lengths)
        return gce_loss(probs, labels, weights, q)

    probs, cache = forward_batch(params, ids, lengths)
    dlogits = gce_grad_logits(probs, labels, weights, q)
    zero_weight_grad = float(np.abs(dlogits[weights == 0]).max()) if (weights == 0).any() else 0.0
    grads = backward_batch(params, cache, dlogits)

    arrays = params.arrays()
    candidates = []
    for name, a in arrays.items():
        if name == "encoder/emb":
            used = np.unique(ids[ids > 0])
            candidates += [(name, (int(r), c)) for r in used for c in range(a.shape[1])]
        else:
            candidates += [(name, idx) for idx in np.ndindex(a.shape)]
    pick = rng.choice(len(candidates), size=min(n_coords, len(candidates)), replace=False)
    errors = []
    for j in pick:
        name, idx = candidates[j]
        num = numeric_grad(loss, arrays[name], idx, eps)
        ana = float(grads[name][idx])
        errors.append(abs(num - ana) / max(abs(num), abs(ana), 1e-7))
    return np.asarray(errors), zero_weight_grad
