"""Hot kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time from ``WSNER_BACKEND``:

* ``auto`` (default): numba when importable, numpy otherwise
* ``numba``: numba, and a missing numba is an ImportError
* ``numpy``: always the fallback

Both paths implement the same arithmetic. The recurrence is BLAS-bound and
the numpy version is faster on every machine we measured (see
``benchmarks/bench_kernels.py``), so ``rnn_forward``/``rnn_backward`` use it
under either backend; the numba variants stay for the benchmark.
"""
import logging
import os

import numpy as np

logger = logging.getLogger(__name__)

_requested = os.environ.get("WSNER_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ImportError(f"WSNER_BACKEND must be auto, numba or numpy, got {_requested!r}")

HAS_NUMBA = False
if _requested != "numpy":
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:
        if _requested == "numba":
            raise
        logger.warning("numba not importable, using numpy kernels")

BACKEND = "numba" if HAS_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy kernels
# ---------------------------------------------------------------------------

def rnn_forward_np(xproj, U):
    """Elman recurrence h_t = tanh(xproj_t + h_{t-1} U) with h_{-1} = 0.

    xproj is (T, B, H) with the bias already added; returns (T, B, H).
    """
    T, B, H = xproj.shape
    hs = np.empty_like(xproj)
    h = np.zeros((B, H), dtype=xproj.dtype)
    for t in range(T):
        h = np.tanh(xproj[t] + h @ U)
        hs[t] = h
    return hs


def rnn_backward_np(hs, U, dhs):
    """Backprop through :func:`rnn_forward_np`; returns (dxproj, dU)."""
    T, B, H = hs.shape
    dx = np.empty_like(hs)
    dU = np.zeros_like(U)
    dnext = np.zeros((B, H), dtype=hs.dtype)
    Ut = U.T
    for t in range(T - 1, -1, -1):
        g = dhs[t] + dnext
        da = g - g * hs[t] * hs[t]
        dx[t] = da
        if t > 0:
            dU += hs[t - 1].T @ da
        dnext = da @ Ut
    return dx, dU


def scatter_add_rows_np(out, idx, rows):
    """out[idx[i]] += rows[i], accumulating repeated indices."""
    np.add.at(out, idx, rows)


def split_scores_np(perms, type_counts, bounds, expected):
    """L1 deviation of each candidate split from proportional allocation.

    perms: (C, N) permutations of sentence indices; type_counts: (N, K)
    per-sentence entity counts; bounds: (P + 1,) cumulative partition
    boundaries; expected: (P,) partition fractions. Types with zero total
    count are skipped.
    """
    totals = type_counts.sum(axis=0).astype(np.float64)
    active = totals > 0
    scores = np.zeros(perms.shape[0])
    for p in range(len(bounds) - 1):
        part = type_counts[perms[:, bounds[p]:bounds[p + 1]]].sum(axis=1)
        frac = part[:, active] / totals[active]
        scores += np.abs(frac - expected[p]).sum(axis=1)
    return scores


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def rnn_forward_nb(xproj, U):
        T, B, H = xproj.shape
        hs = np.empty_like(xproj)
        h = np.zeros((B, H), dtype=xproj.dtype)
        for t in range(T):
            h = np.tanh(xproj[t] + h @ U)
            hs[t] = h
        return hs

    @njit(cache=True)
    def rnn_backward_nb(hs, U, dhs):
        T, B, H = hs.shape
        dx = np.empty_like(hs)
        dU = np.zeros_like(U)
        dnext = np.zeros((B, H), dtype=hs.dtype)
        Ut = np.ascontiguousarray(U.T)
        for t in range(T - 1, -1, -1):
            g = dhs[t] + dnext
            da = g - g * hs[t] * hs[t]
            dx[t] = da
            if t > 0:
                dU += np.ascontiguousarray(hs[t - 1].T) @ da
            dnext = da @ Ut
        return dx, dU

    @njit(cache=True)
    def scatter_add_rows_nb(out, idx, rows):
        D = rows.shape[1]
        for i in range(idx.shape[0]):
            r = idx[i]
            for j in range(D):
                out[r, j] += rows[i, j]

    @njit(cache=True)
    def split_scores_nb(perms, type_counts, bounds, expected):
        C, N = perms.shape
        K = type_counts.shape[1]
        P = bounds.shape[0] - 1
        totals = np.zeros(K)
        for i in range(N):
            for k in range(K):
                totals[k] += type_counts[i, k]
        scores = np.zeros(C)
        part = np.zeros(K)
        for c in range(C):
            s = 0.0
            for p in range(P):
                part[:] = 0.0
                for j in range(bounds[p], bounds[p + 1]):
                    row = perms[c, j]
                    for k in range(K):
                        part[k] += type_counts[row, k]
                for k in range(K):
                    if totals[k] > 0:
                        s += abs(part[k] / totals[k] - expected[p])
            scores[c] = s
        return scores

    scatter_add_rows = scatter_add_rows_nb
    split_scores = split_scores_nb
else:
    scatter_add_rows = scatter_add_rows_np
    split_scores = split_scores_np

rnn_forward = rnn_forward_np
rnn_backward = rnn_backward_np
