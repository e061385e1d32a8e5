"""Time the numba kernels against their numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeat 20] [--csv out.csv]

Every pair is checked for agreement before timing. The first numba call
(compilation) is excluded.
"""
import argparse
import csv
import sys
import time

import numpy as np

from wsner import _accel


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng):
    # embedding-gradient accumulation: one batch of 32 sentences x 30 tokens
    V, D, n = 5000, 64, 32 * 30
    idx = rng.integers(0, V, n)
    rows = rng.standard_normal((n, D)).astype(np.float32)

    def scatter(f):
        out = np.zeros((V, D), np.float32)
        f(out, idx, rows)
        return out

    yield "scatter_add_rows", lambda: scatter(_accel.scatter_add_rows_np), \
        lambda: scatter(_accel.scatter_add_rows_nb), 1e-4

    # split scoring: 512 candidates over a 3000-sentence corpus, 10 types
    N, K = 3000, 10
    counts = rng.poisson(0.25, (N, K)).astype(np.float64)
    perms = np.stack([rng.permutation(N) for _ in range(512)])
    bounds = np.array([0, 2100, 2400, 3000], dtype=np.int64)
    expected = np.array([0.7, 0.1, 0.2])
    yield "split_scores", lambda: _accel.split_scores_np(perms, counts, bounds, expected), \
        lambda: _accel.split_scores_nb(perms, counts, bounds, expected), 1e-9

    # recurrence: T=30, B=32, H=128
    T, B, H = 30, 32, 128
    xproj = rng.standard_normal((T, B, H)).astype(np.float32)
    U = (rng.standard_normal((H, H)) / np.sqrt(H)).astype(np.float32)
    hs = _accel.rnn_forward_np(xproj, U)
    dhs = rng.standard_normal((T, B, H)).astype(np.float32)
    yield "rnn_forward", lambda: _accel.rnn_forward_np(xproj, U), \
        lambda: _accel.rnn_forward_nb(xproj, U), 1e-4
    yield "rnn_backward", lambda: _accel.rnn_backward_np(hs, U, dhs), \
        lambda: _accel.rnn_backward_nb(hs, U, dhs), 1e-3


def _close(a, b, tol):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, rtol=tol, atol=tol) for x, y in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", help="write results here as well")
    args = ap.parse_args(argv)

    if not _accel.HAS_NUMBA:
        print("numba is not available (or WSNER_BACKEND=numpy); nothing to compare")
        return 1
    rng = np.random.default_rng(args.seed)
    rows = [("kernel", "numpy_ms", "numba_ms", "speedup", "dispatched_to")]
    for name, f_np, f_nb, tol in cases(rng):
        if not _close(f_np(), f_nb(), tol):  # also triggers compilation
            print(f"{name}: numba and numpy results disagree", file=sys.stderr)
            return 1
        t_np = best_of(f_np, args.repeat)
        t_nb = best_of(f_nb, args.repeat)
        used = getattr(_accel, name)
        backend = "numba" if used is getattr(_accel, f"{name}_nb", None) else "numpy"
        rows.append((name, f"{1e3 * t_np:.3f}", f"{1e3 * t_nb:.3f}", f"{t_np / t_nb:.2f}", backend))

    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
