#!/usr/bin/env python3
"""Time the numba and pure-numpy kernels on synthetic graphs.

    python3 benchmarks/bench_kernels.py --sizes 100 400 1000 --repeat 5

The first numba call compiles (or loads from cache), so it runs once
before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cpgkit import _kernels as K
from cpgkit.corpus import random_trace
from cpgkit.graph import hb_index
from cpgkit.recorder import record


def synthetic(n: int, t: int, rng):
    """Clocks consistent with program order on ``t`` threads of ``n`` vertices."""
    threads = np.sort(rng.integers(0, t, n))
    indices = np.zeros(n, dtype=np.int64)
    for col in range(t):
        sel = np.flatnonzero(threads == col)
        indices[sel] = np.arange(sel.size)
    clocks = rng.integers(0, max(1, n // t), (n, t))
    clocks[np.arange(n), threads] = indices
    return clocks.astype(np.int64), threads.astype(np.int64), indices


def best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 300, 800])
    ap.add_argument("--threads", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not K.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<20}{'n':>7}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for n in args.sizes:
        clocks, threads, indices = synthetic(n, args.threads, rng)
        hb = K.hb_matrix_numpy(clocks, threads, indices)
        adj = np.triu(rng.random((n, n)) < 2.0 / n, 1)
        writers = np.sort(rng.choice(n, size=max(1, n // 4), replace=False)).astype(np.int64)
        readers = np.arange(n, dtype=np.int64)
        cases = [
            ("hb_matrix", K.hb_matrix_numpy, K.hb_matrix_numba, (clocks, threads, indices)),
            ("transitive_closure", K.transitive_closure_numpy, K.transitive_closure_numba, (adj,)),
            ("data_pairs", K.data_pairs_numpy, K.data_pairs_numba, (hb, writers, readers)),
        ]
        for name, f_np, f_nb, a in cases:
            f_nb(*a)  # compile
            t_np = best(lambda: f_np(*a), args.repeat)
            t_nb = best(lambda: f_nb(*a), args.repeat)
            print(f"{name:<20}{n:>7}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.1f}x")

    # end to end on the random corpus, active backend only
    recs = [record(random_trace(s)) for s in range(200)]
    t0 = time.perf_counter()
    for rec in recs:
        hb_index(rec)
    print(f"\nhb_index over 200 corpus traces ({K.backend()}): {(time.perf_counter() - t0) * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
