#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Runs each hot kernel on training-realistic shapes with both backends and
prints a timing table. Invoke from the repo root:

    python3 benchmarks/bench_kernels.py [--repeats 50]
"""

import argparse
import time

import numpy as np

from slimdet.kernels import _numpy

try:
    from slimdet.kernels import _numba
except ImportError:
    _numba = None


def timeit(fn, args, repeats):
    fn(*args)  # warmup (and JIT compile for the numba path)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def cases(rng):
    # adamw over a compression-module-sized parameter block
    n = 1024 * 256
    yield "adamw_update (262k params)", "adamw_update", (
        rng.normal(size=n), rng.normal(size=n),
        np.zeros(n), np.zeros(n), 3, 1e-3, 0.9, 0.999, 1e-8, 0.01)
    yield "softmax_rows (16x50)", "softmax_rows", (rng.normal(size=(16, 50)),)
    yield "standardize_fwd (16x12800)", "standardize_fwd", (
        rng.normal(size=(16, 256 * 50)), 1e-5)
    w = rng.random(size=(16, 50))
    w /= w.sum(axis=1, keepdims=True)
    yield "weighted_stats_fwd (16x1024x50)", "weighted_stats_fwd", (
        rng.normal(size=(16, 1024, 50)), w)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    rows = []
    for label, name, case_args in cases(rng):
        t_np = timeit(getattr(_numpy, name), case_args, args.repeats)
        if _numba is not None:
            t_nb = timeit(getattr(_numba, name), case_args, args.repeats)
            rows.append((label, t_np, t_nb, t_np / t_nb))
        else:
            rows.append((label, t_np, float("nan"), float("nan")))
    print(f"{'kernel':<34} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for label, t_np, t_nb, speedup in rows:
        print(f"{label:<34} {t_np * 1e3:>9.3f}ms {t_nb * 1e3:>9.3f}ms {speedup:>7.2f}x")
    if _numba is None:
        print("(numba unavailable: numpy fallback only)")


if __name__ == "__main__":
    main()
