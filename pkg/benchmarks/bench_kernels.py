"""Throughput comparison of the numba and numpy kernel backends.

Times the two hot loops behind index search and k-means — dense dot-product
scoring and nearest-centroid assignment — under both backends and prints a
speedup table.  The numba path is warmed up first so JIT compilation never
lands inside a timed region, and both backends are checked for agreement on
every workload before timing.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 20] [--quick]
"""

import argparse
import os
import statistics
import time

import numpy as np

from ctxgenie.kernels import ENV_FLAG, HAS_NUMBA, assign_clusters, dot_scores

DOT_SHAPES = [(10_000, 64), (100_000, 64), (100_000, 384)]
ASSIGN_SHAPES = [(10_000, 16, 8), (50_000, 32, 16), (100_000, 64, 8)]
QUICK_DOT_SHAPES = [(10_000, 64)]
QUICK_ASSIGN_SHAPES = [(10_000, 16, 8)]


def time_under(backend, fn, repeats):
    os.environ[ENV_FLAG] = backend
    samples = []
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - started)
    return statistics.median(samples)


def check_agreement(backend_a, backend_b, fn):
    os.environ[ENV_FLAG] = backend_a
    first = fn()
    os.environ[ENV_FLAG] = backend_b
    second = fn()
    if isinstance(first, tuple):
        labels_a, dists_a = first
        labels_b, dists_b = second
        assert np.array_equal(labels_a, labels_b), "backend label mismatch"
        np.testing.assert_allclose(dists_a, dists_b, rtol=1e-12, atol=1e-12)
    else:
        np.testing.assert_allclose(first, second, rtol=1e-12, atol=1e-12)


def run(repeats, quick):
    rng = np.random.Generator(np.random.PCG64(0))
    rows = []

    for n, d in QUICK_DOT_SHAPES if quick else DOT_SHAPES:
        matrix = rng.normal(size=(n, d))
        query = rng.normal(size=d)
        fn = lambda m=matrix, q=query: dot_scores(m, q)
        fn()  # numba warm-up / JIT compile
        check_agreement("numba", "numpy", fn)
        t_numba = time_under("numba", fn, repeats)
        t_numpy = time_under("numpy", fn, repeats)
        rows.append((f"dot_scores {n}x{d}", t_numba, t_numpy))

    for n, k, d in QUICK_ASSIGN_SHAPES if quick else ASSIGN_SHAPES:
        points = rng.normal(size=(n, d))
        centroids = rng.normal(size=(k, d))
        fn = lambda p=points, c=centroids: assign_clusters(p, c)
        fn()
        check_agreement("numba", "numpy", fn)
        t_numba = time_under("numba", fn, repeats)
        t_numpy = time_under("numpy", fn, repeats)
        rows.append((f"assign_clusters {n}x{d} k={k}", t_numba, t_numpy))

    width = max(len(r[0]) for r in rows)
    print(f"{'workload':<{width}}  {'numba (ms)':>12}  {'numpy (ms)':>12}  {'speedup':>8}")
    for name, t_numba, t_numpy in rows:
        print(
            f"{name:<{width}}  {t_numba * 1e3:>12.3f}  {t_numpy * 1e3:>12.3f}  "
            f"{t_numpy / t_numba:>7.2f}x"
        )


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20, help="timed runs per workload (median reported)")
    parser.add_argument("--quick", action="store_true", help="one small shape per kernel")
    args = parser.parse_args()
    if not HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare against the numpy fallback")
    previous = os.environ.get(ENV_FLAG)
    try:
        run(args.repeats, args.quick)
    finally:
        if previous is None:
            os.environ.pop(ENV_FLAG, None)
        else:
            os.environ[ENV_FLAG] = previous


if __name__ == "__main__":
    main()
