#!/usr/bin/env python3
"""Benchmark the compiled split-search kernels against the NumPy fallback.

Times the raw best_split call and a full boosted fit at several sizes, and
verifies along the way that both backends return identical results.

Usage: python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from terracv import _kernels
from terracv.gbrt import GBRTParams, fit_gbrt


def _split_inputs(rng, n, p):
    X = np.ascontiguousarray(rng.normal(size=(n, p)))
    g = rng.normal(size=n)
    order = np.ascontiguousarray(np.argsort(X.T, axis=1, kind="stable"), dtype=np.int32)
    return order, X, g


def bench_split(repeats):
    rng = np.random.default_rng(0)
    print(f"{'best_split':<28}{'python':>12}{'compiled':>12}{'speedup':>10}")
    for n, p in [(1_000, 20), (10_000, 50), (100_000, 50), (200_000, 200)]:
        order, X, g = _split_inputs(rng, n, p)
        times = {}
        results = {}
        for backend in _kernels.available_backends():
            _kernels.set_backend(backend)
            _kernels.best_split(order, X, g, 5)  # warm up
            t0 = time.perf_counter()
            for _ in range(repeats):
                results[backend] = _kernels.best_split(order, X, g, 5)
            times[backend] = (time.perf_counter() - t0) / repeats
        if len(results) == 2 and results["python"] != results["compiled"]:
            raise AssertionError(f"backend mismatch at n={n}, p={p}: {results}")
        py = times.get("python")
        cy = times.get("compiled")
        label = f"n={n:>7} p={p:>4}"
        if cy is None:
            print(f"{label:<28}{py * 1e3:>10.2f}ms{'-':>12}{'-':>10}")
        else:
            print(f"{label:<28}{py * 1e3:>10.2f}ms{cy * 1e3:>10.2f}ms{py / cy:>9.1f}x")


def bench_fit(repeats):
    rng = np.random.default_rng(1)
    print(f"\n{'gbrt fit':<28}{'python':>12}{'compiled':>12}{'speedup':>10}")
    for n, p, trees, depth in [(2_000, 10, 100, 4), (5_000, 30, 100, 6), (20_000, 50, 50, 6)]:
        X = rng.normal(size=(n, p))
        y = X[:, 0] * 2 + np.sin(3 * X[:, 1]) + rng.normal(size=n) * 0.3
        params = GBRTParams(n_trees=trees, max_depth=depth, seed=3)
        times = {}
        preds = {}
        for backend in _kernels.available_backends():
            _kernels.set_backend(backend)
            t0 = time.perf_counter()
            for _ in range(repeats):
                model = fit_gbrt(X, y, params)
            times[backend] = (time.perf_counter() - t0) / repeats
            preds[backend] = model.predict(X[:100])
        if len(preds) == 2 and not np.array_equal(preds["python"], preds["compiled"]):
            raise AssertionError(f"fit mismatch at n={n}")
        py = times.get("python")
        cy = times.get("compiled")
        label = f"n={n:>6} p={p:>3} t={trees} d={depth}"
        if cy is None:
            print(f"{label:<28}{py:>11.3f}s{'-':>12}{'-':>10}")
        else:
            print(f"{label:<28}{py:>11.3f}s{cy:>11.3f}s{py / cy:>9.1f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    print(f"available backends: {_kernels.available_backends()}")
    bench_split(args.repeats)
    bench_fit(max(1, args.repeats // 3))


if __name__ == "__main__":
    main()
