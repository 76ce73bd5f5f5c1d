"""Timing comparison of the compiled kernels against the numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeats 20]

Each kernel is timed on sizes typical for message aggregation and circular
correlation in this package (thousands of edge messages, embedding widths
up to a few hundred). Reports best-of-N wall time per call and the ratio.
"""

import argparse
import time

import numpy as np

from tkgcast.kernels import reference

try:
    from tkgcast.kernels import _speedups
except ImportError:
    _speedups = None


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_scatter(impl, edges, width, nodes, repeats):
    rng = np.random.default_rng(0)
    rows = rng.standard_normal((edges, width))
    idx = rng.integers(0, nodes, size=edges)
    out = np.zeros((nodes, width))
    return best_of(lambda: impl.scatter_add_rows(out, idx, rows), repeats)


def bench_circular(impl, rows, width, repeats, kind):
    rng = np.random.default_rng(1)
    a = rng.standard_normal((rows, width))
    b = rng.standard_normal((rows, width))
    fn = getattr(impl, kind)
    return best_of(lambda: fn(a, b), repeats)


CASES = [
    ("scatter_add_rows 2k edges x 64", lambda impl, n: bench_scatter(impl, 2000, 64, 500, n)),
    ("scatter_add_rows 20k edges x 200", lambda impl, n: bench_scatter(impl, 20000, 200, 5000, n)),
    ("circular_correlate 1k x 64", lambda impl, n: bench_circular(impl, 1000, 64, n, "circular_correlate")),
    ("circular_correlate 2k x 128", lambda impl, n: bench_circular(impl, 2000, 128, n, "circular_correlate")),
    ("circular_convolve 1k x 64", lambda impl, n: bench_circular(impl, 1000, 64, n, "circular_convolve")),
    ("circular_convolve 2k x 128", lambda impl, n: bench_circular(impl, 2000, 128, n, "circular_convolve")),
]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20, help="take the best of N runs")
    args = parser.parse_args()

    if _speedups is None:
        print("compiled extension not built; showing numpy fallback only")
    header = f"{'kernel':38s} {'numpy':>12s} {'compiled':>12s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for name, runner in CASES:
        numpy_t = runner(reference, args.repeats)
        if _speedups is not None:
            compiled_t = runner(_speedups, args.repeats)
            ratio = numpy_t / compiled_t
            print(f"{name:38s} {numpy_t * 1e3:10.3f}ms {compiled_t * 1e3:10.3f}ms {ratio:7.2f}x")
        else:
            print(f"{name:38s} {numpy_t * 1e3:10.3f}ms {'-':>12s} {'-':>8s}")


if __name__ == "__main__":
    main()
