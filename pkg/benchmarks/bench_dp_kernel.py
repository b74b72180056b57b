"""Time the compiled and pure-Python DP kernels on identical tables.

Usage: python benchmarks/bench_dp_kernel.py [--n 2000] [--m 16] [--repeat 3]
"""

import argparse
import time

import numpy as np

from corrjoin.core_types import sort_and_prefix
from corrjoin.ocap import KERNEL, partition_dp


def workloads(n, seed):
    rng = np.random.default_rng(seed)
    ranks = np.arange(1, n + 1)
    yield "uniform", np.full(n, 8)
    yield "zipf1.0", np.maximum(1, (8 * n * ranks ** -1.0 / (ranks ** -1.0).sum()).astype(int))
    yield "random", rng.integers(1, 50, n)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        value = fn()
        times.append(time.perf_counter() - t0)
    return min(times), value


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=2000)
    parser.add_argument("--m", type=int, default=16)
    parser.add_argument("--chunk", type=int, default=None, help="c_R (default n // m)")
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--pruning", default="both",
                        choices=("none", "weakly_ordered", "divisible", "both"))
    args = parser.parse_args()
    c_R = args.chunk or max(1, args.n // args.m)
    if KERNEL != "cython":
        print("compiled kernel unavailable; rebuild with `pip install -e . --no-build-isolation`")
        return
    print(f"n={args.n} m={args.m} c_R={c_R} pruning={args.pruning}")
    print(f"{'workload':10s} {'cython s':>10s} {'python s':>10s} {'speedup':>8s}")
    for name, raw in workloads(args.n, 0):
        ct = sort_and_prefix(raw)
        fast, a = best_of(lambda: partition_dp(ct, ct.n, args.m, c_R, args.pruning,
                                               kernel="cython").optimum, args.repeat)
        slow, b = best_of(lambda: partition_dp(ct, ct.n, args.m, c_R, args.pruning,
                                               kernel="python").optimum, args.repeat)
        assert a == b, (name, a, b)
        print(f"{name:10s} {fast:10.4f} {slow:10.4f} {slow / fast:7.1f}x")


if __name__ == "__main__":
    main()
