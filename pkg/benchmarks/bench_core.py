"""Compiled core vs pure-Python fallback on the hot kernels.

    python3 benchmarks/bench_core.py [--n 200000] [--reps 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ebf import _purepy

try:
    from ebf import _speedups
except ImportError:
    _speedups = None


def best_of(fn, reps: int) -> float:
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(n: int):
    rng = np.random.default_rng(0)
    arrivals = np.cumsum(rng.exponential(1 / 9.1, n) * 1e9).astype(np.int64)
    services = (rng.exponential(1 / 20, n) * 1e9).astype(np.int64)
    img = rng.standard_normal((256, 256)).astype(np.float32)
    w = rng.standard_normal((5, 5)).astype(np.float32)
    return {
        f"fifo_schedule k=1 n={n}": lambda m: m.fifo_schedule(arrivals, services, 1),
        f"fifo_schedule k=4 n={n}": lambda m: m.fifo_schedule(arrivals, services // 4, 4),
        "conv2d_valid 256x256 * 5x5": lambda m: m.conv2d_valid(img, w, 1),
        "pool2d max 256x256 k=3": lambda m: m.pool2d(img, 3, 1, False),
        "pool2d avg 256x256 k=3": lambda m: m.pool2d(img, 3, 1, True),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()
    if _speedups is None:
        print("compiled extension not built; run: python3 setup.py build_ext --inplace")
    print(f"{'case':<32} {'python ms':>10} {'compiled ms':>12} {'speedup':>8}")
    for name, fn in cases(args.n).items():
        py = best_of(lambda: fn(_purepy), args.reps)
        if _speedups is None:
            print(f"{name:<32} {py * 1e3:10.2f} {'-':>12} {'-':>8}")
            continue
        c = best_of(lambda: fn(_speedups), args.reps)
        print(f"{name:<32} {py * 1e3:10.2f} {c * 1e3:12.2f} {py / c:7.1f}x")


if __name__ == "__main__":
    main()
