"""Benchmark the two training-kernel backends against each other.

Runs the same full-batch momentum-GD workload through the numba kernels
and the pure-numpy kernels, then prints per-shape timings.  The workloads
span the width range the scaling search visits: at small hidden widths the
compiled loops win (call overhead dominates), at large widths the BLAS
matmuls behind the numpy path take over.

Usage:
    python3 benchmarks/bench_kernels.py [--epochs 2000] [--repeat 3]

Requires the numba backend (install numba, leave FTC_NUMBA unset or =1).
"""

from __future__ import annotations

import argparse
import math
import time

import numpy as np

from ftc.experiment import kernels


def _init_two(rng, d, h):
    return (
        rng.standard_normal((d, h)) * math.sqrt(2.0 / d),
        np.zeros(h),
        np.zeros(h),
        np.zeros(1),
    )


def _init_three(rng, d, d1, d2):
    return (
        rng.standard_normal((d, d1)) * math.sqrt(2.0 / d),
        np.zeros(d1),
        rng.standard_normal((d1, d2)) * math.sqrt(2.0 / d1),
        np.zeros(d2),
        np.zeros(d2),
        np.zeros(1),
    )


def bench(fn, args, repeat):
    """Best-of-repeat wall time; every run gets fresh parameter copies."""
    best = math.inf
    loss = None
    for _ in range(repeat):
        fresh = tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args)
        t0 = time.perf_counter()
        loss = fn(*fresh)
        best = min(best, time.perf_counter() - t0)
    return best, loss


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--K", type=int, default=200)
    ap.add_argument("--d", type=int, default=10)
    args = ap.parse_args(argv)

    if not kernels.USING_NUMBA:
        raise SystemExit(
            "numba backend unavailable (FTC_NUMBA=0 or numba missing); "
            "nothing to compare"
        )

    rng = np.random.default_rng(0)
    X = rng.standard_normal((args.K, args.d))
    y = rng.uniform(-1.0, 1.0, args.K)

    workloads = []
    for d1 in (2, 4, 8, 16, 32):
        params = _init_three(rng, args.d, d1, d1)
        workloads.append(
            (
                f"three-layer {d1}x{d1}",
                kernels._train_three_layer_numba,
                kernels.train_three_layer_numpy,
                (X, y, *params, 0.05, 0.9, args.epochs),
            )
        )
    # wide two-layer net needs the gentler pre-training step size
    params = _init_two(rng, args.d, 256)
    workloads.append(
        (
            "two-layer h=256",
            kernels._train_two_layer_numba,
            kernels.train_two_layer_numpy,
            (X, y, *params, 0.02, 0.9, args.epochs),
        )
    )

    print(f"K={args.K} d={args.d} epochs={args.epochs} best of {args.repeat}")
    print(f"{'kernel':>18}  {'numba':>9}  {'numpy':>9}  {'speedup':>7}  |dloss|")
    for name, fn_nb, fn_np, call in workloads:
        bench(fn_nb, call, 1)  # warm-up compile outside the timed region
        t_nb, l_nb = bench(fn_nb, call, args.repeat)
        t_np, l_np = bench(fn_np, call, args.repeat)
        print(
            f"{name:>18}  {t_nb:8.3f}s  {t_np:8.3f}s  "
            f"{t_np / t_nb:6.1f}x  {abs(l_nb - l_np):.1e}"
        )


if __name__ == "__main__":
    main()
