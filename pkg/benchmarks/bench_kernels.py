#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

The sizes default to the shapes a training epoch actually produces (closed
neighborhoods of a few thousand nodes at embedding width 32). Run directly:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --nodes 20000 --pairs 120000 --width 64
"""

import argparse
import time

import numpy as np

from hcgnn import kernels


def make_inputs(rng, n_rows, n_segments, pairs, width):
    x = rng.normal(size=(n_rows, width))
    indices = rng.integers(0, n_rows, size=pairs).astype(np.int64)
    cuts = np.sort(rng.integers(0, pairs + 1, size=n_segments - 1))
    indptr = np.concatenate([[0], cuts, [pairs]]).astype(np.int64)
    w = rng.normal(size=pairs)
    gy = rng.normal(size=(n_segments, width))
    idx = rng.integers(0, n_rows, size=pairs).astype(np.int64)
    src = rng.normal(size=(pairs, width))
    return x, indices, indptr, w, gy, idx, src


def bench(fn, args, repeats):
    fn(*args)  # warm up (and JIT-compile the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--nodes", type=int, default=5000)
    parser.add_argument("--segments", type=int, default=5000)
    parser.add_argument("--pairs", type=int, default=30000)
    parser.add_argument("--width", type=int, default=32)
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    if not kernels.HAVE_NUMBA:
        print("numba is not importable; only the numpy path can run")
        return

    rng = np.random.default_rng(0)
    x, indices, indptr, w, gy, idx = make_inputs(
        rng, args.nodes, args.segments, args.pairs, args.width
    )
    cases = [
        ("seg_sum", kernels.seg_sum_nb, kernels.seg_sum_np, (x, indices, indptr)),
        (
            "seg_mean_backward",
            kernels.seg_mean_backward_nb,
            kernels.seg_mean_backward_np,
            (gy, indices, indptr, args.nodes),
        ),
        (
            "seg_weighted_sum",
            kernels.seg_weighted_sum_nb,
            kernels.seg_weighted_sum_np,
            (x, indices, indptr, w),
        ),
        (
            "seg_weighted_sum_backward",
            kernels.seg_weighted_sum_backward_nb,
            kernels.seg_weighted_sum_backward_np,
            (gy, x, indices, indptr, w),
        ),
        (
            "scatter_add_rows",
            kernels.scatter_add_rows_nb,
            kernels.scatter_add_rows_np,
            (x[: args.pairs % args.nodes + 1], idx[: args.pairs % args.nodes + 1], args.nodes),
        ),
    ]
    print(
        f"nodes={args.nodes} segments={args.segments} pairs={args.pairs} "
        f"width={args.width} repeats={args.repeats}"
    )
    print(f"{'kernel':<28}{'numba (ms)':>12}{'numpy (ms)':>12}{'speedup':>10}")
    for name, fn_nb, fn_np, case_args in cases:
        t_nb = bench(fn_nb, case_args, args.repeats) * 1e3
        t_np = bench(fn_np, case_args, args.repeats) * 1e3
        print(f"{name:<28}{t_nb:>12.3f}{t_np:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
