"""Benchmark the compiled convolution core against the numpy fallback.

Runs forward and backward over encoder- and decoder-shaped workloads and
reports microseconds per call, effective GFLOP/s, and the speedup of the
compiled path. Also spot-checks that both backends produce bit-identical
forward results on each shape.

    python3 benchmarks/bench_kernels.py [--iters N] [--dtype float32]
"""

import argparse
import time

import numpy as np

from gfpc import kernels

# (label, cin, h, w, cout, k, stride, padding)
SHAPES = [
    ("enc s0 64px", 3, 64, 64, 16, 3, 2, 1),
    ("enc s1 32px", 16, 32, 32, 32, 3, 2, 1),
    ("enc s2 16px", 32, 16, 16, 64, 3, 2, 1),
    ("enc s3 8px", 64, 8, 8, 128, 3, 2, 1),
    ("dec u0 8px", 128, 8, 8, 64, 3, 1, 1),
    ("dec u1 16px", 64, 16, 16, 32, 3, 1, 1),
    ("dec u2 32px", 32, 32, 32, 16, 3, 1, 1),
]


def flops(cin, h, w, cout, k, stride, padding):
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    return 2.0 * cout * ho * wo * cin * k * k


def bench(fn, iters):
    fn()  # warm up
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(iters):
            fn()
        best = min(best, (time.perf_counter() - t0) / iters)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=20)
    ap.add_argument("--dtype", choices=["float32", "float64"],
                    default="float32")
    args = ap.parse_args()

    if not kernels.compiled_available():
        print("compiled extension not importable; nothing to compare")
        return

    dtype = np.dtype(args.dtype)
    rng = np.random.default_rng(0)
    hdr = (f"{'shape':14s} {'dir':4s} {'compiled us':>12s} "
           f"{'numpy us':>12s} {'compiled GF':>12s} {'speedup':>8s}")
    print(f"dtype={args.dtype} iters={args.iters}")
    print(hdr)
    print("-" * len(hdr))
    for label, cin, h, w, cout, k, stride, padding in SHAPES:
        x = rng.standard_normal((cin, h, w)).astype(dtype)
        wt = rng.standard_normal((cout, cin, k, k)).astype(dtype)
        fl = flops(cin, h, w, cout, k, stride, padding)

        kernels.set_backend("compiled")
        out_c = kernels.conv2d(x, wt, stride, padding)
        g = rng.standard_normal(out_c.shape).astype(dtype)
        t_cf = bench(lambda: kernels.conv2d(x, wt, stride, padding),
                     args.iters)
        t_cb = bench(
            lambda: kernels.conv2d_backward(x, wt, g, stride, padding),
            args.iters)

        kernels.set_backend("numpy")
        out_n = kernels.conv2d(x, wt, stride, padding)
        t_nf = bench(lambda: kernels.conv2d(x, wt, stride, padding),
                     args.iters)
        t_nb = bench(
            lambda: kernels.conv2d_backward(x, wt, g, stride, padding),
            args.iters)
        kernels.set_backend("auto")

        tag = "" if np.array_equal(out_c, out_n) else "  FORWARD MISMATCH"
        print(f"{label:14s} fwd  {t_cf * 1e6:12.1f} {t_nf * 1e6:12.1f} "
              f"{fl / t_cf / 1e9:12.2f} {t_nf / t_cf:7.1f}x{tag}")
        print(f"{label:14s} bwd  {t_cb * 1e6:12.1f} {t_nb * 1e6:12.1f} "
              f"{3 * fl / t_cb / 1e9:12.2f} {t_nb / t_cb:7.1f}x")


if __name__ == "__main__":
    main()
