#!/usr/bin/env python3
"""Time the numba and pure-numpy variants of each hot kernel.

    python3 benchmarks/bench_kernels.py [--repeat N] [--quick]

Both variants are called directly, so the ASYMQ_DISABLE_NUMBA flag has no
effect here. Each row also checks that the two outputs are bit-identical.
"""

import argparse
import time

import numpy as np

from asymq import kernels
from asymq._accel import HAVE_NUMBA
from asymq.formats import codebook_for


def best_time(fn, args, repeat):
    fn(*args)  # warm-up, includes JIT compile for the numba variant
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(quick):
    rng = np.random.default_rng(0)
    rows, cols = (256, 1024) if quick else (1024, 4096)
    gs = 128
    gpr = -(-cols // gs)
    values = codebook_for("nf4").values64
    t = rng.standard_normal(rows * cols) * 0.5
    codes4 = rng.integers(0, 16, (rows, cols), dtype=np.uint8)
    codes3 = rng.integers(0, 8, (rows, cols), dtype=np.uint8)
    packed4 = kernels.pack_rows_np(codes4, 4)
    packed3 = kernels.pack_rows_np(codes3, 3)
    lut = rng.standard_normal((rows * gpr, 16)).astype(np.float32)
    x = rng.standard_normal((cols, 8)).astype(np.float32)
    w = rng.standard_normal((rows, cols)).astype(np.float32)
    return [
        ("nearest_index", (t, values)),
        ("pack_rows 4-bit", (codes4, 4)),
        ("pack_rows 3-bit", (codes3, 3)),
        ("unpack_rows 4-bit", (packed4, 4, cols)),
        ("unpack_rows 3-bit", (packed3, 3, cols)),
        ("ordered_matmul", (w, x)),
        ("lut_matmul 4-bit", (packed4, 4, cols, lut, gpr, gs, x)),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    print(f"{'kernel':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}  same")
    for name, call_args in cases(args.quick):
        base = name.split()[0]
        f_np = getattr(kernels, base + "_np")
        f_nb = getattr(kernels, base + "_nb")
        same = np.array_equal(np.asarray(f_np(*call_args)), np.asarray(f_nb(*call_args)))
        t_np = best_time(f_np, call_args, args.repeat)
        t_nb = best_time(f_nb, call_args, args.repeat)
        print(f"{name:<20} {t_np * 1e3:>10.2f} {t_nb * 1e3:>10.2f} {t_np / t_nb:>7.1f}x  {same}")


if __name__ == "__main__":
    main()
