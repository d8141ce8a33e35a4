#!/usr/bin/env python3
"""Times every kernel in both backends (compiled core vs numpy fallback) on
desk-scale shapes and prints a comparison table.

Run: python3 benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import importlib
import time

import numpy as np


def _load_backends():
    from avtrack._kernels import reference
    backends = {"reference": reference}
    try:
        core = importlib.import_module("avtrack._kernels._core")
        backends["compiled"] = core
    except ImportError:
        print("compiled core not built; benchmarking reference only")
    return backends


def _cases(rng):
    t, c = 243, 64          # three 9x9 token grids at desk width
    g = 9
    x2d = rng.normal(size=(t, c))
    gamma = rng.normal(1.0, 0.1, c)
    beta = rng.normal(0.0, 0.1, c)
    y = np.abs(rng.normal(size=(t, t)))
    y /= y.sum(axis=1, keepdims=True)
    gy = rng.normal(size=(t, t))
    grid = rng.normal(size=(g, g, c))
    wconv = rng.normal(size=(3, 3, c, c // 2)) * 0.05
    bconv = np.zeros(c // 2)
    gconv = rng.normal(size=(g, g, c // 2))
    frame = rng.uniform(size=(72, 72, 3))
    scores = rng.normal(size=(t, t))

    return [
        ("softmax_rows_fwd", lambda k: k.softmax_rows_fwd(scores)),
        ("softmax_rows_bwd", lambda k: k.softmax_rows_bwd(y, gy)),
        ("layer_norm_fwd", lambda k: k.layer_norm_fwd(x2d, gamma, beta, 1e-6)),
        ("gelu_fwd", lambda k: k.gelu_fwd(x2d)),
        ("gelu_bwd", lambda k: k.gelu_bwd(x2d, x2d)),
        ("conv3x3_fwd", lambda k: k.conv3x3_fwd(grid, wconv, bconv)),
        ("conv3x3_bwd", lambda k: k.conv3x3_bwd(grid, wconv, gconv)),
        ("im2patches_fwd", lambda k: k.im2patches_fwd(frame, 8)),
        ("bilinear_crop", lambda k: k.bilinear_crop(frame, -3.0, -3.0, 1.1, 72)),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()

    backends = _load_backends()
    rng = np.random.default_rng(0)
    cases = _cases(rng)

    print(f"{'kernel':18s}" + "".join(f"{name:>14s}" for name in backends)
          + ("       speedup" if len(backends) == 2 else ""))
    for name, fn in cases:
        times = {}
        for bname, mod in backends.items():
            fn(mod)  # warmup
            t0 = time.perf_counter()
            for _ in range(args.repeats):
                fn(mod)
            times[bname] = (time.perf_counter() - t0) / args.repeats
        row = f"{name:18s}" + "".join(f"{times[b]*1e6:12.1f}us" for b in backends)
        if len(times) == 2:
            row += f"{times['reference'] / times['compiled']:12.2f}x"
        print(row)


if __name__ == "__main__":
    main()
