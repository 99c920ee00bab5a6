#!/usr/bin/env python3
"""Throughput comparison of the convolution backends.

Runs identical dilated 3x3 workloads through every available backend and
reports GFLOP/s counting one fused multiply-add per MAC. Workload shapes
mirror the glance stages at a half-resolution input. Backends are also
cross-checked against each other, so a fast-but-wrong kernel fails loudly
here before it ever reaches training.
"""

import argparse
import time

import numpy as np

from ikshana.kernels import available_backends, get_backend

# (n, ci, h, w, co, dilation) per glance stage at 256x512 input
WORKLOADS = [
    (1, 35, 256, 512, 32, 1),
    (1, 99, 128, 256, 32, 2),
    (1, 163, 64, 128, 32, 3),
    (2, 64, 64, 64, 64, 1),
]


def bench_forward(backend, shape, repeats):
    n, ci, h, w, co, dilation = shape
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n, ci, h, w)).astype(np.float32)
    wgt = rng.standard_normal((co, ci, 3, 3)).astype(np.float32)
    y = backend.conv2d_forward(x, wgt, dilation, dilation)  # warm up
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        backend.conv2d_forward(x, wgt, dilation, dilation)
        best = min(best, time.perf_counter() - t0)
    macs = 9 * ci * co * h * w * n
    return macs / best / 1e9, y


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repetitions per workload (best wins)")
    args = parser.parse_args()

    names = available_backends()
    print(f"backends: {', '.join(names)}")
    header = f"{'workload':>28}" + "".join(f"{n:>12}" for n in names)
    print(header)
    print("-" * len(header))
    for shape in WORKLOADS:
        n, ci, h, w, co, dilation = shape
        label = f"{n}x{ci}x{h}x{w} -> {co} d{dilation}"
        outputs = {}
        cells = []
        for name in names:
            rate, y = bench_forward(get_backend(name), shape, args.repeats)
            outputs[name] = y
            cells.append(f"{rate:>10.2f} G")
        print(f"{label:>28}" + "".join(cells))
        ref = outputs[names[0]]
        for name in names[1:]:
            gap = float(np.max(np.abs(outputs[name] - ref)))
            if gap > 1e-3:
                raise SystemExit(
                    f"backend {name!r} disagrees with {names[0]!r} "
                    f"by {gap:g} on {label}")
    print("all backends agree on every workload")


if __name__ == "__main__":
    main()
