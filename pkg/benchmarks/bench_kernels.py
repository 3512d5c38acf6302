#!/usr/bin/env python3
"""Benchmark the numba kernels against the vectorized numpy fallback.

Runs every hot kernel under both backends on training-scale shapes and
prints a timing table. The numba path pays a one-off JIT compile on first
call (excluded from timings via a warmup pass).
"""

import time

import numpy as np

from catekit import kernels


def timeit(fn, *args, repeat=5):
    fn(*args)  # warmup / JIT
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(64, 8, 30, 30))
    k = rng.normal(size=(16, 8, 3, 3))
    b = rng.normal(size=16)
    g = rng.normal(size=(64, 16, 28, 28))
    pool_in = rng.normal(size=(64, 16, 28, 28))
    xf = rng.normal(size=(2000, 1024))
    yf = rng.normal(size=2000)
    idx = rng.integers(0, 2000, 2000).astype(np.int64)
    feats = np.sort(rng.choice(1024, 342, replace=False)).astype(np.int64)

    cases = [
        ("conv2d_forward", (x, k, b)),
        ("conv2d_backward", (x, k, g)),
        ("maxpool_forward", (pool_in, 2)),
        ("best_split", (xf, yf, idx, feats, 5)),
    ]
    backends = ["numpy"]
    try:
        kernels.get_impl("conv2d_forward", "numba")
        backends.append("numba")
    except RuntimeError:
        print("numba unavailable; timing the numpy backend only")

    print(f"active backend: {kernels.ACTIVE_BACKEND} (set CATEKIT_BACKEND to override)\n")
    print(f"{'kernel':18s}" + "".join(f"{be + ' (s)':>14s}" for be in backends) + f"{'speedup':>10s}")
    for name, args in cases:
        times = {be: timeit(kernels.get_impl(name, be), *args) for be in backends}
        row = f"{name:18s}" + "".join(f"{times[be]:14.4f}" for be in backends)
        if len(backends) == 2:
            row += f"{times['numpy'] / times['numba']:10.1f}x"
        print(row)

    # maxpool backward needs the recorded argmax from the forward pass
    for be in backends:
        fwd = kernels.get_impl("maxpool_forward", be)
        _, arg = fwd(pool_in, 2)
        bwd = kernels.get_impl("maxpool_backward", be)
        t = timeit(bwd, np.ascontiguousarray(pool_in[:, :, ::2, ::2]), arg, 2, 28, 28)
        print(f"{'maxpool_backward':18s}  {be}: {t:.4f}s")


if __name__ == "__main__":
    main()
