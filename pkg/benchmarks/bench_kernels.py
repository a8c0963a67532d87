"""Compare the numba kernels with their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Both variants are importable side by side, so one process times both; the
``LITSEG_NO_NUMBA`` flag only decides which one the package uses by default.
"""
import argparse
import time

import numpy as np

from litseg import kernels


def best_of(fn, repeat):
    fn()  # warm-up (includes JIT compilation for numba)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng):
    xp = rng.normal(size=(5, 16, 66, 66)).astype(np.float32)
    pool_in = rng.normal(size=(5, 16, 64, 64)).astype(np.float32)
    mask = rng.uniform(size=(96, 96, 96)) < 0.3
    blob = np.zeros((96, 96, 96), np.uint8)
    blob[20:70, 25:75, 30:60] = 1
    a = np.argwhere(rng.uniform(size=(48, 48, 48)) < 0.03)
    b = np.argwhere(rng.uniform(size=(48, 48, 48)) < 0.03)
    sp = np.array([0.8, 0.8, 2.5])
    out, arg = kernels.maxpool_fwd_numpy(pool_in)
    return {
        "im2col 5x16x66x66 k3": (lambda f: f(xp, 3), kernels.im2col_numba, kernels.im2col_numpy),
        "maxpool fwd 5x16x64x64": (lambda f: f(pool_in), kernels.maxpool_fwd_numba, kernels.maxpool_fwd_numpy),
        "maxpool bwd 5x16x32x32": (lambda f: f(out, arg), kernels.maxpool_bwd_numba, kernels.maxpool_bwd_numpy),
        "label 96^3 26-conn": (lambda f: f(mask, 26), kernels.label_numba, kernels.label_numpy),
        "dilate 96^3 cube 7": (lambda f: f(blob, 7), kernels.dilate_cube_numba, kernels.dilate_cube_numpy),
        f"nearest {len(a)}x{len(b)} pts": (lambda f: f(a, b, sp), kernels.nearest_distances_numba,
                                           kernels.nearest_distances_numpy),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, (call, nb, npy) in cases(rng).items():
        t_nb = best_of(lambda: call(nb), args.repeat)
        t_np = best_of(lambda: call(npy), args.repeat)
        print(f"{name:<28}{t_nb * 1e3:>10.2f}{t_np * 1e3:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
