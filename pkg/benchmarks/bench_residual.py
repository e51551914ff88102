"""Residual computation: numba kernels against the pure numpy fallback.

    python benchmarks/bench_residual.py [--sizes 64 96 128] [--repeat 3]
"""
import argparse
import time

import numpy as np

from selfsim_anomaly.residual import ResidualParams, compute_residual


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 96, 128])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--patch-side", type=int, default=8)
    ap.add_argument("--neighbors", type=int, default=16)
    args = ap.parse_args()

    params = ResidualParams(patch_side=args.patch_side, n_neighbors=args.neighbors)
    rng = np.random.default_rng(0)
    # compile outside the timed region
    compute_residual(rng.uniform(0, 255, (24, 24, 3)), params, backend="numba")

    print(f"patch {params.patch_side}x{params.patch_side}, n={params.n_neighbors}, best of {args.repeat}")
    print(f"{'size':>6} {'numba s':>9} {'numpy s':>9} {'speedup':>8} {'max |diff|':>11}")
    for size in args.sizes:
        img = rng.uniform(0, 255, (size, size, 3))
        t_nb, r_nb = best_time(lambda: compute_residual(img, params, backend="numba"), args.repeat)
        t_np, r_np = best_time(lambda: compute_residual(img, params, backend="numpy"), args.repeat)
        diff = float(np.max(np.abs(r_nb - r_np)))
        print(f"{size:>6} {t_nb:>9.3f} {t_np:>9.3f} {t_np / t_nb:>7.1f}x {diff:>11.2e}")


if __name__ == "__main__":
    main()
