#!/usr/bin/env python3
"""Timing and agreement check for the numba vs numpy kernel paths.

Jits the kernel sources directly, so both paths run in one process no matter
what LEADERLENS_BACKEND says. Reports best-of-N wall times plus the maximum
disagreement; the two backends differ only in reduction order, so they must
agree to near machine precision. Exits nonzero when agreement breaks.

Usage: python3 benchmarks/bench_backends.py [--repeats 7] [--sizes 200,500,1000]
"""

import argparse
import sys
import time

import numpy as np

from leaderlens import special, tsne
from leaderlens._backend import HAVE_NUMBA


def best_of(fn, repeats):
    fn()  # warmup (and jit compile)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_studentized_range(jit, repeats, rows):
    rng = np.random.default_rng(1)
    qs = np.sort(rng.uniform(0.05, 8.0, 256))
    for k, df in ((3, 5.0), (8, 30.0), (15, 120.0)):
        s_nodes, s_w, s_dens = special._outer_scale_nodes(df)
        s_wdens = s_w * s_dens
        ref = special._sr_cdf_batch_numpy(qs, k, s_nodes, s_wdens)
        got = jit(qs, k, special._Z_NODES,
                  special._Z_WEIGHTS * special._Z_DENS, special._PHI_Z,
                  s_nodes, s_wdens)
        t_np = best_of(lambda: special._sr_cdf_batch_numpy(
            qs, k, s_nodes, s_wdens), repeats)
        t_nb = best_of(lambda: jit(
            qs, k, special._Z_NODES, special._Z_WEIGHTS * special._Z_DENS,
            special._PHI_Z, s_nodes, s_wdens), repeats)
        rows.append((f"sr_cdf k={k} df={df:g} (256 q)", t_np, t_nb,
                     float(np.max(np.abs(np.clip(got, 0.0, 1.0) - ref)))))


def bench_tsne_gradient(jit, repeats, sizes, rows):
    rng = np.random.default_rng(2)
    for n in sizes:
        y = np.ascontiguousarray(rng.normal(0.0, 1.0, (n, 2)))
        p = rng.uniform(0.0, 1.0, (n, n))
        p = (p + p.T) / 2.0
        np.fill_diagonal(p, 0.0)
        p /= p.sum()
        ref = tsne._descent_grad_numpy(y, p)
        got = jit(y, p)
        scale = max(1.0, float(np.max(np.abs(ref))))
        t_np = best_of(lambda: tsne._descent_grad_numpy(y, p), repeats)
        t_nb = best_of(lambda: jit(y, p), repeats)
        rows.append((f"tsne_grad n={n}", t_np, t_nb,
                     float(np.max(np.abs(got - ref))) / scale))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--sizes", default="200,500,1000",
                    help="comma-separated t-SNE point counts")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not importable; nothing to compare against")
        return 1
    from numba import njit

    sr_jit = njit(cache=True)(special._sr_cdf_batch_kernel)
    grad_jit = njit(cache=True)(tsne._descent_grad_kernel)

    rows = []
    bench_studentized_range(sr_jit, args.repeats, rows)
    sizes = [int(s) for s in args.sizes.split(",") if s]
    bench_tsne_gradient(grad_jit, args.repeats, sizes, rows)

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy':>9}  {'numba':>9}  "
          f"{'speedup':>7}  {'max|diff|':>9}")
    worst = 0.0
    for name, t_np, t_nb, diff in rows:
        print(f"{name:<{width}}  {t_np * 1e3:>7.2f}ms  {t_nb * 1e3:>7.2f}ms  "
              f"{t_np / t_nb:>6.1f}x  {diff:>9.2e}")
        worst = max(worst, diff)
    if worst > 1e-10:
        print(f"backend disagreement {worst:.2e} exceeds 1e-10", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
