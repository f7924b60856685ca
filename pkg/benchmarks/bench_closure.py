"""Benchmark the pointwise closure kernel: numba @njit vs pure numpy.

The pressure-equilibrium Newton solve runs at every grid point on every
right-hand-side evaluation, so it dominates nonlinear runs.  Run with
TWOFLUID_NO_NUMBA=1 to confirm the fallback path is what this script times
as "numpy".
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from twofluid import kernels


def time_fn(fn, *args, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description="Closure kernel benchmark")
    parser.add_argument("--points", type=int, default=262_144,
                        help="batch size (default: one 512x512 grid)")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    Rp = rng.uniform(0.5, 1.5, args.points)
    Rm = rng.uniform(0.5, 1.5, args.points)
    gp, gm = 1.6, 2.4
    x0 = Rp + Rm

    out_np = kernels._rho_plus_newton_np(Rp, Rm, gp, gm, x0)
    t_np = time_fn(kernels._rho_plus_newton_np, Rp, Rm, gp, gm, x0,
                   repeats=args.repeats)
    print(f"points={args.points}")
    print(f"numpy         : {t_np*1e3:9.2f} ms  ({args.points/t_np/1e6:6.2f} Mpts/s)")

    if kernels.HAVE_NUMBA:
        out_nb = np.empty_like(Rp)
        kernels._rho_plus_newton_nb(Rp, Rm, gp, gm, x0, out_nb)  # compile
        t_nb = time_fn(kernels._rho_plus_newton_nb, Rp, Rm, gp, gm, x0, out_nb,
                       repeats=args.repeats)
        print(f"numba @njit   : {t_nb*1e3:9.2f} ms  ({args.points/t_nb/1e6:6.2f} Mpts/s)")
        print(f"speedup       : {t_np/t_nb:9.2f} x")
        print(f"max |diff|    : {np.nanmax(np.abs(out_np-out_nb)):9.2e}")
    else:
        print("numba path unavailable (TWOFLUID_NO_NUMBA set or numba missing)")


if __name__ == "__main__":
    main()
