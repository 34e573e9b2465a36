"""Kernel PDE residuals under grid refinement for the Table-1 fold points.

Usage: python scripts/residual_convergence.py [n1 n2 ...]
"""
import sys
import time

from foldbs.analysis import kernel_pde_residual, observer_pde_residual, qr_pde_residual
from foldbs.core import folded_params, table1_spec
from foldbs.kernel_aux import solve_qr
from foldbs.kernel_ctrl import solve_row1, solve_row2
from foldbs.kernel_obs import solve_observer_kernel


def residuals(y0, n, c=5.0):
    spec = table1_spec(y0)
    fp = folded_params(spec)
    r1 = solve_row1(fp, c, n)
    r2 = solve_row2(r1, fp, c)
    qr = solve_qr(r2.g_trace, fp, c, c)
    fo = folded_params(spec, "observer")
    out = {**kernel_pde_residual(r1, r2, fp), **qr_pde_residual(qr, r2.g_trace, fp, c, c)}
    out["Phi1"] = observer_pde_residual(solve_observer_kernel(fo.lam1_fn, fo.eps1, 1.0, n))
    out["Phi2"] = observer_pde_residual(solve_observer_kernel(fo.lam2_fn, fo.eps2, 1.0, n))
    return out


def main(sizes):
    for y0 in (-0.05, -0.30):
        prev = None
        for n in sizes:
            t0 = time.perf_counter()
            res = residuals(y0, n)
            line = " ".join(f"{k}={v:.2e}" for k, v in res.items())
            print(f"y0={y0:+.2f} n={n:4d} ({time.perf_counter() - t0:4.1f}s) {line}")
            if prev:
                print("    ratios " + " ".join(f"{k}={prev[k] / res[k]:.2f}" for k in res))
            prev = res


if __name__ == "__main__":
    main([int(a) for a in sys.argv[1:]] or [101, 201])
