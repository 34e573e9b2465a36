"""Peak and L2 control effort as the fold point moves away from the midpoint.

Usage: python scripts/waterbed_sweep.py [mode]   (mode: state_fb or output_fb, default output_fb)
"""
import sys

from foldbs.analysis import fit_decay, target_bound_constants, waterbed_metrics
from foldbs.core import Grid1D, folded_params, table1_spec
from foldbs.gains import assemble_feedback, assemble_h
from foldbs.kernel_aux import solve_qr
from foldbs.kernel_ctrl import solve_row1, solve_row2
from foldbs.sim import SimConfig, run


def gains(spec, n=101, c=5.0):
    fp = folded_params(spec)
    r1 = solve_row1(fp, c, n)
    r2 = solve_row2(r1, fp, c)
    qr = solve_qr(r2.g_trace, fp, c, c)
    return assemble_feedback(r1, assemble_h(r1, r2, qr), spec.y0, Grid1D(-1.0, 1.0, 401)), fp


def main(mode):
    print(f"{'y0':>6} {'yhat0':>6} {'gamma_fit':>9} {'gamma_tgt':>9} {'peak_U1':>8} {'peak_U2':>8} {'L2_U1':>7} {'L2_U2':>7}")
    for yh in (0.05, -0.45):
        for y0 in (0.0, -0.05, -0.15, -0.30, -0.45):
            spec = table1_spec(y0, yh)
            gt, fp = gains(spec)
            tr = run(SimConfig(spec, mode=mode), gt)
            m = waterbed_metrics(tr.controls, tr.times)
            g = fit_decay(tr.times, tr.norm_u).gamma_hat
            tgt = target_bound_constants(fp.a, 5.0, 5.0, fp.eps2)[1]
            print(f"{y0:6.2f} {yh:6.2f} {g:9.3f} {tgt:9.3f} {m['peak_U1']:8.3f} {m['peak_U2']:8.3f} "
                  f"{m['l2_time_U1']:7.3f} {m['l2_time_U2']:7.3f}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "output_fb")
