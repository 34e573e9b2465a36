"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line with the measured values."""
import time

import numpy as np
import pytest

from conftest import bundle, smooth_pair
from foldbs.analysis import (
    fit_decay,
    kernel_pde_residual,
    l2_norm,
    observer_pde_residual,
    qr_pde_residual,
    target_bound_constants,
    waterbed_metrics,
)
from foldbs.cli import main
from foldbs.core import Grid1D, fold, folded_params, gauge_transform, PlantSpec, polynomial, table1_spec, unfold
from foldbs.kernel_aux import apply_second_transform, invert_second_transform, solve_qr
from foldbs.kernel_ctrl import apply_volterra, invert_volterra, solve_row1, solve_row2
from foldbs.kernel_obs import bessel_phi_closed_form, solve_observer_kernel
from foldbs.sim import SimConfig, run

TABLE1_Y0 = (-0.05, -0.30)


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def test_c01_residual_convergence(capsys):
    ratios, slowest = {}, 0.0
    for y0 in TABLE1_Y0:
        res = {}
        for n in (101, 201):
            fp = folded_params(table1_spec(y0))
            t0 = time.perf_counter()
            r1 = solve_row1(fp, 5.0, n)
            r2 = solve_row2(r1, fp, 5.0)
            qr = solve_qr(r2.g_trace, fp, 5.0, 5.0)
            slowest = max(slowest, time.perf_counter() - t0)
            fo = folded_params(table1_spec(y0), "observer")
            t0 = time.perf_counter()
            obs = [solve_observer_kernel(fo.lam1_fn, fo.eps1, 1.0, n), solve_observer_kernel(fo.lam2_fn, fo.eps2, 1.0, n)]
            slowest = max(slowest, time.perf_counter() - t0)
            res[n] = {**kernel_pde_residual(r1, r2, fp), **qr_pde_residual(qr, r2.g_trace, fp, 5.0, 5.0),
                      "Phi1": observer_pde_residual(obs[0]), "Phi2": observer_pde_residual(obs[1])}
        for key in res[101]:
            ratios[(y0, key)] = res[101][key] / res[201][key]
    worst = min(ratios, key=ratios.get)
    ok = ratios[worst] >= 1.8 and slowest < 60.0
    report(capsys, 1, ok, f"min residual ratio {ratios[worst]:.3f} ({worst[1]} at y0={worst[0]}), "
                          f"threshold 1.8; slowest solve {slowest:.1f}s < 60s")


def test_c02_symmetric_collapse(capsys):
    b = bundle(0.0)
    scale = max(k.sup() for k in (b.row1.k11, b.row1.k12, b.row2.k21, b.row2.k22))
    g = float(np.max(np.abs(b.row2.g_trace)))
    pqr = max(float(np.max(np.abs(b.qr.p))), b.qr.q.sup(), b.qr.r.sup())
    ok = g <= 1e-12 * (1 + scale) and pqr < 1e-10
    report(capsys, 2, ok, f"|g|_inf = {g:.2e} (limit {1e-12 * (1 + scale):.2e}), max(|p|,|q|,|r|) = {pqr:.2e} < 1e-10")


def test_c03_bessel_oracle(capsys):
    worst_rel, worst_diag, printed = 0.0, 0.0, 0.0
    for lam in (0.0, 2.0):
        ok_ = solve_observer_kernel(lam, 1.0, 1.0, 201)
        x = ok_.Phi.nodes
        X, Y = np.meshgrid(x, x, indexing="ij")
        inner = (Y > 0) & (Y < X) & (X < 1)
        exact = bessel_phi_closed_form(X[inner], Y[inner], lam, 1.0, 1.0)
        rel = np.abs(np.abs(ok_.Phi.values[inner]) - np.abs(exact)) / np.abs(exact)
        worst_rel = max(worst_rel, float(rel.max()))
        d = np.arange(ok_.n)
        diag = np.abs(np.abs(ok_.Phi.values[d, d]) - (lam + 1.0) * (1 - x) / 2)
        worst_diag = max(worst_diag, float(diag.max()))
        alt = bessel_phi_closed_form(X[inner], Y[inner], lam, 1.0, 1.0, z_form="printed")
        printed = max(printed, float(np.max(np.abs(np.abs(alt) - np.abs(exact)) / np.abs(exact))))
    ok = worst_rel < 1e-6 and worst_diag < 1e-8
    report(capsys, 3, ok, f"max rel error vs closed form {worst_rel:.2e} < 1e-6, diagonal error {worst_diag:.2e} < 1e-8 "
                          f"(as-printed Bessel argument deviates by up to {printed:.2f})")


def test_c04_open_loop(capsys):
    spec = table1_spec()
    tr = run(SimConfig(spec, mode="open"))
    fit = fit_decay(tr.times, tr.norm_u, window=(1.0, 3.0))
    growth = -fit.gamma_hat
    n = 401
    y = np.linspace(-1, 1, n)[1:-1]
    h = 2.0 / (n - 1)
    A = (np.diag(np.full(y.size, -2.0)) + np.diag(np.ones(y.size - 1), 1) + np.diag(np.ones(y.size - 1), -1)) / h**2
    lam_max = float(np.linalg.eigvalsh(A + np.diag(spec.lambda_bar(y))).max())
    ok = growth > 0 and lam_max > 0 and abs(growth - lam_max) <= 0.05 * lam_max
    report(capsys, 4, ok, f"fitted growth {growth:.4f} on [1,3], dense principal eigenvalue {lam_max:.4f}, "
                          f"rel diff {abs(growth - lam_max) / lam_max:.2e} <= 5%")


def test_c05_state_feedback_decay(capsys):
    parts, ok = [], True
    for y0 in TABLE1_Y0:
        b = bundle(y0)
        t0 = time.perf_counter()
        tr = run(SimConfig(b.spec, mode="state_fb", grid=Grid1D(-1, 1, 401), dt=0.005), b.gains)
        took = time.perf_counter() - t0
        g_hat = fit_decay(tr.times, tr.norm_u).gamma_hat
        gamma = target_bound_constants(b.fp.a, 5.0, 5.0, b.fp.eps2)[1]
        ok &= g_hat >= 0.9 * gamma and took < 30.0
        parts.append(f"y0={y0}: gamma_hat {g_hat:.3f} >= 0.9*{gamma:.4f} ({took:.1f}s)")
    ok &= target_bound_constants(1.0, 5.0, 5.0, 1.0)[1] == 5.25
    report(capsys, 5, ok, "; ".join(parts))


def _valid_error_fit(tr):
    # the open-loop plant grows, so the error is only resolved above the round-off floor
    sel = tr.norm_err > 1e-9 * tr.norm_u
    t = tr.times[sel]
    return fit_decay(t, tr.norm_err[sel], window=(t[-1] / 2, t[-1]))


def test_c06_observer_convergence(capsys):
    parts, ok = [], True
    for yh in (0.05, -0.45):
        spec = table1_spec(-0.05, yh)
        rates = []
        for cc in (1.0, 2.0):
            tr = run(SimConfig(spec, mode="observer", cc1=cc, cc2=cc))
            rates.append(_valid_error_fit(tr).gamma_hat)
        ok &= rates[0] > 0 and rates[1] > rates[0]
        parts.append(f"yhat0={yh}: rate {rates[0]:.3f} (c=1) -> {rates[1]:.3f} (c=2)")
    report(capsys, 6, ok, "; ".join(parts) + "; positive and improving")


def test_c07_separation(capsys):
    parts, ok = [], True
    for y0 in TABLE1_Y0:
        b = bundle(y0)
        state = fit_decay(*((lambda t: (t.times, t.norm_u))(run(SimConfig(b.spec, mode="state_fb"), b.gains)))).gamma_hat
        for yh in (0.05, -0.45):
            spec = table1_spec(y0, yh)
            ob = run(SimConfig(spec, mode="observer"))
            of = run(SimConfig(spec, mode="output_fb"), b.gains)
            obs_rate = _valid_error_fit(ob).gamma_hat
            comb = fit_decay(of.times, of.norm_u).gamma_hat
            # trajectory agreement relative to the size of the error trajectory
            dev = np.max(np.abs(of.error_snapshots - ob.error_snapshots)) / np.max(np.abs(ob.error_snapshots))
            good = comb >= 0.9 * min(state, obs_rate) and dev <= 1e-6
            ok &= good
            parts.append(f"({y0},{yh}) comb {comb:.3f} vs 0.9*min({state:.3f},{obs_rate:.3f}), err dev {dev:.1e}")
    report(capsys, 7, ok, "; ".join(parts))


def test_c08_waterbed(capsys):
    parts, ok = [], True
    for yh in (0.05, -0.45):
        m = {}
        for y0 in TABLE1_Y0:
            b = bundle(y0)
            tr = run(SimConfig(table1_spec(y0, yh), mode="output_fb"), b.gains)
            m[y0] = waterbed_metrics(tr.controls, tr.times)
        ok &= m[-0.30]["peak_U1"] < m[-0.05]["peak_U1"] and m[-0.30]["peak_U2"] > m[-0.05]["peak_U2"]
        parts.append(f"yhat0={yh}: peak U1 {m[-0.05]['peak_U1']:.3f} -> {m[-0.30]['peak_U1']:.3f}, "
                     f"peak U2 {m[-0.05]['peak_U2']:.3f} -> {m[-0.30]['peak_U2']:.3f}")
    report(capsys, 8, ok, "; ".join(parts))


def test_c09_round_trips(capsys):
    worst = {"volterra": 0.0, "second": 0.0}
    for y0 in TABLE1_Y0:
        b = bundle(y0)
        K = [[b.row1.k11, b.row1.k12], [b.row2.k21, b.row2.k22]]
        for seed in range(10):
            W = smooth_pair(101, seed)
            for method in ("substitution", "fixed_point"):
                back = apply_volterra(K, invert_volterra(K, W, method=method))
                worst["volterra"] = max(worst["volterra"], *(float(np.max(np.abs(back[i] - W[i]))) for i in (0, 1)))
            for method in ("direct", "fixed_point"):
                back = apply_second_transform(b.qr, invert_second_transform(b.qr, W, method=method))
                worst["second"] = max(worst["second"], *(float(np.max(np.abs(back[i] - W[i]))) for i in (0, 1)))
    g = Grid1D(-1, 1, 401)
    adv = PlantSpec(1.0, polynomial([6.0]), nu=polynomial([1.0, 0.5]))
    ub = np.cos(3 * g.nodes)
    gauge = float(np.max(np.abs(gauge_transform(gauge_transform(ub, adv, g), adv, g, "inverse") - ub)))
    _, u1, u2 = fold(ub, g, -0.3)
    folded = float(np.max(np.abs(unfold(u1, u2, -0.3, g) - ub)))
    ok = worst["volterra"] < 1e-8 and worst["second"] < 1e-8 and gauge < 1e-12 and folded < 1e-3
    report(capsys, 9, ok, f"Volterra {worst['volterra']:.1e}, second transform {worst['second']:.1e} (< 1e-8); "
                          f"gauge {gauge:.1e} (< 1e-12); fold/unfold {folded:.1e} (< 1e-3)")


def test_c10_determinism(tmp_path, capsys):
    out = tmp_path / "sweep"
    snap = []
    for _ in range(2):
        assert main(["sweep", "--out", str(out)]) == 0
        snap.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    same = snap[0].keys() == snap[1].keys() and all(snap[0][k] == snap[1][k] for k in snap[0])
    rows = len((out / "summary.csv").read_text().splitlines()) - 1
    report(capsys, 10, same and rows == 4, f"{len(snap[0])} files byte-identical across two sweeps: {same}; {rows} scenarios")
