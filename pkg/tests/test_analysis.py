import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import smooth_pair
from foldbs.analysis import (
    fit_decay,
    kernel_pde_residual,
    l2_norm,
    principal_eigenvalue,
    qr_pde_residual,
    target_bound_constants,
    verify_norm_equivalence,
    waterbed_metrics,
)
from foldbs.core import PlantSpec, TriGrid, folded_params, polynomial


def test_l2_norm_examples():
    assert l2_norm(np.zeros(11)) == 0.0
    assert l2_norm(np.ones(101)) == pytest.approx(np.sqrt(2.0), rel=1e-14)
    y = np.linspace(-1, 1, 201)
    assert abs(l2_norm(np.sin(np.pi * y)) - 1.0) < 1e-4
    assert l2_norm(np.ones(11), h=0.5) == pytest.approx(np.sqrt(5.0))


def test_target_bound_constants_frozen():
    assert target_bound_constants(1.0, 5.0, 5.0, 1.0) == (1.0, 5.25)
    fp = folded_params(PlantSpec(1.0, polynomial([1.0]), y0=-0.30), m=5)
    Pi, g = target_bound_constants(fp.a, 5.0, 5.0, fp.eps2)
    assert Pi == pytest.approx(2.53085910580005989, rel=1e-14)
    assert g == pytest.approx(0.928538916704597178, rel=1e-14)
    fp = folded_params(PlantSpec(1.0, polynomial([1.0]), y0=-0.05), m=5)
    Pi, g = target_bound_constants(fp.a, 5.0, 5.0, fp.eps2)
    assert (Pi, g) == pytest.approx((1.16197969934681927, 3.92992117481913400), rel=1e-14)
    # small a picks the a^3 c1 branch
    assert target_bound_constants(0.1, 5.0, 5.0, 1.0)[1] == pytest.approx(0.005 + 0.25)


@pytest.mark.parametrize("args", [(0.0, 5, 5, 1), (1.5, 5, 5, 1), (0.5, 0, 5, 1), (0.5, 5, 5, -1)])
def test_target_bound_domain(args):
    with pytest.raises(ValueError):
        target_bound_constants(*args)


@given(st.floats(0.05, 1.0), st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.1, 5), st.floats(0.01, 1))
def test_target_bound_monotone(a, c1, c2, e2, bump):
    P, g = target_bound_constants(a, c1, c2, e2)
    assert target_bound_constants(a, c1 + bump, c2, e2)[1] >= g
    assert target_bound_constants(a, c1, c2 + bump, e2)[1] >= g
    assert target_bound_constants(a, c1, c2, e2 + bump)[1] >= g
    assert target_bound_constants(min(a + bump, 1.0), c1, c2, e2)[0] <= P


def test_fit_decay_examples():
    t = np.linspace(0, 3, 61)
    f = fit_decay(t, np.exp(-2 * t))
    assert abs(f.gamma_hat - 2.0) < 1e-10 and f.residual < 1e-10
    assert f.fit_window == (1.5, 3.0)
    assert fit_decay(t, np.full(61, 4.0)).gamma_hat == pytest.approx(0.0, abs=1e-12)
    # truncated at the first sample below 1e-14
    f = fit_decay(t, np.exp(-20 * t), window=(0, 3))
    assert f.fit_window[1] < 1.7 and abs(f.gamma_hat - 20) < 1e-8
    with pytest.raises(ValueError):
        fit_decay(t[:3], np.ones(3))
    with pytest.raises(ValueError):
        fit_decay(t, -np.ones(61))


@given(st.floats(0.01, 100), st.floats(-5, 5))
def test_fit_decay_scale_equivariant(s, rate):
    t = np.linspace(0, 2, 41)
    y = np.exp(-rate * t) * (1 + 0.1 * np.sin(5 * t))
    a, b = fit_decay(t, y), fit_decay(t, s * y)
    assert b.gamma_hat == pytest.approx(a.gamma_hat, abs=1e-9)
    assert b.pi_hat == pytest.approx(s * a.pi_hat, rel=1e-9)


def test_fit_decay_heat_eigenmode():
    from foldbs.core import Grid1D
    from foldbs.sim import SimConfig, run

    spec = PlantSpec(1.0, polynomial([0.0]))
    tr = run(SimConfig(spec, grid=Grid1D(-1, 1, 201), mode="open", t_end=1.0,
                       initial_u=lambda y: np.cos(np.pi * y / 2)))
    assert fit_decay(tr.times, tr.norm_u).gamma_hat == pytest.approx((np.pi / 2) ** 2, rel=0.02)


def test_waterbed_examples():
    t = np.linspace(0, 10, 20001)
    m = waterbed_metrics(np.zeros((t.size, 2)), t)
    assert all(v == 0.0 for v in m.values())
    m = waterbed_metrics(np.column_stack([np.exp(-t), -2 * np.exp(-t)]), t)
    assert m["l2_time_U1"] == pytest.approx(np.sqrt(0.5), rel=1e-6)
    assert m["peak_U1"] == 1.0 and m["peak_U2"] == 2.0


def test_principal_eigenvalue_matches_dense_and_refines():
    lam = polynomial([-4.0, -2.0, 6.0])
    n = 201
    y = np.linspace(-1, 1, n)[1:-1]
    h = 2.0 / (n - 1)
    L = (np.diag(-2 * np.ones(y.size)) + np.diag(np.ones(y.size - 1), 1) + np.diag(np.ones(y.size - 1), -1)) / h**2
    dense = np.linalg.eigvalsh(L + np.diag(lam(y))).max()
    assert principal_eigenvalue(1.0, lam, n) == pytest.approx(dense, rel=1e-12)
    assert principal_eigenvalue(1.0, lam, 1601) == pytest.approx(3.0883454453428705, rel=1e-10)
    assert principal_eigenvalue(1.0, polynomial([0.0]), 401) == pytest.approx(-(np.pi / 2) ** 2, rel=1e-5)


def test_norm_equivalence_zero_kernels(b030):
    n = 101
    z = np.zeros((n, n))
    qr = dataclasses.replace(b030.qr, q=TriGrid(n, z), r=TriGrid(n, z, "upper"), p=np.zeros(n))
    rep = verify_norm_equivalence([[z, z], [z, z]], qr, [smooth_pair(n, 1)])
    assert rep.M1 == rep.M2 == 1.0 and rep.ok
    assert rep.ratios[0]["W/U"] == pytest.approx(1.0) and rep.ratios[0]["Omega/W"] == pytest.approx(1.0)


def test_norm_equivalence_table1(b030):
    K = [[b030.row1.k11, b030.row1.k12], [b030.row2.k21, b030.row2.k22]]
    rep = verify_norm_equivalence(K, b030.qr, [smooth_pair(101, s) for s in range(20)])
    # the kernels are far from small, so the printed coefficients are vacuous
    assert rep.vacuous["M2"]
    assert all(np.isfinite(r["W/U"]) and r["W/U"] > 0 for r in rep.ratios)
    assert len(rep.ratios) == 20


def test_norm_equivalence_flags_large_kernels(b030):
    n = 101
    big = np.tril(np.full((n, n), 3.0))
    rep = verify_norm_equivalence([[big, big], [big, big]], b030.qr, [])
    assert rep.vacuous["M2"] and rep.ok


def test_residual_helpers_on_symmetric_case(b000):
    r = kernel_pde_residual(b000.row1, b000.row2, b000.fp)
    assert set(r) == {"k11", "k12", "k21", "k22"} and all(v >= 0 for v in r.values())
    q = qr_pde_residual(b000.qr, b000.row2.g_trace, b000.fp, 5.0, 5.0)
    assert q == {"q": 0.0, "r": 0.0}
