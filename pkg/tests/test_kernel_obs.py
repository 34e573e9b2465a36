import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import iv

from foldbs.analysis import observer_pde_residual
from foldbs.kernel_obs import bessel_phi_closed_form, i1_over_z, solve_observer_kernel


@pytest.fixture(scope="module")
def const2():
    return solve_observer_kernel(2.0, 1.0, 1.0, 101)


def test_i1_over_z_frozen():
    assert i1_over_z(0.0) == 0.5
    assert float(i1_over_z(np.sqrt(2.0))) == pytest.approx(0.635861728156068555, rel=1e-14)


@given(st.floats(1e-6, 8.0))
def test_i1_over_z_matches_scipy(z):
    assert float(i1_over_z(z)) == pytest.approx(iv(1, z) / z, rel=1e-13)


def test_closed_form_examples():
    assert bessel_phi_closed_form(1.0, 1.0, 0.0, 1.0, 1.0) == 0.0
    assert bessel_phi_closed_form(0.3, 0.1, -1.0, 1.0, 1.0) == 0.0
    # printed argument at the corner
    v = bessel_phi_closed_form(0.0, 0.0, 0.0, 1.0, 1.0, z_form="printed")
    assert abs(v) == pytest.approx(0.635861728156068555, rel=1e-14)
    for bad in ((0.2, 0.5), (1.5, 0.1), (0.5, -0.1)):
        with pytest.raises(ValueError):
            bessel_phi_closed_form(*bad, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        bessel_phi_closed_form(0.5, 0.1, -3.0, 1.0, 1.0)


@settings(max_examples=30)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.0, 5.0))
def test_closed_form_diagonal(x, frac, lam):
    y = x * frac
    mu = lam + 1.0
    assert bessel_phi_closed_form(x, x, lam, 1.0, 1.0) == pytest.approx(-mu * (1 - x) / 2, abs=1e-14)
    assert bessel_phi_closed_form(1.0, y, lam, 1.0, 1.0) == 0.0


def test_zero_reaction_gives_zero_kernel():
    ok = solve_observer_kernel(-1.0, 1.0, 1.0, 51)
    assert ok.Phi.sup() == 0.0 and not np.any(ok.phi)


def test_kernel_matches_closed_form(const2):
    n = const2.n
    X, Y = np.meshgrid(const2.Phi.nodes, const2.Phi.nodes, indexing="ij")
    m = Y <= X
    exact = bessel_phi_closed_form(X[m], Y[m], 2.0, 1.0, 1.0)
    assert np.max(np.abs(const2.Phi.values[m] - exact)) < 1e-8 * np.max(np.abs(exact))
    assert n == 101


def test_boundary_conditions(const2):
    x = const2.Phi.nodes
    d = np.arange(const2.n)
    assert not np.any(const2.Phi.values[-1])
    assert np.max(np.abs(const2.Phi.values[d, d] + 3.0 * (1 - x) / 2)) < 1e-13
    assert np.array_equal(const2.phi, -const2.eps_i * const2.Phi.values[:, 0])
    assert np.all(const2.phi[:-1] > 0)
    assert np.max(np.abs(const2.diagonal_target() - const2.Phi.values[d, d])) < 1e-14


def test_unit_case_corner():
    ok = solve_observer_kernel(0.0, 1.0, 1.0, 51)
    assert abs(ok.Phi.values[0, 0]) == pytest.approx(0.5, abs=1e-14)


def test_variable_lambda_residual_converges():
    lam = lambda s: 6.0 - 4.0 * s**2
    res = [observer_pde_residual(solve_observer_kernel(lam, 0.8, 1.0, n)) for n in (51, 101)]
    assert res[0] / res[1] > 1.8


def test_lambda_input_forms_agree():
    x = np.linspace(0.0, 1.0, 201)
    a = solve_observer_kernel(lambda s: 1.0 + s, 1.0, 1.0, 51)
    b = solve_observer_kernel(1.0 + x, 1.0, 1.0, 51)
    assert np.max(np.abs(a.Phi.values - b.Phi.values)) < 1e-10


def test_bounded_under_refinement():
    a, b = (solve_observer_kernel(3.0, 0.5, 1.0, n).Phi.values for n in (51, 101))
    assert np.max(np.abs(a - b[::2, ::2])) < 1e-6 * np.max(np.abs(a))


@pytest.mark.parametrize("kw", [dict(eps_i=0.0), dict(c_i=-1.0), dict(tri_n=2)])
def test_rejects_bad_input(kw):
    args = dict(lambda_i=1.0, eps_i=1.0, c_i=1.0, tri_n=11) | kw
    with pytest.raises(ValueError):
        solve_observer_kernel(**args)
