import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foldbs.core import (
    FoldContinuityError,
    Grid1D,
    GridMismatchError,
    PlantSpec,
    TriGrid,
    fold,
    folded_params,
    gauge_transform,
    polynomial,
    table1_spec,
    unfold,
)


def test_grid_nodes_and_spacing():
    g = Grid1D(-1.0, 1.0, 401)
    assert g.nodes[0] == -1.0 and g.nodes[-1] == 1.0
    assert np.allclose(np.diff(g.nodes), g.h, atol=1e-15)
    assert g.index_of(-0.05) == 190
    assert not g.has_node(0.0025)


@pytest.mark.parametrize("args", [(-1.0, 1.0, 2), (1.0, -1.0, 5)])
def test_grid_rejects_bad_input(args):
    with pytest.raises(ValueError):
        Grid1D(*args)


def test_trigrid_masks_and_shape():
    lo, up = TriGrid.zeros(5), TriGrid.zeros(5, "upper")
    i, j = np.indices((5, 5))
    assert np.array_equal(lo.mask, j <= i) and np.array_equal(up.mask, j >= i)
    with pytest.raises(GridMismatchError):
        TriGrid(5, np.zeros((4, 4)))
    # nested trapezoid of 1 over the triangle is exact: area 1/2
    assert TriGrid(11, np.ones((11, 11))).l2() == pytest.approx(np.sqrt(0.5), abs=1e-14)


@pytest.mark.parametrize("kw", [dict(eps=0.0), dict(eps=1.0, y0=0.1), dict(eps=1.0, yhat0=1.0)])
def test_plantspec_validation(kw):
    with pytest.raises(ValueError):
        PlantSpec(lambda_bar=polynomial([1.0]), **kw)


def test_gauge_zero_advection_is_identity():
    g = Grid1D(-1.0, 1.0, 51)
    ub = np.sin(3 * g.nodes)
    assert np.array_equal(gauge_transform(ub, table1_spec(), g), ub)


def test_gauge_constant_and_linear_advection():
    g = Grid1D(-1.0, 1.0, 201)
    const = PlantSpec(1.0, polynomial([0.0]), nu=polynomial([1.0]))
    u = gauge_transform(np.ones(g.n), const, g)
    assert u[-1] == pytest.approx(np.e, rel=1e-13)
    lin = PlantSpec(1.0, polynomial([0.0]), nu=polynomial([1.0, 0.0]))
    u = gauge_transform(np.ones(g.n), lin, g)
    exact = np.exp((g.nodes**2 - 1.0) / 4.0)
    assert np.max(np.abs(u / exact - 1.0)) < 1e-6
    back = gauge_transform(u, lin, g, "inverse")
    assert np.allclose(back, 1.0, rtol=1e-15, atol=0)


def test_folded_params_table1_values():
    fp = folded_params(table1_spec(-0.30))
    assert fp.eps1 == pytest.approx(2.0408163265306122, rel=1e-14)
    assert fp.eps2 == pytest.approx(0.59171597633136095, rel=1e-14)
    assert fp.a == pytest.approx(0.53846153846153846, rel=1e-14)
    fp = folded_params(table1_spec(-0.05))
    assert fp.lambda1[0] == pytest.approx(6.09, abs=1e-13)
    assert fp.lambda2[0] == pytest.approx(6.09, abs=1e-13)
    sym = folded_params(table1_spec(0.0))
    assert sym.eps1 == sym.eps2 == 1.0 and sym.a == 1.0


def test_folded_params_observer_branch():
    fp = folded_params(table1_spec(-0.3, 0.05), "observer")
    assert fp.eps1 == pytest.approx(1 / 1.05**2)
    with pytest.raises(ValueError):
        folded_params(table1_spec(), "sensor")


@given(st.floats(-0.95, -0.01))
def test_fold_ordering(y0):
    fp = folded_params(PlantSpec(1.0, polynomial([1.0]), y0=y0), m=5)
    assert fp.eps1 > fp.eps2 and 0 < fp.a < 1
    assert fp.lambda1[0] == fp.lambda2[0]


def test_fold_examples():
    g = Grid1D(-1.0, 1.0, 201)
    x, u1, u2 = fold(g.nodes, g, 0.0)
    assert np.allclose(u1, -x) and np.allclose(u2, x)
    _, v1, v2 = fold(g.nodes**2, g, 0.0)
    assert np.allclose(v1, v2)
    x, w1, w2 = fold(g.nodes, g, -0.5)
    k = np.argmin(np.abs(x - 0.5))
    assert w1[k] == pytest.approx(-0.75) and w2[k] == pytest.approx(0.25)


def test_unfold_roundtrip_and_continuity():
    g = Grid1D(-1.0, 1.0, 201)
    u = np.sin(np.pi * g.nodes)
    _, u1, u2 = fold(u, g, -0.05)
    assert np.max(np.abs(unfold(u1, u2, -0.05, g) - u)) < 1e-3
    assert np.all(unfold(np.zeros(11), np.zeros(11), -0.05, g) == 0)
    with pytest.raises(FoldContinuityError):
        unfold(np.r_[1.0, np.zeros(10)], np.zeros(11), -0.05, g)


def test_fold_roundtrip_second_order():
    errs = []
    for n in (201, 401, 801):
        g = Grid1D(-1.0, 1.0, n)
        u = np.sin(np.pi * g.nodes) + g.nodes**2
        # fold onto a grid that does not share nodes, so interpolation error is visible
        _, u1, u2 = fold(u, g, -0.05, m=(n - 1) // 2 + 2)
        errs.append(np.max(np.abs(unfold(u1, u2, -0.05, g) - u)))
    assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0


@settings(max_examples=25, deadline=None)
@given(st.integers(5, 195), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_fold_unfold_identity_on_shared_nodes(k, c):
    g = Grid1D(-1.0, 1.0, 201)
    y0 = g.nodes[k]
    if y0 > 0:
        y0 = -y0
    u = c[0] + c[1] * np.cos(2 * g.nodes) + c[2] * g.nodes**3
    _, u1, u2 = fold(u, g, y0)
    assert np.max(np.abs(unfold(u1, u2, y0, g) - u)) < 5e-3
