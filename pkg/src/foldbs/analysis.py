"""Norms, decay fits, bound constants, effort metrics and residual diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import eigh_tridiagonal

from .core import FoldedParams, Grid1D


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit norm(t) ~ pi_hat * exp(-gamma_hat * (t - t_start))."""

    pi_hat: float
    gamma_hat: float
    fit_window: tuple[float, float]
    residual: float


def l2_norm(f, h: float | None = None, grid: Grid1D | None = None) -> float:
    """Trapezoid L2 norm of samples ``f``; spacing from ``grid`` or ``h``, else [-1, 1]."""
    f = np.asarray(f, dtype=float)
    if f.size < 2:
        return 0.0
    if grid is not None:
        h = grid.h
    elif h is None:
        h = 2.0 / (f.size - 1)
    sq = f**2
    return float(np.sqrt(h * (sq.sum() - 0.5 * (sq[0] + sq[-1]))))


def target_bound_constants(a: float, c1: float, c2: float, eps2: float) -> tuple[float, float]:
    """Overshoot Pi = a^(-3/2) and rate gamma = min(a^3 c1, c2) + eps2/4 of the target system."""
    if not 0.0 < a <= 1.0:
        raise ValueError(f"a must lie in (0, 1], got {a}")
    if not (c1 > 0 and c2 > 0 and eps2 > 0):
        raise ValueError("c1, c2 and eps2 must be positive")
    return a**-1.5, min(a**3 * c1, c2) + eps2 / 4.0


def fit_decay(times, norms, window: tuple[float, float] | None = None) -> DecayFit:
    """Fit a line through log(norm) over ``window`` (default: second half of the span)."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(norms, dtype=float)
    if window is None:
        window = (0.5 * (t[0] + t[-1]), float(t[-1]))
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    t, y = t[sel], y[sel]
    if np.any(y < 0):
        raise ValueError("norms must be nonnegative")
    small = np.nonzero(y < 1e-14)[0]
    if small.size:
        t, y = t[: small[0]], y[: small[0]]
    if t.size < 4:
        raise ValueError(f"need at least 4 positive samples in the fit window, got {t.size}")
    ly = np.log(y)
    slope, icpt = np.polyfit(t - t[0], ly, 1)
    resid = float(np.sqrt(np.mean((ly - (icpt + slope * (t - t[0]))) ** 2)))
    return DecayFit(float(np.exp(icpt)), float(-slope), (float(t[0]), float(t[-1])), resid)


def waterbed_metrics(controls, times) -> dict:
    """Time-domain L2 effort and peak magnitude of each control channel."""
    u = np.atleast_2d(np.asarray(controls, dtype=float))
    t = np.asarray(times, dtype=float)
    if u.shape[0] != t.size:
        u = u.T
    out = {}
    for k in range(2):
        c = u[:, k]
        out[f"l2_time_U{k + 1}"] = float(np.sqrt(trapezoid(c**2, t))) if t.size > 1 else 0.0
        out[f"peak_U{k + 1}"] = float(np.max(np.abs(c))) if c.size else 0.0
    return out


def principal_eigenvalue(eps: float, lam, n: int = 401) -> float:
    """Largest eigenvalue of eps d^2/dy^2 + lambda(y) on (-1, 1), Dirichlet, centered differences."""
    y = np.linspace(-1.0, 1.0, n)[1:-1]
    h = 2.0 / (n - 1)
    d = -2.0 * eps / h**2 + np.asarray(lam(y), dtype=float) * np.ones_like(y)
    e = np.full(y.size - 1, eps / h**2)
    w = eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(y.size - 1, y.size - 1))
    return float(w[0])


# ----------------------------------------------------------------- norm equivalence


@dataclass
class NormEquivalenceReport:
    M1: float
    M2: float
    vacuous: dict
    ratios: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _tri_l2(values: np.ndarray, mask: np.ndarray, h: float) -> float:
    return float(np.sqrt(np.sum(np.where(mask, values, 0.0) ** 2) * h * h))


def verify_norm_equivalence(K, qr, fields) -> NormEquivalenceReport:
    """Evaluate M1 = (1 - |q| - |p| - |r|)^2 and M2 = (1 - |K|)^2 and test the
    sandwich M^(-1) |W|^2 <= |Omega|^2 on each supplied pair of fields.

    ``K`` is a 2x2 nested sequence of kernel grids (or arrays). Coefficients whose base
    is not positive are flagged vacuous and their inequalities are skipped.
    """
    from .kernel_aux import apply_second_transform
    from .kernel_ctrl import apply_volterra

    n = qr.n
    h = 1.0 / (n - 1)
    i, j = np.indices((n, n))
    lower, upper = j <= i, j >= i
    arr = [[np.asarray(getattr(k, "values", k), dtype=float) for k in row] for row in K]
    nK = float(np.sqrt(sum(_tri_l2(k, lower, h) ** 2 for row in arr for k in row)))
    nq = _tri_l2(qr.q.values, lower, h)
    nr = _tri_l2(qr.r.values, upper, h)
    npn = float(np.sqrt(np.sum(np.asarray(qr.p) ** 2) * h))
    b1, b2 = 1.0 - nq - npn - nr, 1.0 - nK
    rep = NormEquivalenceReport(b1**2, b2**2, {"M1": b1 <= 0, "M2": b2 <= 0})
    for idx, (u1, u2) in enumerate(fields):
        w = apply_volterra(arr, (u1, u2))
        om = apply_second_transform(qr, w)
        nu = l2_norm(u1, h) ** 2 + l2_norm(u2, h) ** 2
        nw = l2_norm(w[0], h) ** 2 + l2_norm(w[1], h) ** 2
        no = l2_norm(om[0], h) ** 2 + l2_norm(om[1], h) ** 2
        rep.ratios.append({"W/U": nw / nu if nu else 0.0, "Omega/W": no / nw if nw else 0.0})
        if not rep.vacuous["M1"] and nw / rep.M1 > no + 1e-12:
            rep.violations.append((idx, "M1"))
        if not rep.vacuous["M2"] and nu / rep.M2 > nw + 1e-12:
            rep.violations.append((idx, "M2"))
    return rep


# ----------------------------------------------------------------- residuals


def _second_diff(V: np.ndarray, h: float):
    """Centered xx and yy second differences on interior nodes (1..n-2)^2."""
    dxx = (V[2:, 1:-1] - 2 * V[1:-1, 1:-1] + V[:-2, 1:-1]) / h**2
    dyy = (V[1:-1, 2:] - 2 * V[1:-1, 1:-1] + V[1:-1, :-2]) / h**2
    return dxx, dyy


def _interior(n: int, upper: bool = False):
    """Nodes whose 5-point stencil stays in the closed triangle, as (I, J, mask) on the full grid."""
    I, J = np.indices((n, n))
    if upper:
        m = (J >= I + 1) & (J <= n - 2) & (I >= 1)
    else:
        m = (J >= 1) & (J <= I - 1) & (I <= n - 2)
    return I, J, m


def _residual(V, ex, ey, src, h):
    r = np.zeros_like(V)
    dxx, dyy = _second_diff(V, h)
    r[1:-1, 1:-1] = ex * dxx - ey * dyy
    return r - src


def kernel_pde_residual(row1, row2, fp: FoldedParams, band: float = 3.0) -> dict:
    """Max centered-difference residual of eps_i k_xx - eps_j k_yy - (lambda_j(y) + c_i) k (+ g k_1j
    for row 2) for each k_ij.

    Nodes within ``band`` steps of a line where the kernel is only piecewise smooth
    (y = a x, and y = x / a for row 2) are skipped.
    """
    n = row1.n
    h = 1.0 / (n - 1)
    x = np.linspace(0.0, 1.0, n)
    I, J, m = _interior(n)
    X, Y = I * h, J * h
    lam = {1: fp.lam(1, x)[None, :], 2: fp.lam(2, x)[None, :]}
    eps = {1: fp.eps1, 2: fp.eps2}
    g = np.asarray(row2.g_trace)[:, None]
    kink1 = np.abs(Y - fp.a * X) < band * h
    kink2 = kink1 | (np.abs(Y - X / fp.a) < band * h)
    kern = {(1, 1): row1.k11, (1, 2): row1.k12, (2, 1): row2.k21, (2, 2): row2.k22}
    cs = {1: row1.c1, 2: row2.c2}
    skip = {(1, 1): np.zeros_like(m), (1, 2): kink1, (2, 1): kink2, (2, 2): kink2}
    if fp.eps1 == fp.eps2:
        skip = {k: np.zeros_like(m) for k in skip}
    out = {}
    for (i, j), k in kern.items():
        src = (lam[j] + cs[i]) * k.values
        if i == 2:
            src = src - g * kern[(1, j)].values
        r = _residual(k.values, eps[i], eps[j], src, h)
        sel = m & ~skip[(i, j)]
        out[f"k{i}{j}"] = float(np.max(np.abs(r[sel]))) if sel.any() else 0.0
    return out


def qr_pde_residual(qr, g, fp: FoldedParams, c1: float, c2: float, band: float = 2.0) -> dict:
    """Residuals of eps2 d_xx - eps1 d_yy - (c2 - c1) (and - g(y) p(x - y) for q).

    Skips nodes within ``band`` (1 + c) steps of y + c x = 2 and, for r, of y = c x, with
    c = 1/a: the invariants jump across those lines.
    """
    n = qr.n
    h = 1.0 / (n - 1)
    c = 1.0 / fp.a
    I, J, m = _interior(n)
    X, Y = I * h, J * h
    wide = band * h * (1.0 + c)
    pxy = np.asarray(qr.p)[np.clip(I - J, 0, n - 1)]
    src = (c2 - c1) * qr.q.values + np.asarray(g, dtype=float)[None, :] * pxy
    rq = _residual(qr.q.values, fp.eps2, fp.eps1, src, h)
    sel = m & (np.abs(Y + c * X - 2.0) > wide)
    out = {"q": float(np.max(np.abs(rq[sel]))) if sel.any() else 0.0}
    I, J, m = _interior(n, upper=True)
    X, Y = I * h, J * h
    rr = _residual(qr.r.values, fp.eps2, fp.eps1, (c2 - c1) * qr.r.values, h)
    sel = m & (np.abs(Y + c * X - 2.0) > wide) & (np.abs(Y - c * X) > wide)
    out["r"] = float(np.max(np.abs(rr[sel]))) if sel.any() else 0.0
    return out


def observer_pde_residual(ok) -> float:
    """Max centered residual of Phi_xx - Phi_yy + (lambda(x) + c)/eps Phi off the diagonal."""
    n = ok.n
    h = 1.0 / (n - 1)
    V = ok.Phi.values
    dxx, dyy = _second_diff(V, h)
    mu = (np.asarray(ok.lambda_i)[1:-1] + ok.c_i) / ok.eps_i
    r = dxx - dyy + mu[:, None] * V[1:-1, 1:-1]
    I, J = np.indices(r.shape)
    m = J < I  # stencil stays inside the closed triangle
    return float(np.max(np.abs(r[m]))) if m.any() else 0.0
