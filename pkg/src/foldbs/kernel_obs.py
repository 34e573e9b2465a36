"""Observer gain kernels.

Each folded half of the measured plant gets a scalar kernel Phi on 0 <= y <= x <= 1 with

    Phi_xx - Phi_yy = -(lambda(x) + c)/eps Phi,   Phi(1, y) = 0,
    Phi(x, x) = -int_x^1 (lambda + c)/(2 eps),

and injection gain phi(x) = -eps Phi(x, 0). With this orientation the error transform
is u~ = w~ - int_0^x Phi w~ and phi comes out positive for lambda + c > 0.

In xi = 2 - x - y, eta = x - y the equation is G_{xi eta} = mu G / 4 with
mu = (lambda + c)/eps. Reflecting oddly across x = 1 (lambda extended evenly) moves the
Dirichlet side onto the characteristic xi = 0, leaving a Goursat problem with data on
both axes. It is solved by successive approximation of

    G = G(xi, 0) + G(0, eta) + 1/4 int_0^xi int_0^eta mu G,

with a 2-D cumulative trapezoid on two nested grids combined by Richardson extrapolation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.integrate import cumulative_simpson, cumulative_trapezoid

from .core import TriGrid
from .kernel_ctrl import DEFAULT_MAX_ITER, DEFAULT_TOL, ConvergenceError, lagrange_interp

Field = Union[float, np.ndarray, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class ObserverKernel:
    Phi: TriGrid
    phi: np.ndarray
    eps_i: float
    c_i: float
    lambda_i: np.ndarray
    iterations: int = 0

    @property
    def n(self) -> int:
        return self.Phi.n

    def diagonal_target(self) -> np.ndarray:
        """The diagonal values the boundary condition prescribes."""
        x = self.Phi.nodes
        return _diagonal(lambda s: _as_callable(self.lambda_i)(s), self.eps_i, self.c_i, x)


def _as_callable(lam: Field) -> Callable[[np.ndarray], np.ndarray]:
    if callable(lam):
        return lambda s: np.asarray(lam(np.asarray(s, dtype=float)), dtype=float) * np.ones_like(s, dtype=float)
    arr = np.asarray(lam, dtype=float)
    if arr.ndim == 0:
        val = float(arr)
        return lambda s: np.full_like(np.asarray(s, dtype=float), val)
    if arr.size < 4:
        raise ValueError("lambda samples need at least 4 nodes")
    h = 1.0 / (arr.size - 1)
    return lambda s: lagrange_interp(arr, h, np.asarray(s, dtype=float))


def _diagonal(lam, eps: float, c: float, x: np.ndarray, refine: int = 16) -> np.ndarray:
    """-int_x^1 (lam + c)/(2 eps) at the nodes ``x`` (uniform on [0, 1])."""
    n = len(x)
    s = np.linspace(0.0, 1.0, refine * (n - 1) + 1)
    f = (lam(s) + c) / (2.0 * eps)
    tail = cumulative_simpson(f[::-1], dx=s[1], initial=0.0)[::-1]
    return -tail[::refine]


def _goursat(lam, eps: float, c: float, n: int, tol: float, max_iter: int):
    """Solution on the (xi, eta) grid of step 1/(n-1): xi in [0, 2], eta in [0, 1]."""
    h = 1.0 / (n - 1)
    xi = np.linspace(0.0, 2.0, 2 * n - 1)
    eta = np.linspace(0.0, 1.0, n)
    X = 1.0 - 0.5 * (xi[:, None] - eta[None, :])
    X = np.clip(np.where(X > 1.0, 2.0 - X, X), 0.0, 1.0)
    mu = (lam(X.ravel()).reshape(X.shape) + c) / eps
    # both axes carry the diagonal at x = 1 - s/2, i.e. on half steps
    D = _diagonal(lam, eps, c, np.linspace(0.0, 1.0, 2 * n - 1))[::-1]
    G0 = D[:, None] - D[None, :n] + D[0]
    G = G0.copy()
    for it in range(1, max_iter + 1):
        inner = cumulative_trapezoid(mu * G, dx=h, axis=0, initial=0.0)
        nxt = G0 + 0.25 * cumulative_trapezoid(inner, dx=h, axis=1, initial=0.0)
        diff = float(np.max(np.abs(nxt - G)))
        G = nxt
        if diff <= tol * (1.0 + float(np.max(np.abs(G)))):
            return G, it
    raise ConvergenceError("observer kernel iteration did not converge", diff)


def _to_triangle(G: np.ndarray, n: int) -> np.ndarray:
    i, j = np.indices((n, n))
    out = np.zeros((n, n))
    m = j <= i
    out[m] = G[(2 * (n - 1) - i - j)[m], (i - j)[m]]
    return out


def solve_observer_kernel(lambda_i: Field, eps_i: float, c_i: float, tri_n: int = 101,
                          tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> ObserverKernel:
    """Kernel Phi and injection gain phi for one folded half.

    ``lambda_i`` may be a constant, samples on a uniform grid of [0, 1], or a callable.
    The result carries fourth-order accuracy from one Richardson step.
    """
    if not eps_i > 0:
        raise ValueError(f"eps_i must be positive, got {eps_i}")
    if not c_i > 0:
        raise ValueError(f"c_i must be positive, got {c_i}")
    if tri_n < 3:
        raise ValueError(f"tri_n must be at least 3, got {tri_n}")
    lam = _as_callable(lambda_i)
    n = tri_n
    Gc, it_c = _goursat(lam, eps_i, c_i, n, tol, max_iter)
    Gf, it_f = _goursat(lam, eps_i, c_i, 2 * n - 1, tol, max_iter)
    G = (4.0 * Gf[::2, ::2] - Gc) / 3.0
    Phi = _to_triangle(G, n)
    x = np.linspace(0.0, 1.0, n)
    Phi[np.arange(n), np.arange(n)] = _diagonal(lam, eps_i, c_i, x)
    Phi[-1, :] = 0.0
    phi = -eps_i * Phi[:, 0]
    return ObserverKernel(TriGrid(n, Phi), phi, float(eps_i), float(c_i), lam(x), max(it_c, it_f))


def i1_over_z(z) -> np.ndarray:
    """I_1(z)/z by its even power series; equals 1/2 at z = 0."""
    q = 0.25 * np.asarray(z, dtype=float) ** 2
    term = np.full_like(q, 0.5)
    total = term.copy()
    k = 0
    while True:
        k += 1
        term = term * q / (k * (k + 1))
        total = total + term
        if np.all(term <= 1e-16 * total):
            return total


def bessel_phi_closed_form(x, y, lambda_const: float, eps_i: float, c_i: float, z_form: str = "exact"):
    """Closed-form kernel for constant reaction.

    Returns -mu (1 - x) I_1(z)/z with mu = (lambda + c)/eps, so that the diagonal holds
    -(lambda + c)(1 - x)/(2 eps). ``z_form='exact'`` uses z = sqrt(mu (x - y)(2 - x - y));
    ``z_form='printed'`` uses z = sqrt(mu (2 - x - y)), which misses the diagonal condition
    and is kept only for comparison.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y < -1e-14) or np.any(y > x + 1e-14) or np.any(x > 1.0 + 1e-14):
        raise ValueError("closed form is defined on 0 <= y <= x <= 1")
    mu = (lambda_const + c_i) / eps_i
    if mu < 0:
        raise ValueError("closed form needs lambda + c >= 0")
    if z_form == "exact":
        z2 = mu * np.clip(x - y, 0.0, None) * (2.0 - x - y)
    elif z_form == "printed":
        z2 = mu * (2.0 - x - y)
    else:
        raise ValueError(f"unknown z_form {z_form!r}")
    out = -mu * (1.0 - x) * i1_over_z(np.sqrt(z2))
    return float(out) if out.ndim == 0 else out
