"""Grids, plant description, gauge transform and folding maps."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

ScalarFn = Callable[[np.ndarray], np.ndarray]


class FoldContinuityError(ValueError):
    """Raised when the two folded halves disagree at the fold point."""


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid with inclusive endpoints."""

    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"Grid1D needs at least 3 nodes, got {self.n}")
        if not self.hi > self.lo:
            raise ValueError("Grid1D requires hi > lo")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    def index_of(self, y: float, tol: float = 1e-9) -> int:
        """Index of the node equal to ``y``; raises if ``y`` is not a node."""
        k = int(round((y - self.lo) / self.h))
        if k < 0 or k >= self.n or abs(self.lo + k * self.h - y) > tol * max(1.0, self.h):
            raise ValueError(f"{y!r} is not a node of {self}")
        return k

    def has_node(self, y: float, tol: float = 1e-9) -> bool:
        try:
            self.index_of(y, tol)
        except ValueError:
            return False
        return True


def snapped(grid: Grid1D, y: float) -> float:
    """Nearest node of ``grid`` to ``y``."""
    k = int(round((y - grid.lo) / grid.h))
    k = min(max(k, 0), grid.n - 1)
    return float(grid.lo + k * grid.h)


@dataclass(frozen=True)
class TriGrid:
    """Values on a triangular index set of the uniform ``n``-node grid of [0,1].

    ``values[i, j]`` holds the value at ``(x_i, y_j)``. The lower orientation keeps
    ``j <= i`` (0 <= y <= x <= 1) and the upper one ``j >= i``; entries outside the
    triangle are zero and never read.
    """

    n: int
    values: np.ndarray
    orientation: str = "lower"

    def __post_init__(self):
        if self.orientation not in ("lower", "upper"):
            raise ValueError(f"unknown orientation {self.orientation!r}")
        if self.values.shape != (self.n, self.n):
            raise GridMismatchError(f"values shape {self.values.shape} does not match n={self.n}")

    @classmethod
    def zeros(cls, n: int, orientation: str = "lower") -> "TriGrid":
        return cls(n, np.zeros((n, n)), orientation)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def mask(self) -> np.ndarray:
        i, j = np.indices((self.n, self.n))
        return j <= i if self.orientation == "lower" else j >= i

    def diagonal(self) -> np.ndarray:
        return np.diag(self.values).copy()

    def sup(self) -> float:
        return float(np.max(np.abs(self.values[self.mask]))) if self.n else 0.0

    def l2(self) -> float:
        """L2 norm over the triangle by nested trapezoid (y inner, x outer)."""
        h = self.h
        inner = np.zeros(self.n)
        for i in range(self.n):
            col = self.column(i) ** 2
            if len(col) > 1:
                inner[i] = h * (col.sum() - 0.5 * (col[0] + col[-1]))
        return float(np.sqrt(h * (inner.sum() - 0.5 * (inner[0] + inner[-1]))))

    def column(self, i: int) -> np.ndarray:
        """Values at fixed x_i over the valid y range."""
        return self.values[i, : i + 1] if self.orientation == "lower" else self.values[i, i:]

    def rows(self):
        """Yield ``(x, y, value)`` over the valid index set, row-major in x then y."""
        x = self.nodes
        m = self.mask
        for i in range(self.n):
            for j in np.nonzero(m[i])[0]:
                yield x[i], x[j], self.values[i, j]

    def scaled(self, s: float) -> "TriGrid":
        return TriGrid(self.n, self.values * s, self.orientation)


@dataclass(frozen=True)
class PlantSpec:
    """Reaction-diffusion plant on (-1, 1) with its two fold points.

    ``nu`` and ``lambda_bar`` are vectorised callables (``np.poly1d`` for configs).
    """

    eps: float
    lambda_bar: ScalarFn
    y0: float = 0.0
    yhat0: float = 0.0
    nu: Optional[ScalarFn] = None

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not -1.0 < self.y0 <= 0.0:
            raise ValueError(f"y0 must lie in (-1, 0], got {self.y0}")
        if not -1.0 < self.yhat0 < 1.0:
            raise ValueError(f"yhat0 must lie in (-1, 1), got {self.yhat0}")

    def advection(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.zeros_like(y) if self.nu is None else np.asarray(self.nu(y), dtype=float) * np.ones_like(y)

    def reaction(self, y: np.ndarray) -> np.ndarray:
        """Reaction of the advection-free plant: lambda_bar - nu'/2 - nu^2/(4 eps)."""
        y = np.asarray(y, dtype=float)
        lam = np.asarray(self.lambda_bar(y), dtype=float) * np.ones_like(y)
        if self.nu is None:
            return lam
        d = 1e-6
        nu = self.advection(y)
        dnu = (self.advection(y + d) - self.advection(y - d)) / (2 * d)
        return lam - 0.5 * dnu - nu**2 / (4 * self.eps)

    def with_points(self, y0: Optional[float] = None, yhat0: Optional[float] = None) -> "PlantSpec":
        return PlantSpec(
            self.eps,
            self.lambda_bar,
            self.y0 if y0 is None else y0,
            self.yhat0 if yhat0 is None else yhat0,
            self.nu,
        )


def polynomial(coeffs) -> np.poly1d:
    """Reaction profile from polynomial coefficients, highest degree first."""
    return np.poly1d(np.asarray(coeffs, dtype=float))


TABLE1_LAMBDA = (-4.0, -2.0, 6.0)


def table1_spec(y0: float = -0.05, yhat0: float = 0.05) -> PlantSpec:
    return PlantSpec(eps=1.0, lambda_bar=polynomial(TABLE1_LAMBDA), y0=y0, yhat0=yhat0)


@dataclass(frozen=True)
class FoldedParams:
    """Parameters of the 2x2 folded system about a fold point."""

    eps1: float
    eps2: float
    a: float
    x: np.ndarray = field(repr=False)
    lambda1: np.ndarray = field(repr=False)
    lambda2: np.ndarray = field(repr=False)
    fold_point: float = 0.0
    lam1_fn: Optional[Callable] = field(default=None, repr=False, compare=False)
    lam2_fn: Optional[Callable] = field(default=None, repr=False, compare=False)

    @property
    def m(self) -> int:
        return len(self.x)

    @property
    def s1(self) -> float:
        return float(np.sqrt(self.eps1))

    @property
    def s2(self) -> float:
        return float(np.sqrt(self.eps2))

    def lam(self, which: int, x) -> np.ndarray:
        """Folded reaction lambda_1 or lambda_2 at arbitrary points of [0, 1]."""
        fn = self.lam1_fn if which == 1 else self.lam2_fn
        x = np.asarray(x, dtype=float)
        if fn is not None:
            return np.asarray(fn(x), dtype=float) * np.ones_like(x)
        samples = self.lambda1 if which == 1 else self.lambda2
        return np.interp(x, self.x, samples)


def folded_params(spec: PlantSpec, which: str = "control", m: int = 101) -> FoldedParams:
    """Diffusions, reactions and ``a`` of the folded system.

    ``which`` selects the control fold point ``y0`` or the measurement point ``yhat0``.
    """
    if which == "control":
        y0 = spec.y0
    elif which == "observer":
        y0 = spec.yhat0
    else:
        raise ValueError(f"which must be 'control' or 'observer', got {which!r}")
    if not -1.0 < y0 < 1.0:
        raise ValueError(f"fold point {y0} outside (-1, 1)")
    eps1 = spec.eps / (1.0 + y0) ** 2
    eps2 = spec.eps / (1.0 - y0) ** 2
    a = (1.0 + y0) / (1.0 - y0)

    def lam1(x):
        return spec.reaction(y0 - (1.0 + y0) * np.asarray(x, dtype=float))

    def lam2(x):
        return spec.reaction(y0 + (1.0 - y0) * np.asarray(x, dtype=float))

    x = np.linspace(0.0, 1.0, m)
    return FoldedParams(eps1, eps2, a, x, lam1(x), lam2(x), y0, lam1, lam2)


def _cumtrapz(f: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(f, dtype=float)
    out[1:] = np.cumsum(0.5 * h * (f[1:] + f[:-1]))
    return out


def gauge_factor(spec: PlantSpec, grid: Grid1D) -> np.ndarray:
    """exp(int_{-1}^y nu/(2 eps)) at the grid nodes (cumulative trapezoid)."""
    if not spec.eps > 0:
        raise ValueError("eps must be positive")
    nu = spec.advection(grid.nodes)
    return np.exp(_cumtrapz(nu / (2.0 * spec.eps), grid.h))


def gauge_transform(ubar: np.ndarray, spec: PlantSpec, grid: Grid1D, direction: str = "forward") -> np.ndarray:
    """Map between the advective state ubar and the advection-free state u."""
    ubar = np.asarray(ubar, dtype=float)
    if ubar.shape != (grid.n,):
        raise GridMismatchError(f"field of shape {ubar.shape} on a grid of {grid.n} nodes")
    fac = gauge_factor(spec, grid)
    if direction == "forward":
        return fac * ubar
    if direction == "inverse":
        return ubar / fac
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def fold(u: np.ndarray, grid: Grid1D, y0: float, m: Optional[int] = None):
    """Split ``u`` at ``y0`` into the folded pair on a uniform ``m``-node grid of [0, 1].

    Returns ``(x, u1, u2)`` with u1(x) = u(y0 - (1+y0) x), u2(x) = u(y0 + (1-y0) x).
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.n,):
        raise GridMismatchError(f"field of shape {u.shape} on a grid of {grid.n} nodes")
    if not grid.lo < y0 < grid.hi:
        raise ValueError(f"fold point {y0} outside ({grid.lo}, {grid.hi})")
    k = grid.index_of(y0)
    if k < 2 or grid.n - 1 - k < 2:
        raise ValueError("need at least 3 nodes on each side of the fold point")
    m = grid.n if m is None else m
    x = np.linspace(0.0, 1.0, m)
    y = grid.nodes
    u1 = np.interp(y0 - (1.0 + y0) * x, y, u)
    u2 = np.interp(y0 + (1.0 - y0) * x, y, u)
    u1[0] = u2[0] = u[k]
    return x, u1, u2


def unfold(u1: np.ndarray, u2: np.ndarray, y0: float, target: Grid1D, tol: float = 1e-8) -> np.ndarray:
    """Inverse of :func:`fold`, sampled on ``target``."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    gap = abs(u1[0] - u2[0])
    scale = 1.0 + max(np.max(np.abs(u1)), np.max(np.abs(u2)))
    if gap > tol * scale:
        raise FoldContinuityError(f"folded halves differ by {gap:.3e} at the fold point")
    y = target.nodes
    x1 = np.linspace(0.0, 1.0, len(u1))
    x2 = np.linspace(0.0, 1.0, len(u2))
    out = np.empty_like(y)
    left = y <= y0
    out[left] = np.interp((y0 - y[left]) / (1.0 + y0), x1, u1)
    out[~left] = np.interp((y[~left] - y0) / (1.0 - y0), x2, u2)
    return out
