"""Feedback gains on the physical interval and the boundary control laws."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Grid1D, GridMismatchError, PlantSpec, gauge_factor
from .kernel_aux import QRKernels
from .kernel_ctrl import Row1Kernels, Row2Kernels


@dataclass(frozen=True)
class GainTable:
    """Gains F1, F2 sampled on ``grid``.

    The gains may jump at the fold point, so the node ``fold_node_index`` holds the
    left limit in ``F1``/``F2`` and the right limit in ``F1_plus``/``F2_plus``.
    """

    F1: np.ndarray
    F2: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    y0: float
    fold_node_index: int
    F1_plus: float
    F2_plus: float
    grid: Grid1D

    def one_sided(self, which: int) -> tuple[np.ndarray, np.ndarray]:
        """(left branch on [-1, y0], right branch on [y0, 1]) of F1 or F2."""
        F, plus = (self.F1, self.F1_plus) if which == 1 else (self.F2, self.F2_plus)
        k = self.fold_node_index
        right = F[k:].copy()
        right[0] = plus
        return F[: k + 1].copy(), right

    def jump(self, which: int) -> float:
        left, right = self.one_sided(which)
        return float(right[0] - left[-1])

    def rows(self):
        """(y, F1, F2) rows with the fold node listed twice, left limit first."""
        y = self.grid.nodes
        k = self.fold_node_index
        out = [(y[i], self.F1[i], self.F2[i]) for i in range(k + 1)]
        out.append((y[k], self.F1_plus, self.F2_plus))
        out.extend((y[i], self.F1[i], self.F2[i]) for i in range(k + 1, len(y)))
        return out


def _tail_trapezoid(M: np.ndarray, h: float) -> np.ndarray:
    """For each column j, trapezoid of M[i, j] over i = j..n-1."""
    n = M.shape[0]
    i, j = np.indices((n, n))
    w = np.where(i >= j, h, 0.0)
    w[i == j] = 0.5 * h
    w[-1, :] = 0.5 * h
    w[-1, -1] = 0.0
    return np.sum(w * M, axis=0)


def assemble_h(row1: Row1Kernels, row2: Row2Kernels, qr: QRKernels):
    """Auxiliary gains h1, h2 on [0, 1] from both transformations evaluated at x = 1."""
    n = row2.k21.n
    if row1.n != n or qr.n != n:
        raise GridMismatchError(f"kernels on grids of {row1.n}, {n} and {qr.n} nodes")
    h = 1.0 / (n - 1)
    k11, k12 = row1.k11.values, row1.k12.values
    k21, k22 = row2.k21.values, row2.k22.values
    q, p = qr.q.values, np.asarray(qr.p, dtype=float)
    p_rev = p[::-1][:, None]  # p(1 - z_i)
    q1 = q[-1, :][:, None]  # q(1, z_i)
    h1 = k21[-1] + q[-1] - _tail_trapezoid(np.tril(p_rev * k21 + q1 * k11), h)
    h2 = k22[-1] + p[::-1] - _tail_trapezoid(np.tril(p_rev * k22 + q1 * k12), h)
    return h1, h2


def assemble_feedback(row1: Row1Kernels, h, y0: float, out_grid: Grid1D) -> GainTable:
    """Unfold the x = 1 kernel slices into F1, F2 on ``out_grid``."""
    if out_grid.lo != -1.0 or out_grid.hi != 1.0:
        raise ValueError("gains live on [-1, 1]")
    k = out_grid.index_of(y0)
    h1, h2 = (np.asarray(v, dtype=float) for v in h)
    n = row1.n
    if h1.shape != (n,) or h2.shape != (n,):
        raise GridMismatchError(f"h of length {h1.size}, {h2.size} against kernels on {n} nodes")
    x = np.linspace(0.0, 1.0, n)
    y = out_grid.nodes
    sl = np.clip((y0 - y) / (1.0 + y0), 0.0, 1.0)
    sr = np.clip((y - y0) / (1.0 - y0), 0.0, 1.0)
    k11, k12 = row1.k11.values[-1], row1.k12.values[-1]

    def branch(left, right):
        F = np.where(y <= y0, np.interp(sl, x, left) / (1.0 + y0), np.interp(sr, x, right) / (1.0 - y0))
        F[k] = left[0] / (1.0 + y0)
        return F, float(right[0] / (1.0 - y0))

    F1, F1p = branch(k11, k12)
    F2, F2p = branch(h1, h2)
    return GainTable(F1, F2, h1, h2, float(y[k]), k, F1p, F2p, out_grid)


def _split_trapezoid(f_left: np.ndarray, f_right: np.ndarray, h: float) -> float:
    tl = h * (f_left.sum() - 0.5 * (f_left[0] + f_left[-1])) if len(f_left) > 1 else 0.0
    tr = h * (f_right.sum() - 0.5 * (f_right[0] + f_right[-1])) if len(f_right) > 1 else 0.0
    return float(tl + tr)


def state_feedback(ubar: np.ndarray, gt: GainTable, spec: PlantSpec) -> tuple[float, float]:
    """Boundary inputs (U1bar, U2bar) for the advective state ``ubar`` on the gain grid.

    The gains act on the advection-free state; the gauge factor is applied on the way in
    and removed from the right-hand input on the way out. Without advection both are 1.
    """
    ubar = np.asarray(ubar, dtype=float)
    grid = gt.grid
    if ubar.shape != (grid.n,):
        raise GridMismatchError(f"state of length {ubar.size} on a gain grid of {grid.n} nodes")
    fac = gauge_factor(spec, grid) if spec.nu is not None else np.ones(grid.n)
    u = fac * ubar
    k = gt.fold_node_index
    out = []
    for which in (1, 2):
        left, right = gt.one_sided(which)
        out.append(_split_trapezoid(left * u[: k + 1], right * u[k:], grid.h))
    return out[0] / fac[0], out[1] / fac[-1]


def output_feedback(uhat_bar: np.ndarray, gt: GainTable, spec: PlantSpec) -> tuple[float, float]:
    """Same law as :func:`state_feedback`, fed with the estimate."""
    return state_feedback(uhat_bar, gt, spec)
