"""Closed-loop simulation on (-1, 1).

The plant is integrated by Crank-Nicolson (after a short backward-Euler start) with Dirichlet actuation at both ends. The
observer runs two folded copies about the measurement point, one per side, on the same
nodes as the plant, so that the unfolded estimate needs no interpolation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import LinAlgError, lu_factor, lu_solve, solve_banded

from .analysis import l2_norm
from .core import FoldContinuityError, Grid1D, GridMismatchError, PlantSpec, folded_params, gauge_factor
from .gains import GainTable, output_feedback, state_feedback
from .kernel_obs import ObserverKernel, solve_observer_kernel

MODES = ("open", "state_fb", "observer", "output_fb")
MAX_DT = 0.01

Field = Union[np.ndarray, Callable[[np.ndarray], np.ndarray], None]


def default_initial(y: np.ndarray) -> np.ndarray:
    return np.cos(0.5 * np.pi * y)


@dataclass
class SimConfig:
    spec: PlantSpec
    grid: Grid1D = field(default_factory=lambda: Grid1D(-1.0, 1.0, 401))
    dt: float = 0.005
    t_end: float = 3.0
    c1: float = 5.0
    c2: float = 5.0
    cc1: float = 1.0
    cc2: float = 1.0
    initial_u: Field = None
    initial_uhat: Field = None
    mode: str = "state_fb"
    stride: int = 10
    coupling: str = "implicit"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.dt <= MAX_DT:
            raise ValueError(f"dt must lie in (0, {MAX_DT}], got {self.dt}")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if min(self.c1, self.c2, self.cc1, self.cc2) <= 0:
            raise ValueError("target rates must be positive")
        if self.coupling not in ("implicit", "lagged"):
            raise ValueError(f"coupling must be 'implicit' or 'lagged', got {self.coupling!r}")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")
        if self.grid.lo != -1.0 or self.grid.hi != 1.0:
            raise ValueError("simulation grid must span [-1, 1]")
        self.grid.index_of(self.spec.y0)
        self.grid.index_of(self.spec.yhat0)

    def field(self, which: str) -> np.ndarray:
        y = self.grid.nodes
        src = self.initial_u if which == "u" else self.initial_uhat
        if src is None:
            return default_initial(y) if which == "u" else np.zeros_like(y)
        v = np.asarray(src(y) if callable(src) else src, dtype=float) * np.ones_like(y)
        if v.shape != y.shape:
            raise GridMismatchError(f"initial field of length {v.size} on a grid of {y.size} nodes")
        return v


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    u_snapshots: np.ndarray
    uhat_snapshots: Optional[np.ndarray]
    controls: np.ndarray
    measurements: np.ndarray
    norm_u: np.ndarray
    norm_err: Optional[np.ndarray]
    mode: str = "open"

    @property
    def error_snapshots(self) -> Optional[np.ndarray]:
        return None if self.uhat_snapshots is None else self.u_snapshots - self.uhat_snapshots


# ----------------------------------------------------------------- plant


class PlantStepper:
    """Theta scheme for u_t = eps u_yy + lambda(y) u with Dirichlet data at the new level.

    ``theta = 0.5`` is Crank-Nicolson, ``theta = 1`` backward Euler.
    """

    def __init__(self, spec: PlantSpec, grid: Grid1D, dt: float, theta: float = 0.5):
        self.n, self.dt, self.eps, self.theta = grid.n, dt, spec.eps, theta
        h = grid.h
        lam = spec.reaction(grid.nodes[1:-1])
        self.r = spec.eps / h**2
        m = self.n - 2
        ab = np.zeros((3, m))
        ab[0, 1:] = -theta * dt * self.r
        ab[1, :] = 1.0 - theta * dt * (lam - 2.0 * self.r)
        ab[2, :-1] = -theta * dt * self.r
        if np.any(np.abs(ab[1]) < 1e-14):
            raise LinAlgError("singular Crank-Nicolson system")
        self.ab, self.lam = ab, lam

    def explicit(self, u: np.ndarray) -> np.ndarray:
        """(I + (1 - theta) dt L) u on the interior, including the old boundary values."""
        ui = u[1:-1]
        lap = self.r * (u[:-2] - 2.0 * ui + u[2:])
        return ui + (1.0 - self.theta) * self.dt * (lap + self.lam * ui)

    def __call__(self, u: np.ndarray, bc_left: float, bc_right: float) -> np.ndarray:
        rhs = self.explicit(u)
        rhs[0] += self.theta * self.dt * self.r * bc_left
        rhs[-1] += self.theta * self.dt * self.r * bc_right
        out = np.empty_like(u)
        out[1:-1] = solve_banded((1, 1), self.ab, rhs)
        out[0], out[-1] = bc_left, bc_right
        return out


def step_plant(u, bc_left: float, bc_right: float, spec: PlantSpec, dt: float, grid: Grid1D | None = None):
    """One Crank-Nicolson step on a uniform grid of [-1, 1] matching ``u``."""
    u = np.asarray(u, dtype=float)
    grid = Grid1D(-1.0, 1.0, u.size) if grid is None else grid
    if grid.n != u.size:
        raise GridMismatchError(f"state of length {u.size} on a grid of {grid.n} nodes")
    return PlantStepper(spec, grid, dt)(u, bc_left, bc_right)


def measure(u, yhat0: float, grid: Grid1D | None = None) -> tuple[float, float]:
    """Collocated value and centered-difference slope at the measurement node."""
    u = np.asarray(u, dtype=float)
    grid = Grid1D(-1.0, 1.0, u.size) if grid is None else grid
    k = grid.index_of(yhat0)
    if k == 0 or k == grid.n - 1:
        raise ValueError("measurement point must be an interior node")
    return float(u[k]), float((u[k + 1] - u[k - 1]) / (2.0 * grid.h))


# ----------------------------------------------------------------- observer


def _one_sided(v0: float, v1: float, v2: float, h: float) -> float:
    return (-3.0 * v0 + 4.0 * v1 - v2) / (2.0 * h)


class _FoldedCopy:
    """One observer copy on its folded grid, theta scheme with the injection taken implicitly."""

    def __init__(self, eps: float, lam: np.ndarray, phi: np.ndarray, dt: float, theta: float = 0.5):
        m = lam.size
        self.m, self.h, self.dt, self.theta = m, 1.0 / (m - 1), dt, theta
        h = self.h
        self.eps, self.phi = eps, phi[1:-1]
        k = m - 2
        A = np.diag(lam[1:-1] - 2.0 * eps / h**2)
        A += np.diag(np.full(k - 1, eps / h**2), 1) + np.diag(np.full(k - 1, eps / h**2), -1)
        # injection -phi(x) * (one-sided x-derivative at 0), unknown part on nodes 1 and 2
        A[:, 0] -= self.phi * (4.0 / (2.0 * h))
        A[:, 1] -= self.phi * (-1.0 / (2.0 * h))
        self.A = A
        self.lu = lu_factor(np.eye(k) - theta * dt * A)

    def _known(self, left: float, right: float, flux: float) -> np.ndarray:
        b = self.phi * (flux + 3.0 * left / (2.0 * self.h))
        b[0] += self.eps / self.h**2 * left
        b[-1] += self.eps / self.h**2 * right
        return b

    def step(self, v: np.ndarray, old, new) -> np.ndarray:
        """``old``/``new`` are (left Dirichlet, right Dirichlet, measured x-slope) at each level."""
        th, dt = self.theta, self.dt
        rhs = v[1:-1] + (1.0 - th) * dt * (self.A @ v[1:-1] + self._known(*old)) + th * dt * self._known(*new)
        out = np.empty_like(v)
        out[1:-1] = lu_solve(self.lu, rhs)
        out[0], out[-1] = new[0], new[1]
        return out


@dataclass
class Observer:
    """Pair of folded copies about the measurement point.

    ``sides`` holds (eps, lambda samples, phi) per copy; stepping matrices are built per
    (dt, theta) on first use.
    """

    kernels: tuple
    grid: Grid1D
    yhat0: float
    sides: tuple
    _steppers: dict = field(default_factory=dict, repr=False)

    @property
    def fold_index(self) -> int:
        return self.grid.index_of(self.yhat0)

    @property
    def steps(self) -> tuple[float, float]:
        return 1.0 / (self.sides[0][1].size - 1), 1.0 / (self.sides[1][1].size - 1)

    def copies(self, dt: float, theta: float = 0.5):
        key = (float(dt), float(theta))
        if key not in self._steppers:
            self._steppers[key] = tuple(_FoldedCopy(e, lam, phi, dt, theta) for e, lam, phi in self.sides)
        return self._steppers[key]

    def fold(self, u: np.ndarray):
        k = self.fold_index
        return u[k::-1].copy(), u[k:].copy()

    def unfold(self, v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
        if abs(v1[0] - v2[0]) > 1e-12 * (1.0 + abs(v1[0])):
            raise FoldContinuityError(f"observer copies disagree at the fold node by {abs(v1[0] - v2[0]):.3e}")
        return np.concatenate([v1[:0:-1], v2])

    def slopes(self, u: np.ndarray) -> tuple[float, float]:
        """One-sided x-slopes of the folded plant state at the fold, one per side."""
        (u1, u2), (h1, h2) = self.fold(u), self.steps
        return _one_sided(u1[0], u1[1], u1[2], h1), _one_sided(u2[0], u2[1], u2[2], h2)


def build_observer(spec: PlantSpec, grid: Grid1D, cc1: float, cc2: float,
                   kernels: Optional[Sequence[ObserverKernel]] = None) -> Observer:
    """Solve (or accept) the observer kernels on folded grids that share the plant nodes."""
    k = grid.index_of(spec.yhat0)
    m1, m2 = k + 1, grid.n - k
    if min(m1, m2) < 4:
        raise ValueError("measurement point too close to the boundary for the folded grids")
    fp = folded_params(spec, "observer")
    if kernels is None:
        kernels = (solve_observer_kernel(fp.lam1_fn, fp.eps1, cc1, m1),
                   solve_observer_kernel(fp.lam2_fn, fp.eps2, cc2, m2))
    if kernels[0].n != m1 or kernels[1].n != m2:
        raise GridMismatchError(f"observer kernels on {kernels[0].n}, {kernels[1].n} nodes; need {m1}, {m2}")
    x1, x2 = np.linspace(0.0, 1.0, m1), np.linspace(0.0, 1.0, m2)
    sides = ((fp.eps1, fp.lam(1, x1), kernels[0].phi), (fp.eps2, fp.lam(2, x2), kernels[1].phi))
    return Observer(tuple(kernels), grid, spec.yhat0, sides)


def step_observer(uhat, u_old, u_new, controls, obs: Observer, dt: float, theta: float = 0.5) -> np.ndarray:
    """Advance the estimate one step of size ``dt``.

    Both copies take the measured value at the fold node as Dirichlet data and the
    boundary inputs at the far ends. The innovation compares one-sided slopes of plant
    and copy at the fold on the same stencil, so it vanishes when the estimate is exact.
    """
    uhat = np.asarray(uhat, dtype=float)
    if uhat.shape != (obs.grid.n,):
        raise GridMismatchError(f"estimate of length {uhat.size} on a grid of {obs.grid.n} nodes")
    k = obs.fold_index
    v = obs.fold(uhat)
    s_old, s_new = obs.slopes(u_old), obs.slopes(u_new)
    ends_old = (u_old[0], u_old[-1])
    ends_new = (controls[0], controls[1])
    out = []
    for i, cp in enumerate(obs.copies(dt, theta)):
        vi = v[i].copy()
        vi[0] = u_old[k]
        out.append(cp.step(vi, (u_old[k], ends_old[i], s_old[i]), (u_new[k], ends_new[i], s_new[i])))
    return obs.unfold(*out)


# ----------------------------------------------------------------- loop

SMOOTHING_STEPS = 2


def _boundary_values(ubar_controls, spec: PlantSpec, grid: Grid1D):
    """Boundary values of the advection-free state from inputs in the advective frame."""
    if spec.nu is None:
        return float(ubar_controls[0]), float(ubar_controls[1])
    fac = gauge_factor(spec, grid)
    return float(ubar_controls[0] * fac[0]), float(ubar_controls[1] * fac[-1])


def run(config: SimConfig, gt: Optional[GainTable] = None, obs: Optional[Observer] = None) -> Trajectory:
    """Fixed-step closed loop.

    With ``config.coupling = 'implicit'`` the inputs imposed at the new time level are
    the feedback of the new state itself: one step is affine in the two inputs, so it
    is evaluated for three input pairs and the 2x2 consistency system is solved. With
    ``'lagged'`` the inputs come from the previous step.

    The first ``SMOOTHING_STEPS`` steps are taken as pairs of backward-Euler half steps:
    feedback switches the boundary data on abruptly at t = 0, and Crank-Nicolson alone
    damps the resulting grid-scale modes only slowly.
    """
    mode = config.mode
    if mode in ("state_fb", "output_fb") and gt is None:
        raise ValueError(f"mode {mode!r} needs a GainTable")
    if gt is not None and gt.grid.n != config.grid.n:
        raise GridMismatchError(f"gains on {gt.grid.n} nodes, simulation on {config.grid.n}")
    spec, grid, dt = config.spec, config.grid, config.dt
    with_obs = mode in ("observer", "output_fb")
    if with_obs and obs is None:
        obs = build_observer(spec, grid, config.cc1, config.cc2)
    plant = {(dt, 0.5): PlantStepper(spec, grid, dt), (dt / 2, 1.0): PlantStepper(spec, grid, dt / 2, 1.0)}
    steps = int(round(config.t_end / dt))
    u = config.field("u")
    if mode == "open" and max(abs(u[0]), abs(u[-1])) > 1e-12:
        raise ValueError("open-loop initial data must vanish at y = -1 and y = 1")
    uhat = config.field("uhat") if with_obs else None
    if with_obs:
        uhat[grid.index_of(spec.yhat0)] = u[grid.index_of(spec.yhat0)]
    closed = mode in ("state_fb", "output_fb")

    def inputs(u, uhat):
        if mode == "state_fb":
            ctrl = state_feedback(u, gt, spec)
        elif mode == "output_fb":
            ctrl = output_feedback(uhat, gt, spec)
        else:
            ctrl = (0.0, 0.0)
        return _boundary_values(ctrl, spec, grid), ctrl

    def advance(u, uhat, bc, d, th):
        u_new = plant[(d, th)](u, *bc)
        uh_new = step_observer(uhat, u, u_new, bc, obs, d, th) if with_obs else None
        return u_new, uh_new

    T, U, UH, C, Y, NU, NE = [], [], [], [], [], [], []
    bc, ctrl = inputs(u, uhat)

    def record(t):
        T.append(t)
        U.append(u.copy())
        C.append(ctrl)
        Y.append(measure(u, spec.yhat0, grid))
        NU.append(l2_norm(u, grid=grid))
        if with_obs:
            UH.append(uhat.copy())
            NE.append(l2_norm(u - uhat, grid=grid))

    record(0.0)
    for s in range(1, steps + 1):
        sub = ((dt / 2, 1.0), (dt / 2, 1.0)) if s <= SMOOTHING_STEPS else ((dt, 0.5),)
        for d, th in sub:
            if closed and config.coupling == "implicit":
                trial = [advance(u, uhat, b, d, th) for b in ((0.0, 0.0), (1.0, 0.0), (0.0, 1.0))]
                resp = [np.asarray(inputs(*tr)[0]) for tr in trial]
                G = np.column_stack([resp[1] - resp[0], resp[2] - resp[0]])
                bc = tuple(np.linalg.solve(np.eye(2) - G, resp[0]))
            u, uhat = advance(u, uhat, bc, d, th)
            bc, ctrl = inputs(u, uhat)
        if s % config.stride == 0 or s == steps:
            record(s * dt)
    return Trajectory(np.array(T), np.array(U), np.array(UH) if with_obs else None, np.array(C), np.array(Y),
                      np.array(NU), np.array(NE) if with_obs else None, mode)
