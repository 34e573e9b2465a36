"""The 2x2 backstepping kernel K(x, y) of the first transformation.

Each component k_ij solves eps_i d_xx k - eps_j d_yy k = f_ij on 0 <= y <= x <= 1.
With alpha = sqrt(eps_i), beta = sqrt(eps_j) the Riemann invariants

    kc = alpha d_x k + beta d_y k   (carried along (alpha, -beta))
    kh = alpha d_x k - beta d_y k   (carried along (alpha, +beta))

obey first-order transport with source f. Every characteristic moves forward in
x, so the discrete integral equations are solved by marching in x and running the
successive approximations column by column: a node's invariants are the value at
the foot of its characteristic (interior interpolation, the diagonal, or the
y = 0 fold) plus the trapezoid integral of the source along the segment. The
kernel itself is recovered by integrating d_x k = (kc + kh) / (2 alpha) along
rows from the diagonal, where every component has known data.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FoldedParams, GridMismatchError, TriGrid


class ConvergenceError(RuntimeError):
    """Successive approximations did not settle within ``max_iter``."""

    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200


def lagrange_interp(v: np.ndarray, h: float, pts: np.ndarray, order: int = 3) -> np.ndarray:
    """Interpolate samples ``v`` (spacing ``h`` from 0) at ``pts`` with a sliding Lagrange stencil."""
    m = len(v)
    pts = np.asarray(pts, dtype=float)
    if m == 1:
        return np.full(pts.shape, v[0])
    p = min(order, m - 1)
    t = pts / h
    b = np.clip(np.floor(t).astype(int) - (p - 1) // 2, 0, m - 1 - p)
    out = np.zeros_like(t)
    for k in range(p + 1):
        w = np.ones_like(t)
        for l in range(p + 1):
            if l != k:
                w *= (t - (b + l)) / (k - l)
        out += w * v[b + k]
    return out


@dataclass
class _Component:
    """Transport data of one kernel component."""

    alpha: float
    beta: float
    kind: str  # "goursat" (speed 1), "cauchy" (zero Cauchy data), "reflect" (k=0, kc = -d1 kh)
    diag_k: np.ndarray = field(default=None, repr=False)
    diag_p: np.ndarray = field(default=None, repr=False)
    jump: float = 0.0
    kink: float | None = None

    @property
    def c(self) -> float:
        return self.beta / self.alpha


def _goursat_diag(lam, c_rate: float, eps: float, x: np.ndarray):
    """Diagonal value and kc trace for components whose diagonal is a characteristic."""
    lam_x = lam(x)
    rate = (lam_x + c_rate) / (2.0 * eps)
    k = np.zeros_like(x)
    h = x[1] - x[0]
    # Simpson on each cell with the midpoint evaluated exactly
    mid = (lam(x[:-1] + 0.5 * h) + c_rate) / (2.0 * eps)
    k[1:] = -np.cumsum(h / 6.0 * (rate[:-1] + 4.0 * mid + rate[1:]))
    return k, -np.sqrt(eps) * rate


def _march_row(n, a, comps, source, reflect, tol, max_iter, order=3, stop=None, start=None):
    """March one row (k_i1, k_i2) of K in x.

    ``source(i, KA, KB, g)`` returns the sources of both components on column ``i``.
    ``reflect`` is the diagonal reflection coefficient for a "reflect" component
    (only k21 uses it), and for that row g is tracked from the diagonal trace.
    A component with ``kink`` set has a source that is only continuous across the
    line y = kink * x; interpolation never straddles it and segment integrals are
    split where they cross it.

    ``stop`` ends the march at that column; ``start`` resumes from a state dict
    whose first columns are already filled (see :func:`_startup`).
    """
    h = 1.0 / (n - 1)
    x = np.linspace(0.0, 1.0, n)
    K = [np.zeros((n, n)) for _ in comps]
    P = [np.zeros((n, n)) for _ in comps]
    M = [np.zeros((n, n)) for _ in comps]
    F = [np.zeros((n, n)) for _ in comps]
    Mb = [np.zeros(n) for _ in comps]
    g = np.zeros(n)
    line = [np.zeros(n) for _ in comps]  # continuous part of kh along y = c x for jump components
    tracks_g = comps[0].kind == "reflect"
    A, B = comps
    worst = 0.0
    iters_max = 0

    def fold(PA0, PB0):
        # transmission through the fold: kh_A = a kc_B, kh_B = kc_A / a
        return a * PB0, PA0 / a

    def diag_p(comp, idx, Mdiag):
        if comp.kind == "goursat":
            return comp.diag_p[idx]
        if comp.kind == "cauchy":
            return 0.0
        return -reflect * Mdiag

    # corner node
    for _ in range(8):
        PA0 = diag_p(A, 0, M[0][0, 0])
        PB0 = diag_p(B, 0, M[1][0, 0])
        mA, mB = fold(PA0, PB0)
        P[0][0, 0], P[1][0, 0] = PA0, PB0
        M[0][0, 0], M[1][0, 0] = mA, mB
    Mb[0][0], Mb[1][0] = M[0][0, 0], M[1][0, 0]
    for q, comp in enumerate(comps):
        # kh of a component with zero Cauchy data jumps across the characteristic
        # leaving the corner: fold value below it, zero above
        comp.jump = float(M[q][0, 0]) if comp.kind == "cauchy" else 0.0
        if comp.jump:
            comp.kink = comp.c
    if tracks_g:
        g[0] = _g_from_trace(A, P[0][0, 0], M[0][0, 0])
    i_first = 0
    if start is not None:
        K, P, M, F, Mb, line, g = (start[k] for k in ("K", "P", "M", "F", "Mb", "line", "g"))
        i_first = start["cols"]

    for i in range(i_first, n - 1 if stop is None else stop):
        i1 = i + 1
        y = x[: i1 + 1]
        x1 = x[i1]
        x0 = x[i]
        Knew = []
        for q, comp in enumerate(comps):
            col = np.empty(i1 + 1)
            col[:i1] = K[q][i, :i1]
            col[i1] = comp.diag_k[i1]
            Knew.append(col)
        Pnew = [P[q][i, : i1 + 1].copy() for q in range(2)]
        Mnew = [M[q][i, : i1 + 1].copy() for q in range(2)]
        for q in range(2):
            Pnew[q][i1] = P[q][i, i]
            Mnew[q][i1] = M[q][i, i]
        g1 = g[i]
        fl0 = [_on_line(F[q][i, : i + 1], comp.kink * x0 / h) if comp.kink else 0.0 for q, comp in enumerate(comps)]
        KxOld = [(P[q][i, :i1] + M[q][i, :i1] - _jump(comps[q], x0, y[:i1])) / (2.0 * comps[q].alpha) for q in range(2)]

        def f_at(q, pts):
            comp = comps[q]
            if comp.kink:
                return _interp_across_line(F[q][i, : i + 1], h, pts, comp.kink * x0 / h, fl0[q], order)
            return lagrange_interp(F[q][i, : i + 1], h, pts, order)

        converged = False
        for it in range(max_iter):
            fnew = source(i1, Knew[0], Knew[1], g1)
            fl1 = [_on_line(fnew[q], comp.kink * x1 / h) if comp.kink else 0.0 for q, comp in enumerate(comps)]

            def seg(q, xa, ya, yb, fa, fb):
                # trapezoid of f / alpha from (xa, ya) to (x1, yb), split at the kink line
                comp = comps[q]
                out = (x1 - xa) / (2 * comp.alpha) * (fa + fb)
                if comp.kink:
                    s = comp.kink
                    da, db = ya - s * xa, yb - s * x1
                    cr = da * db < 0
                    if np.any(cr):
                        t = da[cr] / (da[cr] - db[cr])
                        xa_c = xa[cr] if np.ndim(xa) else xa
                        xc = xa_c + t * (x1 - xa_c)
                        fc = fl0[q] + (xc - x0) / h * (fl1[q] - fl0[q])
                        fa_c = fa[cr] if np.ndim(fa) else fa
                        out[cr] = ((xc - xa_c) * (fa_c + fc) + (x1 - xc) * (fc + fb[cr])) / (2 * comp.alpha)
                return out

            change = 0.0
            for q, comp in enumerate(comps):
                cq = comp.c
                Pq = np.empty(i1 + 1)
                ystar = y + cq * h
                inside = ystar <= x0 + 1e-12
                if np.any(inside):
                    pts = ystar[inside]
                    Pq[inside] = lagrange_interp(P[q][i, : i + 1], h, pts, order) + seg(
                        q, x0, pts, y[inside], f_at(q, pts), fnew[q][inside]
                    )
                cross = ~inside
                pd1 = diag_p(comp, i1, Mnew[q][i1])
                xc = (y[cross] + cq * x1) / (1.0 + cq)
                th = (xc - x0) / h
                if comp.kind == "goursat":
                    pd = _goursat_p_at(comp, xc, x)
                else:
                    pd = _trace_interp(P[q][i - 1, i - 1] if i else None, P[q][i, i], pd1, th)
                fd = _trace_interp(F[q][i - 1, i - 1] if i else None, F[q][i, i], fnew[q][i1], th)
                Pq[cross] = pd + (x1 - xc) / (2 * comp.alpha) * (fd + fnew[q][cross])
                change = max(change, float(np.max(np.abs(Pq - Pnew[q]))))
                Pnew[q] = Pq
            mb1 = fold(Pnew[0][0], Pnew[1][0])
            for q, comp in enumerate(comps):
                cq = comp.c
                Mq = np.empty(i1 + 1)
                ystar = y - cq * h
                below = ystar < -1e-12
                above = ystar > x0 + 1e-12
                inside = ~below & ~above
                if np.any(inside):
                    pts = np.clip(ystar[inside], 0.0, None)
                    smooth = M[q][i, : i + 1] - _jump(comp, x0, y[: i + 1])
                    if comp.jump:
                        mt = _interp_across_line(smooth, h, pts, comp.c * x0 / h, line[q][i], order)
                    else:
                        mt = lagrange_interp(smooth, h, pts, order)
                    Mq[inside] = mt + _jump(comp, x1, y[inside]) + seg(q, x0, pts, y[inside], f_at(q, pts), fnew[q][inside])
                if np.any(below):
                    xc = x1 - y[below] / cq
                    th = (xc - x0) / h
                    mb = _trace_interp(Mb[q][i - 1] if i else None, Mb[q][i], mb1[q], th)
                    fb = _trace_interp(F[q][i - 1, 0] if i else None, F[q][i, 0], fnew[q][0], th)
                    Mq[below] = mb + (x1 - xc) / (2 * comp.alpha) * (fb + fnew[q][below])
                if np.any(above):
                    Mq[above] = 0.0  # zero Cauchy data on the diagonal
                Mq[0] = mb1[q]
                change = max(change, float(np.max(np.abs(Mq - Mnew[q]))))
                Mnew[q] = Mq
            # diagonal kc for reflecting components uses the fresh kh
            for q, comp in enumerate(comps):
                if comp.kind == "reflect":
                    Pnew[q][i1] = -reflect * Mnew[q][i1]
                elif comp.kind == "cauchy":
                    Pnew[q][i1] = 0.0
                    Mnew[q][i1] = 0.0
            if tracks_g:
                g_new = _g_from_trace(A, Pnew[0][i1], Mnew[0][i1])
                change = max(change, abs(g_new - g1))
                g1 = g_new
            for q, comp in enumerate(comps):
                Kx = (Pnew[q] + Mnew[q] - _jump(comp, x1, y)) / (2.0 * comp.alpha)
                col = np.empty(i1 + 1)
                col[:i1] = K[q][i, :i1] + 0.5 * h * (KxOld[q] + Kx[:i1])
                if comp.jump:
                    # exact integral of the jump part of d_x k across the step
                    span = np.clip(x1 - np.maximum(x0, y[:i1] / comp.c), 0.0, h)
                    col[:i1] += comp.jump * span / (2.0 * comp.alpha)
                    # rows crossing the line inside the step: split the trapezoid
                    # where the continuous part has its kink
                    xs = y[:i1] / comp.c
                    hit = np.nonzero((xs > x0 + 1e-12) & (xs < x1 - 1e-12))[0]
                    if len(hit):
                        line1 = line[q][i] + h / (2 * comp.alpha) * (fl0[q] + fl1[q])
                        th = (xs[hit] - x0) / h
                        kxs = ((1 - th) * P[q][i, hit] + th * Pnew[q][hit] + (1 - th) * line[q][i] + th * line1) / (
                            2.0 * comp.alpha
                        )
                        split = 0.5 * th * h * (KxOld[q][hit] + kxs) + 0.5 * (1 - th) * h * (kxs + Kx[hit])
                        col[hit] += split - 0.5 * h * (KxOld[q][hit] + Kx[hit])
                col[i1] = comp.diag_k[i1]
                Knew[q] = col
            scale = 1.0 + max(float(np.max(np.abs(v))) for v in (*Pnew, *Mnew))
            if change < tol * scale:
                converged = True
                iters_max = max(iters_max, it + 1)
                worst = max(worst, change)
                break
        if not converged:
            raise ConvergenceError(f"column {i1} of the kernel march did not converge", change)
        fnew = source(i1, Knew[0], Knew[1], g1)
        for q, comp in enumerate(comps):
            K[q][i1, : i1 + 1] = Knew[q]
            P[q][i1, : i1 + 1] = Pnew[q]
            M[q][i1, : i1 + 1] = Mnew[q]
            F[q][i1, : i1 + 1] = fnew[q]
            Mb[q][i1] = Mnew[q][0]
            if comp.jump:
                # the line is a kh characteristic: integrate the source along it
                f1 = _on_line(fnew[q], comp.c * x1 / h)
                line[q][i1] = line[q][i] + h / (2 * comp.alpha) * (fl0[q] + f1)
        g[i1] = g1
    return dict(K=K, P=P, M=M, F=F, Mb=Mb, line=line, g=g, iters=iters_max, res=worst)


STARTUP_COLUMNS = 6
STARTUP_REFINE = 8


def _sample_state(fine, n, cols, R):
    """Coarse-grid state holding the first ``cols`` columns of a refined march."""
    out = {"cols": cols}
    for key in ("K", "P", "M", "F"):
        arrs = []
        for f in fine[key]:
            c = np.zeros((n, n))
            c[: cols + 1, :] = f[: R * cols + 1 : R, : R * (n - 1) + 1 : R]
            arrs.append(np.tril(c))
        out[key] = arrs
    for key in ("Mb", "line"):
        arrs = []
        for f in fine[key]:
            c = np.zeros(n)
            c[: cols + 1] = f[: R * cols + 1 : R]
            arrs.append(c)
        out[key] = arrs
    g = np.zeros(n)
    g[: cols + 1] = fine["g"][: R * cols + 1 : R]
    out["g"] = g
    return out


def _startup(problem, n, a, reflect, tol, max_iter):
    """March the first columns on a refined grid: the low-order stencils next to
    the corner otherwise leave an O(h^2) imprint that characteristics carry
    through the whole triangle."""
    m0, R = STARTUP_COLUMNS, STARTUP_REFINE
    if n - 1 <= 2 * m0:
        return None
    nf = R * (n - 1) + 1
    comps, source = problem(nf)
    fine = _march_row(nf, a, comps, source, reflect, tol, max_iter, stop=R * m0)
    return _sample_state(fine, n, m0, R)


def _lagrange_at(nodes, vals, t):
    out = 0.0
    for k in range(len(nodes)):
        w = 1.0
        for l in range(len(nodes)):
            if l != k:
                w *= (t - nodes[l]) / (nodes[k] - nodes[l])
        out += w * vals[k]
    return out


def _on_line(v, s):
    """Value at grid position ``s`` by quadratic extrapolation from the nodes below it."""
    fl = int(np.floor(s + 1e-9))
    if fl < 2:
        return float(np.interp(s, np.arange(len(v)), v))
    return float(_lagrange_at([fl - 2, fl - 1, fl], v[fl - 2 : fl + 1], s))


def _interp_across_line(v, h, pts, s, line_val, order=3):
    """Like :func:`lagrange_interp` for a field with a kink at grid position ``s``.

    Stencils that would straddle ``s`` are replaced by same-side nodes plus the
    value on the kink line itself.
    """
    out = lagrange_interp(v, h, pts, order)
    m = len(v)
    p = min(order, m - 1)
    if p < 1:
        return out
    t = np.asarray(pts, dtype=float) / h
    b = np.clip(np.floor(t).astype(int) - (p - 1) // 2, 0, m - 1 - p)
    tol = 1e-9
    bad = np.nonzero((b < s - tol) & (b + p > s + tol))[0]
    for k in bad:
        if t[k] <= s:
            side = [j for j in range(int(np.floor(s + tol)), -1, -1) if j < s - tol][:p]
        else:
            side = [j for j in range(int(np.ceil(s - tol)), m) if j > s + tol][:p]
        nodes = [s] + side
        vals = [line_val] + [v[j] for j in side]
        out[k] = _lagrange_at(nodes, vals, t[k])
    return out


def _trace_interp(vm1, v0, v1, th):
    """Boundary trace at x0 + th h from its values at x0 - h, x0, x0 + h (quadratic)."""
    if vm1 is None:
        return (1 - th) * v0 + th * v1
    return 0.5 * th * (th - 1) * vm1 + (1 - th) * (1 + th) * v0 + 0.5 * th * (th + 1) * v1


def _jump(comp, x, y):
    """Jump part of kh: ``comp.jump`` below the line y = c x, half of it on the line."""
    if not comp.jump:
        return 0.0
    y = np.asarray(y, dtype=float)
    d = comp.c * x - y
    on_line = (np.abs(d) < 1e-12) & (y > 0)
    return comp.jump * np.where(on_line, 0.5, (d > -1e-12).astype(float))


def _goursat_p_at(comp, xc, x):
    # kc on a characteristic diagonal is -(lambda(x) + c)/(2 sqrt(eps)); the exact
    # profile is stored as a callable on the component when available
    fn = getattr(comp, "p_fn", None)
    if fn is not None:
        return fn(xc)
    return np.interp(xc, x, comp.diag_p)


def _g_from_trace(comp, P, M):
    # g = (eps1 - eps2) d_y k21(x, x), d_y k = (kc - kh) / (2 beta), beta = sqrt(eps1)
    eps1, eps2 = comp.beta**2, comp.alpha**2
    return (eps1 - eps2) * (P - M) / (2.0 * comp.beta)


@dataclass(frozen=True)
class Row1Kernels:
    k11: TriGrid
    k12: TriGrid
    kc11: TriGrid
    kc12: TriGrid
    kh11: TriGrid
    kh12: TriGrid
    c1: float
    iterations: int = 0
    residual: float = 0.0

    @property
    def n(self) -> int:
        return self.k11.n


@dataclass(frozen=True)
class Row2Kernels:
    k21: TriGrid
    k22: TriGrid
    kh21: TriGrid
    kh22: TriGrid
    kc21: TriGrid
    kc22: TriGrid
    g_trace: np.ndarray
    delta1: float
    delta2: float
    delta3: float
    c2: float
    iterations: int = 0
    residual: float = 0.0

    @property
    def n(self) -> int:
        return self.k21.n


def deltas(fp: FoldedParams) -> tuple[float, float, float]:
    """Reflection coefficients (delta1, delta2, delta3) of the row-2 system."""
    s1, s2, a = fp.s1, fp.s2, fp.a
    return (s1 - s2) / (s1 + s2), (1 - a**2) / (1 + a**2), s1 / (s1 + s2)


def _check_params(fp: FoldedParams, c: float, tri_n: int):
    if not c > 0:
        raise ValueError(f"target rate must be positive, got {c}")
    if fp.eps1 < fp.eps2 - 1e-14:
        raise ValueError("folded diffusions must satisfy eps1 >= eps2 (fold point in (-1, 0])")
    if tri_n < 3:
        raise ValueError("tri_n must be at least 3")


def _goursat_component(lam, c_rate, eps, x):
    k, p = _goursat_diag(lam, c_rate, eps, x)
    comp = _Component(np.sqrt(eps), np.sqrt(eps), "goursat", k, p)
    comp.p_fn = lambda xc: -(lam(np.asarray(xc)) + c_rate) / (2.0 * np.sqrt(eps))
    return comp


def _row1_problem(fp: FoldedParams, c1: float):
    lam1 = lambda s: fp.lam(1, s)
    lam2 = lambda s: fp.lam(2, s)

    def problem(n):
        x = np.linspace(0.0, 1.0, n)
        A = _goursat_component(lam1, c1, fp.eps1, x)
        if fp.eps1 == fp.eps2:
            B = _zero_goursat(c1, fp.eps1, x)
        else:
            B = _Component(fp.s1, fp.s2, "cauchy", np.zeros(n), np.zeros(n))
        l1y, l2y = lam1(x), lam2(x)

        def source(i, KA, KB, g):
            m = len(KA)
            return (l1y[:m] + c1) * KA, (l2y[:m] + c1) * KB

        return (A, B), source

    return problem


def _row2_problem(fp: FoldedParams, c2: float, row1_k):
    """``row1_k(n)`` returns (k11, k12) arrays on the n-node grid."""
    lam1 = lambda s: fp.lam(1, s)
    lam2 = lambda s: fp.lam(2, s)

    def problem(n):
        x = np.linspace(0.0, 1.0, n)
        if fp.eps1 == fp.eps2:
            A = _zero_goursat(c2, fp.eps2, x)
        else:
            A = _Component(fp.s2, fp.s1, "reflect", np.zeros(n), np.zeros(n))
        B = _goursat_component(lam2, c2, fp.eps2, x)
        if fp.eps1 != fp.eps2:
            B.kink = fp.a  # the forcing g k12 inherits the kink of k12 along y = a x
        l1y, l2y = lam1(x), lam2(x)
        k11, k12 = row1_k(n)

        def source(i, KA, KB, g):
            m = len(KA)
            return (l1y[:m] + c2) * KA - g * k11[i, :m], (l2y[:m] + c2) * KB - g * k12[i, :m]

        return (A, B), source

    return problem


def _zero_goursat(c_rate, eps, x):
    comp = _Component(np.sqrt(eps), np.sqrt(eps), "goursat", np.zeros_like(x), np.zeros_like(x))
    comp.p_fn = lambda xc: np.zeros_like(np.asarray(xc, dtype=float))
    return comp


def _solve(problem, n, a, reflect, tol, max_iter):
    start = _startup(problem, n, a, reflect, tol, max_iter)
    comps, source = problem(n)
    return _march_row(n, a, comps, source, reflect, tol, max_iter, start=start)


def solve_row1(fp: FoldedParams, c1: float, tri_n: int = 101, tol: float = DEFAULT_TOL,
               max_iter: int = DEFAULT_MAX_ITER) -> Row1Kernels:
    """Solve (k11, k12) and their invariants on the triangle."""
    _check_params(fp, c1, tri_n)
    n = tri_n
    out = _solve(_row1_problem(fp, c1), n, fp.a, 0.0, tol, max_iter)
    K, P, M = out["K"], out["P"], out["M"]
    T = lambda v: TriGrid(n, v)
    return Row1Kernels(T(K[0]), T(K[1]), T(P[0]), T(P[1]), T(M[0]), T(M[1]), c1, out["iters"], out["res"])


def solve_row2(row1: Row1Kernels, fp: FoldedParams, c2: float, tri_n: int | None = None,
               tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> Row2Kernels:
    """Solve (k21, k22), their invariants and the trace g[k21] given row 1."""
    n = row1.n if tri_n is None else tri_n
    if n != row1.n:
        raise GridMismatchError(f"row 1 solved on {row1.n} nodes, row 2 requested on {n}")
    _check_params(fp, c2, n)
    d1, d2, d3 = deltas(fp)
    p1 = _row1_problem(fp, row1.c1)

    def row1_k(m):
        if m == n:
            return row1.k11.values, row1.k12.values
        # refined start-up grid: only its first columns are ever read
        comps, source = p1(m)
        fine = _march_row(m, fp.a, comps, source, 0.0, tol, max_iter, stop=STARTUP_REFINE * STARTUP_COLUMNS)
        return fine["K"][0], fine["K"][1]

    out = _solve(_row2_problem(fp, c2, row1_k), n, fp.a, d1, tol, max_iter)
    K, P, M, g = out["K"], out["P"], out["M"], out["g"]
    if fp.eps1 == fp.eps2:
        g = np.zeros(n)
    T = lambda v: TriGrid(n, v)
    return Row2Kernels(T(K[0]), T(K[1]), T(M[0]), T(M[1]), T(P[0]), T(P[1]), g, d1, d2, d3, c2, out["iters"], out["res"])


def trapezoid_weights(n: int) -> np.ndarray:
    """Lower-triangular weights so that (Wt @ f)[m] = trapezoid of f over [0, x_m]."""
    h = 1.0 / (n - 1)
    w = np.tril(np.full((n, n), h))
    w[np.arange(n), np.arange(n)] = 0.5 * h
    w[:, 0] = 0.5 * h
    w[0, 0] = 0.0
    return w


def _kernel_arrays(K):
    arr = [[np.asarray(getattr(k, "values", k), dtype=float) for k in row] for row in K]
    n = arr[0][0].shape[0]
    for row in arr:
        for k in row:
            if k.shape != (n, n):
                raise GridMismatchError("kernel components on different grids")
    return arr, n


def volterra_operator(K) -> np.ndarray:
    """The 2n x 2n matrix A with (A U) = int_0^x K(x, y) U(y) dy by trapezoid."""
    arr, n = _kernel_arrays(K)
    w = trapezoid_weights(n)
    return np.block([[w * arr[0][0], w * arr[0][1]], [w * arr[1][0], w * arr[1][1]]])


def apply_volterra(K, U):
    """W(x) = U(x) - int_0^x K(x, y) U(y) dy for the 2x2 kernel ``K``."""
    A = volterra_operator(K)
    n = A.shape[0] // 2
    u = np.concatenate([np.asarray(U[0], float), np.asarray(U[1], float)])
    if u.shape != (2 * n,):
        raise GridMismatchError(f"fields of length {len(U[0])}, {len(U[1])} on a kernel grid of {n}")
    w = u - A @ u
    return w[:n], w[n:]


def invert_volterra(K, W, tol: float = 1e-12, method: str = "substitution", max_iter: int | None = None):
    """Solve U - int_0^x K U = W.

    ``substitution`` walks the nodes in increasing x solving a 2x2 system at each;
    ``fixed_point`` iterates U <- W + int K U, which terminates because the discrete
    operator is lower triangular.
    """
    A = volterra_operator(K)
    n = A.shape[0] // 2
    w = np.concatenate([np.asarray(W[0], float), np.asarray(W[1], float)])
    if w.shape != (2 * n,):
        raise GridMismatchError(f"fields of length {len(W[0])}, {len(W[1])} on a kernel grid of {n}")
    if method == "substitution":
        u = np.zeros(2 * n)
        for m in range(n):
            idx = (m, n + m)
            rhs = np.array([w[m], w[n + m]])
            rhs += A[idx, :] @ u - A[np.ix_(idx, idx)] @ u[list(idx)]
            blk = np.eye(2) - A[np.ix_(idx, idx)]
            u[list(idx)] = np.linalg.solve(blk, rhs)
    elif method == "fixed_point":
        max_iter = 4 * n + 50 if max_iter is None else max_iter
        u = w.copy()
        for _ in range(max_iter):
            nxt = w + A @ u
            diff = float(np.max(np.abs(nxt - u)))
            u = nxt
            if diff <= tol * (1.0 + float(np.max(np.abs(u)))):
                break
        else:
            raise ConvergenceError("Volterra fixed-point inversion did not converge", diff)
    else:
        raise ValueError(f"unknown method {method!r}")
    resid = np.max(np.abs(u - A @ u - w)) if n else 0.0
    if resid > max(tol, 1e-10) * (1.0 + np.max(np.abs(w))):
        raise ConvergenceError("Volterra inversion left a residual", float(resid))
    return u[:n], u[n:]
