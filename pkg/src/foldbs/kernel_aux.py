"""Kernels (p, q, r) of the second transformation.

The second transformation removes the trace term g left over by the first one:

    omega_2(x) = w_2(x) - int_0^x [q(x,y) w_1(y) + p(x-y) w_2(y)] dy - int_x^1 r(x,y) w_1(y) dy.

q lives on the lower triangle 0 <= y <= x <= 1, r on the upper one x <= y <= 1, and
both solve eps2 d_xx - eps1 d_yy = (c2 - c1) plus, for q, the forcing g(y) p(x-y),
with p(x) = q(x, 0) / a. They are coupled across y = x by continuity and the jump
d_y q - d_y r = g / (eps2 - eps1).

In Riemann invariants (alpha = sqrt(eps2), beta = sqrt(eps1), slope c = beta/alpha > 1)

    y = 0   :  kh_q = 0                          (absorbing)
    y = 1   :  kc_r = -kh_r
    x = 0   :  kc_r = kh_r = 0
    y = x   :  kc_q = kc_r - g/(sqrt(eps1) + sqrt(eps2)),  kh_r = kh_q - g/(sqrt(eps1) - sqrt(eps2)).

The value kh_r takes next to the corner is carried along y = c x with a jump J
against the zero data from x = 0, reflects at y = 1 and crosses into q along
y + c x = 2. The solver marches the continuous parts kh_r - J 1{y < c x} and
kc - J 1{y + c x < 2} and adds the jumps back analytically.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .core import FoldedParams, GridMismatchError, TriGrid
from .kernel_ctrl import DEFAULT_MAX_ITER, DEFAULT_TOL, ConvergenceError, _trace_interp, lagrange_interp


@dataclass(frozen=True)
class QRKernels:
    q: TriGrid
    r: TriGrid
    p: np.ndarray
    qh: TriGrid
    qc: TriGrid
    rh: TriGrid
    rc: TriGrid
    jump: float = 0.0
    iterations: int = 0
    residual: float = 0.0

    @property
    def n(self) -> int:
        return self.q.n


def _measure(lo: float, hi: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Length of [lo, hi] intersected with each interval (a_k, b_k)."""
    return np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)


def _half_step(d: np.ndarray) -> np.ndarray:
    """Heaviside of ``d`` with value 1/2 on the line itself."""
    return np.where(np.abs(d) < 1e-12, 0.5, (d > 0).astype(float))


def solve_qr(g: np.ndarray, fp: FoldedParams, c1: float, c2: float, tri_n: int | None = None,
             tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> QRKernels:
    """Solve the (p, q, r) system forced by the trace ``g`` sampled on the kernel grid."""
    g = np.asarray(g, dtype=float)
    n = len(g) if tri_n is None else tri_n
    if g.shape != (n,):
        raise GridMismatchError(f"g has {g.size} samples, kernel grid has {n}")
    if not (c1 > 0 and c2 > 0):
        raise ValueError("target rates must be positive")
    if n < 3:
        raise ValueError("tri_n must be at least 3")
    zero = lambda: np.zeros((n, n))
    if not np.any(g):
        Z = lambda o: TriGrid(n, zero(), o)
        return QRKernels(Z("lower"), Z("upper"), np.zeros(n), Z("lower"), Z("lower"), Z("upper"), Z("upper"))
    if fp.eps1 <= fp.eps2:
        raise ValueError("the interface jump needs eps1 > eps2")

    h = 1.0 / (n - 1)
    x = np.linspace(0.0, 1.0, n)
    s1, s2, a = fp.s1, fp.s2, fp.a
    al, be = s2, s1
    c = be / al
    dc = c2 - c1
    tp = 1.0 / (s1 + s2)  # diagonal shift of kc
    tm = 1.0 / (s1 - s2)  # diagonal shift of kh
    J = -g[0] * tm

    # continuous parts of the invariants; q arrays are lower, r arrays upper
    Pq, Mq, Pr, Mr = zero(), zero(), zero(), zero()
    Fq, Fr = zero(), zero()
    Q, R = zero(), zero()
    p = np.zeros(n)

    # column x = 0: r vanishes with its derivatives, corner gets its diagonal data
    Pr[0, :] = -J
    Mr[0, :] = 0.0
    Mq[0, 0] = 0.0
    Pq[0, 0] = Pr[0, 0] - g[0] * tp

    def src_q(i, qcol):
        # (c2 - c1) q + g(y) p(x - y) with p(x - y) = q(x_{i-j}, 0) / a
        m = len(qcol)
        pv = p[i - np.arange(m)].copy()
        pv[0] = qcol[0] / a
        return dc * qcol + g[:m] * pv

    worst, iters_max = 0.0, 0
    for i in range(n - 1):
        i1 = i + 1
        x0, x1 = x[i], x[i1]
        yq = x[: i1 + 1]
        yr = x[i1:]
        qn = np.empty(i1 + 1)
        qn[:i1] = Q[i, :i1]
        qn[i1] = R[i, i1]
        rn = R[i, i1:].copy()
        fq_new = src_q(i1, qn)
        fr_new = dc * rn
        Pq_n, Mq_n = Pq[i, : i1 + 1].copy(), Mq[i, : i1 + 1].copy()
        Pq_n[i1], Mq_n[i1] = Pq[i, i], Mq[i, i]
        Pr_n, Mr_n = Pr[i, i1:].copy(), Mr[i, i1:].copy()
        colq = slice(0, i + 1)
        colr = slice(i, n)
        converged = False
        for it in range(max_iter):
            change = 0.0
            # kh_q: feet below y = 0 start from the absorbing boundary
            ystar = yq - c * h
            inside = ystar >= -1e-12
            m_new = np.empty(i1 + 1)
            pts = np.clip(ystar[inside], 0.0, None)
            m_new[inside] = lagrange_interp(Mq[i, colq], h, pts) + h / (2 * al) * (
                lagrange_interp(Fq[i, colq], h, pts) + fq_new[inside]
            )
            below = ~inside
            xc = x1 - yq[below] / c
            th = (xc - x0) / h
            fb = _trace_interp(Fq[i - 1, 0] if i else None, Fq[i, 0], fq_new[0], th)
            m_new[below] = (x1 - xc) / (2 * al) * (fb + fq_new[below])
            m_new[0] = 0.0
            change = max(change, float(np.max(np.abs(m_new - Mq_n))))
            Mq_n = m_new

            # kh_r: feet crossing y = x take the transmitted value
            mr_diag1 = Mq_n[i1] - g[i1] * tm - J
            ystar = yr - c * h
            inside = ystar >= x0 - 1e-12
            m_new = np.empty(n - i1)
            if np.any(inside):
                pts = np.clip(ystar[inside], x0, None) - x0
                m_new[inside] = lagrange_interp(Mr[i, colr], h, pts) + h / (2 * al) * (
                    lagrange_interp(Fr[i, colr], h, pts) + fr_new[inside]
                )
            cross = ~inside
            if np.any(cross):
                xc = (c * x1 - yr[cross]) / (c - 1.0)
                th = (xc - x0) / h
                md = _trace_interp(Mr[i - 1, i - 1] if i else None, Mr[i, i], mr_diag1, th)
                fd = _trace_interp(Fr[i - 1, i - 1] if i else None, Fr[i, i], fr_new[0], th)
                m_new[cross] = md + (x1 - xc) / (2 * al) * (fd + fr_new[cross])
            m_new[0] = mr_diag1
            change = max(change, float(np.max(np.abs(m_new - Mr_n))))
            Mr_n = m_new

            # kc_r: feet above y = 1 take the reflected value
            ystar = yr + c * h
            inside = ystar <= 1.0 + 1e-12
            p_new = np.empty(n - i1)
            if np.any(inside):
                pts = np.clip(ystar[inside], None, 1.0) - x0
                p_new[inside] = lagrange_interp(Pr[i, colr], h, pts) + h / (2 * al) * (
                    lagrange_interp(Fr[i, colr], h, pts) + fr_new[inside]
                )
            cross = ~inside
            if np.any(cross):
                xc = x1 - (1.0 - yr[cross]) / c
                th = (xc - x0) / h
                top = lambda k: -Mr[k, n - 1] - J
                pb = _trace_interp(top(i - 1) if i else None, top(i), -Mr_n[-1] - J, th)
                fb = _trace_interp(Fr[i - 1, n - 1] if i else None, Fr[i, n - 1], fr_new[-1], th)
                p_new[cross] = pb + (x1 - xc) / (2 * al) * (fb + fr_new[cross])
            change = max(change, float(np.max(np.abs(p_new - Pr_n))))
            Pr_n = p_new

            # kc_q: feet crossing y = x take the transmitted value
            pq_diag1 = Pr_n[0] - g[i1] * tp
            ystar = yq + c * h
            inside = ystar <= x0 + 1e-12
            p_new = np.empty(i1 + 1)
            if np.any(inside):
                pts = ystar[inside]
                p_new[inside] = lagrange_interp(Pq[i, colq], h, pts) + h / (2 * al) * (
                    lagrange_interp(Fq[i, colq], h, pts) + fq_new[inside]
                )
            cross = ~inside
            xc = (yq[cross] + c * x1) / (1.0 + c)
            th = (xc - x0) / h
            pd = _trace_interp(Pq[i - 1, i - 1] if i else None, Pq[i, i], pq_diag1, th)
            fd = _trace_interp(Fq[i - 1, i - 1] if i else None, Fq[i, i], fq_new[i1], th)
            p_new[cross] = pd + (x1 - xc) / (2 * al) * (fd + fq_new[cross])
            p_new[i1] = pq_diag1
            change = max(change, float(np.max(np.abs(p_new - Pq_n))))
            Pq_n = p_new

            # rebuild r and q along rows: trapezoid for the continuous part, exact for jumps
            rx0 = (Pr[i, i1:] + Mr[i, i1:]) / (2 * al)
            rx1 = (Pr_n + Mr_n) / (2 * al)
            jm = _measure(x0, x1, a * yr, np.full_like(yr, np.inf))
            jp = _measure(x0, x1, np.full_like(yr, -np.inf), a * (2.0 - yr))
            rn_new = R[i, i1:] + 0.5 * h * (rx0 + rx1) + J * (jm + jp) / (2 * al)
            qx0 = (Pq[i, :i1] + Mq[i, :i1]) / (2 * al)
            qx1 = (Pq_n[:i1] + Mq_n[:i1]) / (2 * al)
            jp = _measure(x0, x1, np.full(i1, -np.inf), a * (2.0 - yq[:i1]))
            qn_new = np.empty(i1 + 1)
            qn_new[:i1] = Q[i, :i1] + 0.5 * h * (qx0 + qx1) + J * jp / (2 * al)
            qn_new[i1] = rn_new[0]
            change = max(change, float(np.max(np.abs(qn_new - qn))), float(np.max(np.abs(rn_new - rn))))
            qn, rn = qn_new, rn_new
            fq_new = src_q(i1, qn)
            fr_new = dc * rn
            scale = 1.0 + max(np.max(np.abs(Pq_n)), np.max(np.abs(Mq_n)), np.max(np.abs(Pr_n)), np.max(np.abs(Mr_n)))
            if change < tol * scale:
                converged = True
                iters_max = max(iters_max, it + 1)
                worst = max(worst, change)
                break
        if not converged:
            raise ConvergenceError(f"column {i1} of the (q, r) march did not converge", change)
        Pq[i1, : i1 + 1], Mq[i1, : i1 + 1] = Pq_n, Mq_n
        Pr[i1, i1:], Mr[i1, i1:] = Pr_n, Mr_n
        Q[i1, : i1 + 1], R[i1, i1:] = qn, rn
        Fq[i1, : i1 + 1], Fr[i1, i1:] = fq_new, fr_new
        p[i1] = qn[0] / a

    # reassemble the full invariants from their continuous parts
    X, Y = np.meshgrid(x, x, indexing="ij")
    low = np.tril(np.ones((n, n), dtype=bool))
    up = np.triu(np.ones((n, n), dtype=bool))
    hp = J * _half_step(2.0 - Y - c * X)
    hm = J * _half_step(c * X - Y)
    hm[0, 0] = J
    Pq_full = np.where(low, Pq + hp, 0.0)
    Pr_full = np.where(up, Pr + hp, 0.0)
    Mr_full = np.where(up, Mr + hm, 0.0)
    T = TriGrid
    return QRKernels(
        q=T(n, Q, "lower"),
        r=T(n, R, "upper"),
        p=p,
        qh=T(n, np.where(low, Mq, 0.0), "lower"),
        qc=T(n, Pq_full, "lower"),
        rh=T(n, Mr_full, "upper"),
        rc=T(n, Pr_full, "upper"),
        jump=J,
        iterations=iters_max,
        residual=worst,
    )


def _second_operators(kernels: QRKernels):
    """Matrices A, B with (A w1 + B w2)(x_i) equal to the integrals of the second map."""
    n = kernels.n
    h = 1.0 / (n - 1)
    i, j = np.indices((n, n))
    wl = np.where(j <= i, h, 0.0)
    wl[i == j] = 0.5 * h
    wl[:, 0] = np.where(np.arange(n) > 0, 0.5 * h, 0.0)
    wu = np.where(j >= i, h, 0.0)
    wu[i == j] = 0.5 * h
    wu[:, -1] = np.where(np.arange(n) < n - 1, 0.5 * h, 0.0)
    A = wl * kernels.q.values + wu * kernels.r.values
    pd = np.where(j <= i, kernels.p[np.clip(i - j, 0, n - 1)], 0.0)
    B = wl * pd
    return A, B


def _pair(kernels: QRKernels, F):
    f1, f2 = (np.asarray(v, dtype=float) for v in F)
    if f1.shape != (kernels.n,) or f2.shape != (kernels.n,):
        raise GridMismatchError(f"fields of length {f1.size}, {f2.size} on a kernel grid of {kernels.n}")
    return f1, f2


def apply_second_transform(kernels: QRKernels, W):
    """(w1, w2) -> (omega1, omega2) with omega1 = w1 and the p, q, r integrals removed from w2."""
    w1, w2 = _pair(kernels, W)
    A, B = _second_operators(kernels)
    return w1.copy(), w2 - A @ w1 - B @ w2


def invert_second_transform(kernels: QRKernels, Omega, tol: float = 1e-12, method: str = "direct",
                            max_iter: int = DEFAULT_MAX_ITER):
    """Inverse of :func:`apply_second_transform`.

    Since w1 = omega1, the r part only moves known data to the right-hand side and
    w2 solves a lower-triangular system. ``fixed_point`` instead iterates the full
    forward map, W <- W + (Omega - T W).
    """
    o1, o2 = _pair(kernels, Omega)
    A, B = _second_operators(kernels)
    if method == "direct":
        w2 = solve_triangular(np.eye(kernels.n) - B, o2 + A @ o1, lower=True)
        w1 = o1.copy()
    elif method == "fixed_point":
        w1, w2 = o1.copy(), o2.copy()
        for _ in range(max_iter):
            t1, t2 = w1, w2 - A @ w1 - B @ w2
            d1, d2 = o1 - t1, o2 - t2
            w1, w2 = w1 + d1, w2 + d2
            if max(np.max(np.abs(d1)), np.max(np.abs(d2))) <= tol * (1.0 + np.max(np.abs(w2))):
                break
        else:
            raise ConvergenceError("second-transform inversion did not converge",
                                   float(max(np.max(np.abs(d1)), np.max(np.abs(d2)))))
    else:
        raise ValueError(f"unknown method {method!r}")
    r1, r2 = apply_second_transform(kernels, (w1, w2))
    resid = float(max(np.max(np.abs(r1 - o1)), np.max(np.abs(r2 - o2))))
    if resid > max(tol, 1e-10) * (1.0 + np.max(np.abs(o2)) + np.max(np.abs(o1))):
        raise ConvergenceError("second-transform inversion left a residual", resid)
    return w1, w2
