"""Embedded second-order cone programming solver.

Dense Mehrotra predictor-corrector interior-point method with
Nesterov-Todd scaling for problems of the form

    minimize    c' x
    subject to  A x = b
                G x + s = h,    s in K

where K is the product of a nonnegative orthant and a sequence of
second-order cones, stacked in that order.  The solver is
self-contained and fully deterministic so that guidance segments can be
solved onboard-style with no third-party optimizer in the loop.

It targets the small, well-scaled cone programs produced by the segment
tracker (a few hundred variables, cones of dimension <= 4); all linear
algebra is dense.  Infeasible problems are not certified: they surface
as ``max_iterations`` or ``numerical_trouble`` rather than a certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, qr, solve_triangular

__all__ = ["ConeDims", "SocpSolution", "solve_socp"]

_STEP_DAMPING = 0.99
_MIN_STEP = 1e-10


@dataclass(frozen=True)
class ConeDims:
    """Sizes of the cone blocks in ``s``, orthant first, then SOCs in order."""

    nonneg: int = 0
    soc: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.nonneg < 0:
            raise ValueError("nonneg dimension must be >= 0")
        if any(d < 2 for d in self.soc):
            raise ValueError("second-order cones must have dimension >= 2")

    @property
    def total(self) -> int:
        return self.nonneg + sum(self.soc)

    @property
    def degree(self) -> int:
        """Barrier degree: one per orthant row, one per second-order cone."""
        return self.nonneg + len(self.soc)


@dataclass
class SocpSolution:
    status: str  # "optimal" | "max_iterations" | "numerical_trouble"
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    objective: float
    gap: float
    primal_residual: float
    dual_residual: float
    iterations: int


def _soc_slices(dims: ConeDims) -> list[slice]:
    out = []
    off = dims.nonneg
    for d in dims.soc:
        out.append(slice(off, off + d))
        off += d
    return out


def _cone_identity(dims: ConeDims) -> np.ndarray:
    e = np.zeros(dims.total)
    e[: dims.nonneg] = 1.0
    for sl in _soc_slices(dims):
        e[sl.start] = 1.0
    return e


def _jordan_product(u: np.ndarray, v: np.ndarray, dims: ConeDims) -> np.ndarray:
    out = np.empty_like(u)
    nl = dims.nonneg
    out[:nl] = u[:nl] * v[:nl]
    for sl in _soc_slices(dims):
        u0, u1 = u[sl.start], u[sl.start + 1 : sl.stop]
        v0, v1 = v[sl.start], v[sl.start + 1 : sl.stop]
        out[sl.start] = u0 * v0 + u1 @ v1
        out[sl.start + 1 : sl.stop] = u0 * v1 + v0 * u1
    return out


def _jordan_solve(u: np.ndarray, d: np.ndarray, dims: ConeDims) -> np.ndarray:
    """Solve u o x = d for x, where o is the Jordan product."""
    out = np.empty_like(d)
    nl = dims.nonneg
    out[:nl] = d[:nl] / u[:nl]
    for sl in _soc_slices(dims):
        u0, u1 = u[sl.start], u[sl.start + 1 : sl.stop]
        d0, d1 = d[sl.start], d[sl.start + 1 : sl.stop]
        det = u0 * u0 - u1 @ u1
        x0 = (u0 * d0 - u1 @ d1) / det
        out[sl.start] = x0
        out[sl.start + 1 : sl.stop] = (d1 - x0 * u1) / u0
    return out


def _cone_margin(u: np.ndarray, dims: ConeDims) -> float:
    """Smallest slack to the cone boundary; positive iff strictly interior."""
    m = math.inf
    if dims.nonneg:
        m = float(np.min(u[: dims.nonneg]))
    for sl in _soc_slices(dims):
        m = min(m, float(u[sl.start] - np.linalg.norm(u[sl.start + 1 : sl.stop])))
    return m


def _max_step(u: np.ndarray, du: np.ndarray, dims: ConeDims) -> float:
    """Largest alpha with u + t*du in the cone for all t in [0, alpha)."""
    alpha = math.inf
    nl = dims.nonneg
    if nl:
        neg = du[:nl] < 0.0
        if np.any(neg):
            alpha = float(np.min(-u[:nl][neg] / du[:nl][neg]))
    for sl in _soc_slices(dims):
        u0, u1 = u[sl.start], u[sl.start + 1 : sl.stop]
        d0, d1 = du[sl.start], du[sl.start + 1 : sl.stop]
        # q(t) = (u0 + t d0)^2 - ||u1 + t d1||^2 stays positive until the
        # smallest positive root; q(0) > 0 for a strictly interior point.
        a = d0 * d0 - d1 @ d1
        b = u0 * d0 - u1 @ d1
        c = u0 * u0 - u1 @ u1
        if a == 0.0:
            if b < 0.0:
                alpha = min(alpha, -c / (2.0 * b))
            continue
        disc = b * b - a * c
        if disc < 0.0:
            continue
        sq = math.sqrt(disc)
        roots = ((-b - sq) / a, (-b + sq) / a)
        pos = [r for r in roots if r > 0.0]
        if pos:
            alpha = min(alpha, min(pos))
    return alpha


class _NTScaling:
    """Nesterov-Todd scaling point for the product cone.

    Provides W, its inverse, and the scaled variable lambda = W z = W^-1 s
    as block operations (diagonal on the orthant, dense on each SOC).
    """

    def __init__(self, s: np.ndarray, z: np.ndarray, dims: ConeDims):
        self.dims = dims
        nl = dims.nonneg
        self.w_lin = np.sqrt(s[:nl] / z[:nl])
        self.lmbda = np.empty(dims.total)
        self.lmbda[:nl] = np.sqrt(s[:nl] * z[:nl])
        self.soc_w: list[np.ndarray] = []
        self.soc_winv: list[np.ndarray] = []
        for sl in _soc_slices(dims):
            ss, zz = s[sl], z[sl]
            res_s = ss[0] * ss[0] - ss[1:] @ ss[1:]
            res_z = zz[0] * zz[0] - zz[1:] @ zz[1:]
            if res_s <= 0.0 or res_z <= 0.0:
                raise LinAlgError("scaling point left the cone interior")
            a, b = math.sqrt(res_s), math.sqrt(res_z)
            sbar, zbar = ss / a, zz / b
            gamma = math.sqrt((1.0 + sbar @ zbar) / 2.0)
            wbar = np.concatenate(
                ([(sbar[0] + zbar[0]) / (2.0 * gamma)], (sbar[1:] - zbar[1:]) / (2.0 * gamma))
            )
            # W must satisfy W^2 z = s, i.e. W^2 equal to the quadratic
            # representation of wbar; take v as the Jordan square root of
            # wbar (unit hyperbolic), so that H = 2 v v' - J squares to it.
            v = wbar.copy()
            v[0] += 1.0
            v /= math.sqrt(2.0 * (wbar[0] + 1.0))
            jmat = np.diag(np.concatenate(([1.0], -np.ones(sl.stop - sl.start - 1))))
            hmat = 2.0 * np.outer(v, v) - jmat
            eta = math.sqrt(a / b)
            self.soc_w.append(eta * hmat)
            # H is J-orthogonal (H J H = J), so H^-1 = J H J.
            self.soc_winv.append((jmat @ hmat @ jmat) / eta)
            self.lmbda[sl] = self.soc_w[-1] @ zz

    def apply_w(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        nl = self.dims.nonneg
        out[:nl] = self.w_lin * v[:nl]
        for mat, sl in zip(self.soc_w, _soc_slices(self.dims)):
            out[sl] = mat @ v[sl]
        return out

    def apply_winv(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        nl = self.dims.nonneg
        out[:nl] = v[:nl] / self.w_lin
        for mat, sl in zip(self.soc_winv, _soc_slices(self.dims)):
            out[sl] = mat @ v[sl]
        return out

    def apply_winv_rows(self, mat: np.ndarray) -> np.ndarray:
        """W^-1 applied to each column block of a (m, n) matrix."""
        out = np.empty_like(mat)
        nl = self.dims.nonneg
        out[:nl] = mat[:nl] / self.w_lin[:, None]
        for winv, sl in zip(self.soc_winv, _soc_slices(self.dims)):
            out[sl] = winv @ mat[sl]
        return out


class _KKTSolver:
    """Factorized reduced KKT system for one scaling point.

    Eliminates (ds, dz) to reach the SPD system
    G' W^-2 G dx + A' dy = rhs, A dx = by, solved with two Cholesky
    factorizations plus one pass of iterative refinement.
    """

    def __init__(self, G: np.ndarray, A: np.ndarray, scaling: _NTScaling):
        self.G = G
        self.A = A
        self.scaling = scaling
        self.wig = scaling.apply_winv_rows(G)
        # QR of W^-1 G keeps the solve conditioned like kappa(W^-1 G) rather
        # than its square, which matters close to the cone boundary.
        self.qmat, self.rmat = qr(self.wig, mode="economic", check_finite=False)
        rdiag = np.abs(np.diag(self.rmat))
        if np.min(rdiag) <= 1e-14 * np.max(rdiag):
            raise LinAlgError("scaled cone matrix lost column rank")
        self.p = A.shape[0]
        if self.p:
            # Schur complement A M^-1 A' = V' V with V = R^-T A'.
            v = solve_triangular(
                self.rmat, A.T, trans="T", lower=False, check_finite=False
            )
            self.s_factor = cho_factor(v.T @ v, lower=True, check_finite=False)

    def _m_solve(self, v: np.ndarray) -> np.ndarray:
        u = solve_triangular(self.rmat, v, trans="T", lower=False, check_finite=False)
        return solve_triangular(self.rmat, u, lower=False, check_finite=False)

    def _solve_once(
        self, bx: np.ndarray, by: np.ndarray, bz: np.ndarray, d: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        sc = self.scaling
        t1 = bz + sc.apply_w(_jordan_solve(sc.lmbda, d, sc.dims))
        rx = bx + self.wig.T @ sc.apply_winv(t1)
        if self.p:
            u = self._m_solve(rx)
            dy = cho_solve(self.s_factor, self.A @ u - by, check_finite=False)
            dx = self._m_solve(rx - self.A.T @ dy)
        else:
            dy = np.zeros(0)
            dx = self._m_solve(rx)
        dz = sc.apply_winv(sc.apply_winv(self.G @ dx - t1))
        ds = bz - self.G @ dx
        return dx, dy, dz, ds

    def solve(
        self, bx: np.ndarray, by: np.ndarray, bz: np.ndarray, d: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        sc = self.scaling
        dx, dy, dz, ds = self._solve_once(bx, by, bz, d)
        # One pass of iterative refinement on the full (unreduced) system.
        r1 = bx - (self.A.T @ dy if self.p else 0.0) - self.G.T @ dz
        r2 = by - self.A @ dx if self.p else by
        r4 = -d - _jordan_product(sc.lmbda, sc.apply_w(dz) + sc.apply_winv(ds), sc.dims)
        cx, cy, cz, cs = self._solve_once(r1, r2, np.zeros_like(bz), -r4)
        return dx + cx, dy + cy, dz + cz, ds + cs


def solve_socp(
    c: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    dims: ConeDims,
    A: np.ndarray | None = None,
    b: np.ndarray | None = None,
    *,
    feastol: float = 1e-8,
    abstol: float = 1e-8,
    reltol: float = 1e-8,
    max_iterations: int = 200,
) -> SocpSolution:
    """Solve a cone program with a primal-dual interior-point method.

    ``G`` must have full column rank (every variable appears in some cone
    row), which holds for the tracker's segment problems by construction.
    """
    c = np.ascontiguousarray(c, dtype=float)
    G = np.ascontiguousarray(G, dtype=float)
    h = np.ascontiguousarray(h, dtype=float)
    n = c.shape[0]
    m = dims.total
    if G.shape != (m, n):
        raise ValueError(f"G must be ({m}, {n}), got {G.shape}")
    if h.shape != (m,):
        raise ValueError("h length must match cone dimensions")
    if A is None:
        A = np.zeros((0, n))
        b = np.zeros(0)
    else:
        A = np.ascontiguousarray(A, dtype=float)
        b = np.ascontiguousarray(b, dtype=float)
        if A.shape[1] != n or b.shape != (A.shape[0],):
            raise ValueError("A/b shapes inconsistent with c")

    e = _cone_identity(dims)
    deg = dims.degree
    x = np.zeros(n)
    y = np.zeros(A.shape[0])
    s = e.copy()
    z = e.copy()

    norm_b = max(1.0, float(np.linalg.norm(b)))
    norm_h = max(1.0, float(np.linalg.norm(h)))
    norm_c = max(1.0, float(np.linalg.norm(c)))

    status = "max_iterations"
    pres = dres = gap = math.inf
    it = 0
    for it in range(1, max_iterations + 1):
        r_dual = c + (A.T @ y if A.shape[0] else 0.0) + G.T @ z
        r_eq = A @ x - b
        r_cone = G @ x + s - h
        gap = float(s @ z)
        mu = gap / deg
        pres = max(
            float(np.linalg.norm(r_eq)) / norm_b,
            float(np.linalg.norm(r_cone)) / norm_h,
        )
        dres = float(np.linalg.norm(r_dual)) / norm_c
        obj = float(c @ x)
        relgap = gap / max(1.0, abs(obj))
        if pres <= feastol and dres <= feastol and (gap <= abstol or relgap <= reltol):
            status = "optimal"
            break
        if not (math.isfinite(pres) and math.isfinite(dres) and math.isfinite(gap)):
            status = "numerical_trouble"
            break

        try:
            scaling = _NTScaling(s, z, dims)
            kkt = _KKTSolver(G, A, scaling)
        except LinAlgError:
            status = "numerical_trouble"
            break

        lam = scaling.lmbda
        bx, by, bz = -r_dual, -r_eq, -r_cone

        # Predictor (affine) direction.
        d_aff = _jordan_product(lam, lam, dims)
        dx_a, dy_a, dz_a, ds_a = kkt.solve(bx, by, bz, d_aff)
        alpha_aff = min(
            1.0, _max_step(s, ds_a, dims), _max_step(z, dz_a, dims)
        )
        gap_aff = float((s + alpha_aff * ds_a) @ (z + alpha_aff * dz_a))
        sigma = min(1.0, max(0.0, gap_aff / gap)) ** 3

        # Corrector (combined) direction.
        corr = _jordan_product(
            scaling.apply_winv(ds_a), scaling.apply_w(dz_a), dims
        )
        d_comb = d_aff + corr - sigma * mu * e
        dx, dy, dz, ds = kkt.solve(bx, by, bz, d_comb)

        alpha = min(1.0, _STEP_DAMPING * min(_max_step(s, ds, dims), _max_step(z, dz, dims)))
        if alpha < _MIN_STEP:
            status = "numerical_trouble"
            break
        x += alpha * dx
        y += alpha * dy
        s += alpha * ds
        z += alpha * dz
        if _cone_margin(s, dims) <= 0.0 or _cone_margin(z, dims) <= 0.0:
            status = "numerical_trouble"
            break

    return SocpSolution(
        status=status,
        x=x,
        y=y,
        z=z,
        s=s,
        objective=float(c @ x),
        gap=gap,
        primal_residual=pres,
        dual_residual=dres,
        iterations=it,
    )
