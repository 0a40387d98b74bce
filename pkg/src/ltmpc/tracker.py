"""Per-segment convex tracking: Δv′ metric, initial guess, problem build, solve.

The tracking margin Δv′ is a closed-form estimate of the impulse needed to
move between two near-circular element sets, obtained by integrating the
maximum-rate Gauss variational equations for semi-major axis and the node
elements.  It is both the terminal cost of each segment's cone program and
the recomputation trigger of the guidance loop.

A segment is one window of the reference grid.  Tracking it takes three
steps, mirroring the guidance loop's structure:

1. ``initial_guess_segment`` flies the reference thrust profile from the
   current (possibly off-reference) state, re-deriving the eclipse gate from
   the actual geometry, which yields a dynamically consistent guess.
2. ``build_segment_problem`` linearizes the step dynamics about that guess
   (finite-difference transition matrices in generalized equinoctial
   elements) and freezes the terminal Δv′ cone's coefficients at the guess
   end state.
3. ``solve_segment`` condenses the states out of the problem and solves the
   resulting second-order cone program with the embedded interior-point
   solver.  A single convexification pass is used — on failure the caller
   regenerates the reference instead of re-iterating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from . import rk
from .constants import G0_MS2, MU_EARTH_KM3_S2, R_EARTH_KM
from .coords import (
    CartesianState,
    EquinoctialElements,
    GEqOEState,
    cart_to_geqoe,
    geqoe_to_cart,
    mean_argument_of_latitude,
    mean_mee_lam_from_cart,
)
from .dynamics import (
    ForceModel,
    SpacecraftConfig,
    compute_stm_chain,
    duty_gate,
    eclipse_center_arg_lat,
    natural_accel_scalar,
    sun_unit_vector,
)
from .socp import ConeDims, solve_socp

if TYPE_CHECKING:  # pragma: no cover - import cycle guard (reference uses Δv′)
    from .reference import ReferenceTrajectory

__all__ = [
    "DEFAULT_DVP_WEIGHT",
    "SegmentConfig",
    "SegmentGuess",
    "SegmentProblem",
    "SegmentSolution",
    "delta_v_prime",
    "initial_guess_segment",
    "build_segment_problem",
    "solve_segment",
]

# Canonical units for the cone program: length in Earth radii, time in the
# circular period scale sqrt(R^3/mu).  Everything the solver sees is O(1)-ish.
_TU_S = math.sqrt(R_EARTH_KM**3 / MU_EARTH_KM3_S2)
_VU_MS = R_EARTH_KM / _TU_S * 1e3  # velocity unit in m/s
_AU_KMS2 = R_EARTH_KM / _TU_S**2  # acceleration unit in km/s^2

#: Default objective weight on the terminal Δv′ slack.  Δv′ prices element
#: gaps at the cheapest (impulsive, optimally-phased) exchange rate, so a
#: unit weight values a deferred correction exactly as much as the thrust it
#: saves and the optimum degenerates to coasting; weighting the terminal
#: term above the worst spread inefficiency of continuous thrust (π/2 for
#: node-element corrections) keeps the solution tracking the reference.
DEFAULT_DVP_WEIGHT = 2.0

#: Fractional margin kept between the guess acceleration and the thrust bound
#: so the guess is strictly cone-feasible.
_BOUND_MARGIN = 1.0 - 1e-12

#: Finite-difference scales for the terminal Δv′ map (same component
#: structure as the dynamics STM: nu is relative, e-components 1e-2).
_DVP_FD_UNITS = np.array([np.nan, 1e-2, 1e-2, 1.0, 1.0, 1.0])


def delta_v_prime(
    current: EquinoctialElements, target: EquinoctialElements
) -> tuple[np.ndarray, float]:
    """Impulse estimate [Δv_a, Δv_h, Δv_k] (m/s) from ``current`` to ``target``.

    Rate coefficients are evaluated at ``current``; the result is linear in
    the element gaps (Δa, Δh, Δk).  Both inputs should be mean elements of
    near-circular orbits.
    """
    p = current.p_km
    f, g = current.f, current.g
    e2 = f * f + g * g
    a = p / (1.0 - e2)
    e = math.sqrt(e2)
    s2 = 1.0 + current.h**2 + current.k**2

    a_t = target.p_km / (1.0 - target.f**2 - target.g**2)
    da = a_t - a
    dh = target.h - current.h
    dk = target.k - current.k

    dv_a = da / (2.0 * a) * math.sqrt(MU_EARTH_KM3_S2 / a) * math.sqrt((1.0 - e) / (1.0 + e))
    root_mu_p = math.sqrt(MU_EARTH_KM3_S2 / p)
    dv_h = 2.0 * dh * root_mu_p * (math.sqrt(max(0.0, 1.0 - g * g)) + f) / s2
    dv_k = 2.0 * dk * root_mu_p * (math.sqrt(max(0.0, 1.0 - f * f)) + f) / s2

    vec = np.array([dv_a, dv_h, dv_k]) * 1000.0
    return vec, float(np.linalg.norm(vec))


# ── segment domain types ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class SegmentConfig:
    """Window geometry of one tracking segment on the reference grid."""

    n_orbits: int = 5
    nodes_per_orbit: int = 36
    n_run: int = 0  # start index into the reference node grid

    def __post_init__(self) -> None:
        if self.nodes_per_orbit < 8:
            raise ValueError(
                f"nodes_per_orbit must be >= 8, got {self.nodes_per_orbit}"
            )
        if self.n_orbits < 1:
            raise ValueError(f"n_orbits must be >= 1, got {self.n_orbits}")
        if self.n_run < 0:
            raise ValueError(f"n_run must be >= 0, got {self.n_run}")

    @property
    def dn(self) -> int:
        """Number of node intervals spanned by one segment."""
        return self.n_orbits * self.nodes_per_orbit

    def advanced(self) -> "SegmentConfig":
        """The next segment's configuration (start index moved by one window)."""
        return replace(self, n_run=self.n_run + self.dn)


@dataclass(frozen=True)
class SegmentGuess:
    """Reference profile flown from the current state over one segment.

    Node arrays have ``k+1`` rows for a segment of ``k`` intervals; the last
    acceleration row is zero (no thrust is allocated for the final node).
    """

    t_s: np.ndarray  # (k+1,) node times on the reference clock
    cart: np.ndarray  # (k+1, 6) position [km] and velocity [km/s]
    geqoe: np.ndarray  # (k+1, 6) generalized equinoctial states
    accels_rtn_kms2: np.ndarray  # (k+1, 3) held RTN accelerations
    masses_kg: np.ndarray  # (k+1,)
    eta: np.ndarray  # (k+1,) eclipse gate flags (1 = thrust allowed)

    def __post_init__(self) -> None:
        n = self.t_s.shape[0]
        shapes = {
            "t_s": (n,),
            "cart": (n, 6),
            "geqoe": (n, 6),
            "accels_rtn_kms2": (n, 3),
            "masses_kg": (n,),
            "eta": (n,),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValueError(f"{name} must have shape {want}, got {got}")
        if n == 0:
            raise ValueError("guess needs at least one node")
        if n > 1 and not np.all(np.diff(self.t_s) > 0.0):
            raise ValueError("node times must be strictly increasing")
        if np.any(self.masses_kg <= 0.0):
            raise ValueError("masses must stay positive")
        if np.any(self.accels_rtn_kms2[-1] != 0.0):
            raise ValueError("final node must carry zero acceleration")

    @property
    def n_nodes(self) -> int:
        return self.t_s.shape[0]

    @property
    def n_intervals(self) -> int:
        return self.t_s.shape[0] - 1

    def to_dict(self) -> dict:
        return {
            "t_s": self.t_s.tolist(),
            "cart": self.cart.tolist(),
            "geqoe": self.geqoe.tolist(),
            "accels_rtn_kms2": self.accels_rtn_kms2.tolist(),
            "masses_kg": self.masses_kg.tolist(),
            "eta": self.eta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentGuess":
        return cls(
            t_s=np.asarray(d["t_s"], dtype=float),
            cart=np.asarray(d["cart"], dtype=float),
            geqoe=np.asarray(d["geqoe"], dtype=float),
            accels_rtn_kms2=np.asarray(d["accels_rtn_kms2"], dtype=float),
            masses_kg=np.asarray(d["masses_kg"], dtype=float),
            eta=np.asarray(d["eta"], dtype=float),
        )


@dataclass(frozen=True)
class SegmentProblem:
    """Convexified tracking problem for one segment.

    The dynamics are the affine maps x(i+1) = A(i) x(i) + B(i) a(i) + c(i)
    anchored at the guess (c(i) makes the guess itself exactly feasible).
    The terminal cone's Δv′ components are affine in the end state:
    Δv′_vec = dvp_offset + dvp_jac · (x_end − guess end state).

    dvp_weight scales the terminal slack in the objective.  Δv′ prices the
    terminal gap at the cheapest impulsive rates, so thrust spread over a
    segment buys back at most its own cost in Δv′ and an equally-weighted
    sum lets the solver defer all tracking effort; a weight above the spread
    inefficiency (≈ π/2 for out-of-plane corrections) keeps the closed loop
    pinned to the reference.
    """

    guess: SegmentGuess
    stm_a: np.ndarray  # (k, 6, 6) state transition matrices
    stm_b: np.ndarray  # (k, 6, 3) control transition matrices
    x0_geqoe: np.ndarray  # (6,) segment initial state (= guess first node)
    target: EquinoctialElements  # reference elements at segment end
    bounds_kms2: np.ndarray  # (k,) per-node thrust acceleration bounds
    dt_s: np.ndarray  # (k,) node interval durations
    dvp_offset_ms: np.ndarray  # (3,) Δv′ components of the guess end state
    dvp_jac: np.ndarray  # (3, 6) Δv′ component sensitivities at the guess end
    dvp_weight: float = 1.0  # objective weight on the terminal slack

    def __post_init__(self) -> None:
        k = self.guess.n_intervals
        shapes = {
            "stm_a": (k, 6, 6),
            "stm_b": (k, 6, 3),
            "x0_geqoe": (6,),
            "bounds_kms2": (k,),
            "dt_s": (k,),
            "dvp_offset_ms": (3,),
            "dvp_jac": (3, 6),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValueError(f"{name} must have shape {want}, got {got}")
        if np.any(self.bounds_kms2 < 0.0):
            raise ValueError("bounds must be nonnegative")
        if np.any(self.dt_s <= 0.0):
            raise ValueError("node intervals must be positive")
        if not self.dvp_weight > 0.0:
            raise ValueError("terminal weight must be positive")

    @property
    def n_intervals(self) -> int:
        return self.guess.n_intervals

    @property
    def guess_objective_ms(self) -> float:
        """Objective value of the guess itself (thrust cost plus its Δv′)."""
        a_norm = np.linalg.norm(self.guess.accels_rtn_kms2[:-1], axis=1)
        return float(
            np.dot(a_norm, self.dt_s) * 1e3
            + self.dvp_weight * np.linalg.norm(self.dvp_offset_ms)
        )

    def to_dict(self) -> dict:
        return {
            "guess": self.guess.to_dict(),
            "stm_a": self.stm_a.tolist(),
            "stm_b": self.stm_b.tolist(),
            "x0_geqoe": self.x0_geqoe.tolist(),
            "target": {
                "p_km": self.target.p_km,
                "f": self.target.f,
                "g": self.target.g,
                "h": self.target.h,
                "k": self.target.k,
                "L_rad": self.target.L_rad,
            },
            "bounds_kms2": self.bounds_kms2.tolist(),
            "dt_s": self.dt_s.tolist(),
            "dvp_offset_ms": self.dvp_offset_ms.tolist(),
            "dvp_jac": self.dvp_jac.tolist(),
            "dvp_weight": self.dvp_weight,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentProblem":
        return cls(
            guess=SegmentGuess.from_dict(d["guess"]),
            stm_a=np.asarray(d["stm_a"], dtype=float),
            stm_b=np.asarray(d["stm_b"], dtype=float),
            x0_geqoe=np.asarray(d["x0_geqoe"], dtype=float),
            target=EquinoctialElements(**d["target"]),
            bounds_kms2=np.asarray(d["bounds_kms2"], dtype=float),
            dt_s=np.asarray(d["dt_s"], dtype=float),
            dvp_offset_ms=np.asarray(d["dvp_offset_ms"], dtype=float),
            dvp_jac=np.asarray(d["dvp_jac"], dtype=float),
            dvp_weight=float(d.get("dvp_weight", 1.0)),
        )


@dataclass(frozen=True)
class SegmentSolution:
    """Solved control profile and terminal margin for one segment."""

    accels_rtn_kms2: np.ndarray  # (k+1, 3), last row zero
    dv_segment_ms: float  # Σ ã(i) dt(i)
    dv_prime_ms: float  # terminal cone slack
    dvp_vec_ms: np.ndarray  # (3,) predicted terminal Δv′ components
    solver_status: str  # "optimal" | "infeasible" | "max-iter"
    objective_ms: float  # dv_segment_ms + weight · dv_prime_ms
    x_end_geqoe: np.ndarray  # (6,) predicted terminal state (affine model)
    iterations: int
    primal_residual: float
    dual_residual: float

    @property
    def ok(self) -> bool:
        return self.solver_status == "optimal"

    def to_dict(self) -> dict:
        return {
            "accels_rtn_kms2": self.accels_rtn_kms2.tolist(),
            "dv_segment_ms": self.dv_segment_ms,
            "dv_prime_ms": self.dv_prime_ms,
            "dvp_vec_ms": self.dvp_vec_ms.tolist(),
            "solver_status": self.solver_status,
            "objective_ms": self.objective_ms,
            "x_end_geqoe": self.x_end_geqoe.tolist(),
            "iterations": self.iterations,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentSolution":
        return cls(
            accels_rtn_kms2=np.asarray(d["accels_rtn_kms2"], dtype=float),
            dv_segment_ms=float(d["dv_segment_ms"]),
            dv_prime_ms=float(d["dv_prime_ms"]),
            dvp_vec_ms=np.asarray(d["dvp_vec_ms"], dtype=float),
            solver_status=str(d["solver_status"]),
            objective_ms=float(d["objective_ms"]),
            x_end_geqoe=np.asarray(d["x_end_geqoe"], dtype=float),
            iterations=int(d["iterations"]),
            primal_residual=float(d["primal_residual"]),
            dual_residual=float(d["dual_residual"]),
        )


# ── initial guess generation ──────────────────────────────────────────────────


def _propagate_cart_rtn(
    y: np.ndarray,
    dt_s: float,
    a_rtn: tuple[float, float, float],
    cd_area_over_m: float,
    fm: ForceModel,
    rtol: float,
    atol: float,
) -> np.ndarray:
    """One node step of (r, v) under natural forces plus a held RTN accel."""
    a_r, a_t, a_n = a_rtn

    def rhs(t, yy):
        rx, ry, rz, vx, vy, vz = yy.tolist()
        ax, ay, az = natural_accel_scalar(rx, ry, rz, vx, vy, vz, cd_area_over_m, fm)
        if a_r != 0.0 or a_t != 0.0 or a_n != 0.0:
            hx = ry * vz - rz * vy
            hy = rz * vx - rx * vz
            hz = rx * vy - ry * vx
            hm = math.sqrt(hx * hx + hy * hy + hz * hz)
            rm = math.sqrt(rx * rx + ry * ry + rz * rz)
            nx, ny, nz = hx / hm, hy / hm, hz / hm
            ux, uy, uz = rx / rm, ry / rm, rz / rm
            tx = ny * uz - nz * uy
            ty = nz * ux - nx * uz
            tz = nx * uy - ny * ux
            ax += a_r * ux + a_t * tx + a_n * nx
            ay += a_r * uy + a_t * ty + a_n * ny
            az += a_r * uz + a_t * tz + a_n * nz
        return np.array([vx, vy, vz, ax, ay, az])

    return rk.integrate(rhs, 0.0, y, dt_s, rtol=rtol, atol=atol).y_end


def _mean_gate_inputs(ym: np.ndarray) -> tuple[float, float, float]:
    """Mean argument of latitude, node and inclination from mean elements."""
    u_bar = mean_argument_of_latitude(ym)
    raan = math.atan2(ym[4], ym[3])
    incl = 2.0 * math.atan(math.hypot(ym[3], ym[4]))
    return u_bar, raan, incl


def initial_guess_segment(
    x0: "CartesianState",
    m0_kg: float,
    ref: "ReferenceTrajectory",
    seg: SegmentConfig,
    sc: SpacecraftConfig,
    *,
    force_model: ForceModel | None = None,
    rtol: float = 1e-11,
    atol: float = 1e-12,
) -> SegmentGuess:
    """Fly the reference thrust profile from the current state over a segment.

    Per node, the reference acceleration profile is sampled and re-gated with
    the eclipse geometry of the trajectory actually flown, the yaw angle is
    taken from the reference steering law with its sign chosen by the mean
    argument of latitude, and the state is stepped under J2 + drag + the held
    RTN acceleration.  The result is dynamically consistent even when the
    start state has drifted off the reference.

    Args:
        x0: Current osculating Cartesian state.
        m0_kg: Current mass.
        ref: Active reference trajectory (provides grid, profile and gate DC').
        seg: Segment geometry; the window is ref.t_s[n_run : n_run + dn].
        sc: Vehicle constants.
        force_model: Natural forces for the step propagation (default: all).
        rtol/atol: Integrator tolerances.

    Returns:
        SegmentGuess over the segment's node window.
    """
    fm = force_model if force_model is not None else ForceModel()
    if m0_kg <= 0.0:
        raise ValueError(f"m0_kg must be positive, got {m0_kg}")
    k = seg.dn
    if seg.n_run + k > ref.n_nodes - 1:
        raise ValueError(
            f"segment window [{seg.n_run}, {seg.n_run + k}] exceeds the "
            f"reference grid ({ref.n_nodes} nodes)"
        )
    t = np.asarray(ref.t_s[seg.n_run : seg.n_run + k + 1], dtype=float)

    cart = np.empty((k + 1, 6))
    geqoe = np.empty((k + 1, 6))
    accels = np.zeros((k + 1, 3))
    masses = np.empty(k + 1)
    eta = np.zeros(k + 1)

    y = np.concatenate((x0.r_km, x0.v_kms))
    m = float(m0_kg)
    ve_ms = sc.isp_s * G0_MS2
    for i in range(k + 1):
        cart[i] = y
        masses[i] = m
        state = CartesianState(r_km=y[:3].copy(), v_kms=y[3:].copy())
        geqoe[i] = cart_to_geqoe(state, include_j2=fm.include_j2).as_array()
        ym = mean_mee_lam_from_cart(state)
        u_bar, raan_m, incl_m = _mean_gate_inputs(ym)
        sun = sun_unit_vector(ref.epoch_jd + t[i] / 86400.0)
        center = eclipse_center_arg_lat(raan_m, incl_m, sun)
        eta[i] = duty_gate(u_bar, center, ref.dc_ref)
        if i == k:
            break  # no thrust is allocated for the last node

        f_lo = float(ref.f_at(t[i]))
        f_hi = float(ref.f_at(t[i + 1]))
        a_mag = eta[i] * 0.5 * (f_lo + f_hi) / ref.dc_ref
        bound = sc.max_accel_kms2(m)
        a_mag = min(a_mag, _BOUND_MARGIN * bound)

        beta = 0.5 * (float(ref.beta_at(t[i])) + float(ref.beta_at(t[i + 1])))
        ph = ref.phase_at(float(t[i]))
        i_dir = ph.i_dir if ph is not None and ph.thrusting else 0.0
        sign_n = i_dir * math.copysign(1.0, math.cos(u_bar))
        accels[i, 1] = a_mag * math.cos(beta)
        accels[i, 2] = a_mag * sign_n * math.sin(beta)

        dt = float(t[i + 1] - t[i])
        y = _propagate_cart_rtn(
            y,
            dt,
            (0.0, accels[i, 1], accels[i, 2]),
            sc.drag_coeff * sc.drag_area_m2 / m,
            fm,
            rtol,
            atol,
        )
        m = m / math.exp(a_mag * dt * 1e3 / ve_ms)

    return SegmentGuess(
        t_s=t, cart=cart, geqoe=geqoe, accels_rtn_kms2=accels,
        masses_kg=masses, eta=eta,
    )


# ── problem construction ──────────────────────────────────────────────────────


def _dvp_terminal_map(
    x_end_geqoe: np.ndarray,
    target: EquinoctialElements,
    include_j2: bool,
    fd_scale: float = 1e-7,
) -> tuple[np.ndarray, np.ndarray]:
    """Δv′ components at a terminal state and their state sensitivities.

    Returns (offset (3,) [m/s], jacobian (3, 6) [m/s per element]) of the map
    from terminal generalized elements to the Δv′ component vector, with the
    rate coefficients carried along (central finite differences).
    """

    def comps(x: np.ndarray) -> np.ndarray:
        st = geqoe_to_cart(GEqOEState.from_array(x), include_j2=include_j2)
        ym = mean_mee_lam_from_cart(st)
        cur = EquinoctialElements(
            p_km=float(ym[0]), f=float(ym[1]), g=float(ym[2]),
            h=float(ym[3]), k=float(ym[4]), L_rad=float(ym[5]),
        )
        return delta_v_prime(cur, target)[0]

    x0 = np.asarray(x_end_geqoe, dtype=float)
    offset = comps(x0)
    steps = fd_scale * _DVP_FD_UNITS
    steps[0] = fd_scale * abs(x0[0])
    jac = np.empty((3, 6))
    for j in range(6):
        xp = x0.copy()
        xm = x0.copy()
        xp[j] += steps[j]
        xm[j] -= steps[j]
        jac[:, j] = (comps(xp) - comps(xm)) / (2.0 * steps[j])
    return offset, jac


def build_segment_problem(
    guess: SegmentGuess,
    ref: "ReferenceTrajectory",
    seg: SegmentConfig,
    sc: SpacecraftConfig,
    *,
    force_model: ForceModel | None = None,
    dvp_weight: float = DEFAULT_DVP_WEIGHT,
    fd_scale: float = 1e-6,
    rtol: float = 1e-11,
    atol: float = 1e-12,
) -> SegmentProblem:
    """Linearize the segment dynamics about the guess and freeze the cones.

    The transition-matrix chain is evaluated at the guess nodes with the
    guess accelerations held; bounds are the thrust acceleration at the guess
    masses; the target is the reference's element profile at the segment end.
    """
    del seg  # geometry is carried by the guess itself
    fm = force_model if force_model is not None else ForceModel()
    k = guess.n_intervals
    dts = np.diff(guess.t_s)
    bounds = sc.thrust_n / guess.masses_kg[:-1] * 1e-3
    if k > 0:
        stm_a, stm_b, _ = compute_stm_chain(
            guess.geqoe[:-1], guess.masses_kg[:-1], dts,
            guess.accels_rtn_kms2[:-1], sc, fm,
            bounds_kms2=bounds, fd_scale=fd_scale, rtol=rtol, atol=atol,
        )
    else:
        stm_a = np.empty((0, 6, 6))
        stm_b = np.empty((0, 6, 3))
    target = ref.target_elements_at(float(guess.t_s[-1]))
    offset, jac = _dvp_terminal_map(guess.geqoe[-1], target, fm.include_j2)
    return SegmentProblem(
        guess=guess, stm_a=stm_a, stm_b=stm_b,
        x0_geqoe=guess.geqoe[0].copy(), target=target,
        bounds_kms2=bounds, dt_s=dts,
        dvp_offset_ms=offset, dvp_jac=jac, dvp_weight=dvp_weight,
    )


# ── cone program assembly and solution ────────────────────────────────────────


def _condense(problem: SegmentProblem, active: np.ndarray):
    """Condensed cone program over the active nodes' (δa, ã), Δṽ′ and y.

    Variables: per active node j the RTN deviation δa_j and its slack ã_j,
    then the terminal slack t, then y = Σ W_j δa_j where W_j maps control
    deviations to terminal Δv′ components through the chain.  All primal
    quantities are expressed in units of the peak acceleration bound so the
    variables and objective are O(1); the scale is returned so the caller can
    recover physical values.  Without this the interior-point absolute gap
    tolerance would dominate the tiny canonical-unit objective.
    """
    k = problem.n_intervals
    a_hat = problem.guess.accels_rtn_kms2[:-1] / _AU_KMS2
    ub = problem.bounds_kms2 / _AU_KMS2
    dts = problem.dt_s / _TU_S
    g0 = problem.dvp_offset_ms / _VU_MS

    # W chain: δ(Δv′ vec) = Σ_i P_i B_i δa_i with P accumulated backwards.
    w_all = np.empty((k, 3, 3))
    p = problem.dvp_jac / _VU_MS  # canonical Δv′ per element
    for i in range(k - 1, -1, -1):
        w_all[i] = (p @ problem.stm_b[i]) * _AU_KMS2
        p = p @ problem.stm_a[i]

    idx = np.flatnonzero(active)
    na = idx.size
    sigma = float(ub[idx].max())
    n = 4 * na + 4
    dims = ConeDims(nonneg=na, soc=tuple([4] * (na + 1)))
    c = np.zeros(n)
    g_mat = np.zeros((dims.total, n))
    h = np.zeros(dims.total)
    for j, i in enumerate(idx):
        c[4 * j + 3] = dts[i]
        g_mat[j, 4 * j + 3] = 1.0
        h[j] = ub[i] / sigma
        r = na + 4 * j
        g_mat[r, 4 * j + 3] = -1.0
        g_mat[r + 1 : r + 4, 4 * j : 4 * j + 3] = -np.eye(3)
        h[r + 1 : r + 4] = a_hat[i] / sigma
    c[4 * na] = problem.dvp_weight
    r = na + 4 * na
    g_mat[r, 4 * na] = -1.0
    g_mat[r + 1 : r + 4, 4 * na + 1 :] = -np.eye(3)
    h[r + 1 : r + 4] = g0 / sigma
    a_eq = np.zeros((3, n))
    a_eq[:, 4 * na + 1 :] = np.eye(3)
    for j, i in enumerate(idx):
        a_eq[:, 4 * j : 4 * j + 3] = -w_all[i]
    b_eq = np.zeros(3)
    return c, g_mat, h, dims, a_eq, b_eq, sigma


def _predicted_end_state(problem: SegmentProblem, accels: np.ndarray) -> np.ndarray:
    """Terminal state of the affine dynamics under the given accelerations."""
    dx = np.zeros(6)
    da = accels[:-1] - problem.guess.accels_rtn_kms2[:-1]
    for i in range(problem.n_intervals):
        dx = problem.stm_a[i] @ dx + problem.stm_b[i] @ da[i]
    return problem.guess.geqoe[-1] + dx


def _coast_solution(problem: SegmentProblem, status: str) -> SegmentSolution:
    """Closed-form solution when no node can thrust (or the guess is kept)."""
    accels = problem.guess.accels_rtn_kms2.copy()
    g0 = problem.dvp_offset_ms
    dv_seg = float(np.dot(np.linalg.norm(accels[:-1], axis=1), problem.dt_s) * 1e3)
    return SegmentSolution(
        accels_rtn_kms2=accels,
        dv_segment_ms=dv_seg,
        dv_prime_ms=float(np.linalg.norm(g0)),
        dvp_vec_ms=g0.copy(),
        solver_status=status,
        objective_ms=dv_seg + problem.dvp_weight * float(np.linalg.norm(g0)),
        x_end_geqoe=_predicted_end_state(problem, accels),
        iterations=0,
        primal_residual=0.0,
        dual_residual=0.0,
    )


def solve_segment(
    problem: SegmentProblem,
    *,
    feastol: float = 1e-8,
    max_iterations: int = 200,
) -> SegmentSolution:
    """Solve one segment's cone program (single pass, no re-linearization).

    Minimizes Σ ã(i) dt(i) + λ Δṽ′ subject to the affine dynamics chain,
    per-node acceleration cones ‖a(i)‖ ≤ ã(i) ≤ bound(i) and the terminal
    Δv′ cone, with λ the problem's terminal weight.  Nodes with a zero bound
    are eliminated before the solve (they can only coast).  Statuses other
    than "optimal" signal the caller to regenerate the reference rather than
    iterate.
    """
    k = problem.n_intervals
    a_hat = problem.guess.accels_rtn_kms2[:-1]
    a_hat_norm = np.linalg.norm(a_hat, axis=1) if k else np.zeros(0)
    active = problem.bounds_kms2 > 0.0
    if np.any(a_hat_norm[~active] > 0.0):
        return _coast_solution(problem, "infeasible")
    if np.any(a_hat_norm[active] > problem.bounds_kms2[active] * (1.0 + 1e-9)):
        return _coast_solution(problem, "infeasible")
    if k == 0 or not np.any(active):
        return _coast_solution(problem, "optimal")

    c, g_mat, h, dims, a_eq, b_eq, sigma = _condense(problem, active)
    sol = solve_socp(
        c, g_mat, h, dims, a_eq, b_eq,
        feastol=feastol, abstol=feastol, reltol=feastol,
        max_iterations=max_iterations,
    )
    status = {
        "optimal": "optimal",
        "max_iterations": "max-iter",
        "numerical_trouble": "infeasible",
    }[sol.status]

    idx = np.flatnonzero(active)
    na = idx.size
    accels = problem.guess.accels_rtn_kms2.copy()
    atil = np.zeros(k)
    for j, i in enumerate(idx):
        accels[i] = accels[i] + sol.x[4 * j : 4 * j + 3] * sigma * _AU_KMS2
        atil[i] = sol.x[4 * j + 3] * sigma
    dv_seg = float(np.dot(atil, problem.dt_s / _TU_S) * _VU_MS)
    dv_prime = float(sol.x[4 * na] * sigma * _VU_MS)
    dvp_vec = problem.dvp_offset_ms + sol.x[4 * na + 1 :] * sigma * _VU_MS
    return SegmentSolution(
        accels_rtn_kms2=accels,
        dv_segment_ms=dv_seg,
        dv_prime_ms=dv_prime,
        dvp_vec_ms=dvp_vec,
        solver_status=status,
        objective_ms=dv_seg + problem.dvp_weight * dv_prime,
        x_end_geqoe=_predicted_end_state(problem, accels),
        iterations=sol.iterations,
        primal_residual=sol.primal_residual,
        dual_residual=sol.dual_residual,
    )
