"""Force models, environment, and the node-to-node step map.

The truth dynamics are two-body + J2 + Harris-Priester drag with commanded
accelerations held fixed in the RTN frame (the frame itself rotates with the
state during propagation). State-transition pairs (A, B) for the convex
subproblem come from central finite differences propagated as one ensemble
with shared adaptive steps, so the integrator truncation error is common mode
and cancels in the differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import rk
from .atmosphere import density_kg_m3, density_scalar_kg_m3
from .constants import (
    G0_MS2,
    J2_EARTH,
    MU_EARTH_KM3_S2,
    OMEGA_EARTH_RAD_S,
    R_EARTH_KM,
)
from .coords import CartesianState, GEqOEState, cart_to_geqoe, geqoe_to_cart, wrap_pi

_MU = MU_EARTH_KM3_S2

__all__ = [
    "SpacecraftConfig",
    "ForceModel",
    "eci_accel",
    "natural_accel_scalar",
    "propagate_cart",
    "step_map",
    "compute_stm",
    "compute_stm_chain",
    "julian_date",
    "sun_unit_vector",
    "eclipse_center_arg_lat",
    "duty_gate",
    "gate_boundary_distance",
    "mass_flow_kg_s",
    "mass_after_dv",
]


@dataclass(frozen=True)
class SpacecraftConfig:
    """Vehicle constants.

    Attributes:
        mass_kg: Initial wet mass [kg].
        thrust_n: Maximum thrust [N].
        isp_s: Specific impulse [s].
        duty_cycle: Fraction of each orbit the thruster may fire in flight.
        drag_coeff: Drag coefficient [-].
        drag_area_m2: Drag reference area [m^2].
    """

    mass_kg: float
    thrust_n: float
    isp_s: float
    duty_cycle: float
    drag_coeff: float = 2.2
    drag_area_m2: float = 0.01

    def __post_init__(self) -> None:
        if self.mass_kg <= 0.0:
            raise ValueError(f"mass_kg must be positive, got {self.mass_kg}")
        if self.thrust_n < 0.0:
            raise ValueError(f"thrust_n must be nonnegative, got {self.thrust_n}")
        if self.isp_s <= 0.0:
            raise ValueError(f"isp_s must be positive, got {self.isp_s}")
        if not 0.0 < self.duty_cycle <= 1.0:
            raise ValueError(f"duty_cycle must be in (0, 1], got {self.duty_cycle}")

    def max_accel_kms2(self, mass_kg: float) -> float:
        """Maximum thrust acceleration at the given mass [km/s^2]."""
        return self.thrust_n / mass_kg * 1e-3


@dataclass(frozen=True)
class ForceModel:
    """Perturbation switches for the truth dynamics."""

    include_j2: bool = True
    include_drag: bool = True


def mass_flow_kg_s(thrust_n: float, isp_s: float) -> float:
    """Propellant mass flow at full thrust [kg/s]."""
    return thrust_n / (isp_s * G0_MS2)


def mass_after_dv(m0_kg: float, dv_kms: float, isp_s: float) -> float:
    """Rocket-equation mass after a delta-v expenditure."""
    return m0_kg * math.exp(-dv_kms * 1e3 / (isp_s * G0_MS2))


# ── accelerations ─────────────────────────────────────────────────────────────

_OMEGA_VEC = np.array([0.0, 0.0, OMEGA_EARTH_RAD_S])


def _j2_accel(R: np.ndarray) -> np.ndarray:
    """J2 acceleration for (m, 3) positions [km/s^2]."""
    r = np.linalg.norm(R, axis=1)
    zr2 = (R[:, 2] / r) ** 2
    c = -1.5 * _MU * J2_EARTH * R_EARTH_KM**2 / r**4
    out = np.empty_like(R)
    s = (1.0 - 5.0 * zr2) / r
    out[:, 0] = c * s * R[:, 0]
    out[:, 1] = c * s * R[:, 1]
    out[:, 2] = c * (3.0 - 5.0 * zr2) / r * R[:, 2]
    return out


def _drag_accel(R: np.ndarray, V: np.ndarray, cd_area_over_m: np.ndarray) -> np.ndarray:
    """Drag acceleration [km/s^2]; cd_area_over_m is Cd*A/m in m^2/kg."""
    vrel = V - np.cross(np.broadcast_to(_OMEGA_VEC, R.shape), R)
    alt = np.linalg.norm(R, axis=1) - R_EARTH_KM
    rho = np.atleast_1d(density_kg_m3(alt))
    vmag = np.linalg.norm(vrel, axis=1)
    # 0.5 * rho[kg/m^3] * CdA/m[m^2/kg] * v^2 with v in m/s gives m/s^2;
    # with v kept in km/s the net conversion to km/s^2 is a factor 500.
    coef = -500.0 * rho * cd_area_over_m * vmag
    return coef[:, None] * vrel


def eci_accel(
    R: np.ndarray,
    V: np.ndarray,
    mass_kg: np.ndarray | float,
    sc: SpacecraftConfig,
    fm: ForceModel,
) -> np.ndarray:
    """Natural (uncommanded) acceleration for (m, 3) states [km/s^2]."""
    r = np.linalg.norm(R, axis=1)
    acc = -_MU / r**3
    out = acc[:, None] * R
    if fm.include_j2:
        out += _j2_accel(R)
    if fm.include_drag:
        cdam = sc.drag_coeff * sc.drag_area_m2 / np.asarray(mass_kg, dtype=float)
        out += _drag_accel(R, V, np.broadcast_to(np.atleast_1d(cdam), (R.shape[0],)))
    return out


def natural_accel_scalar(
    rx: float,
    ry: float,
    rz: float,
    vx: float,
    vy: float,
    vz: float,
    cd_area_over_m: float,
    fm: ForceModel,
) -> tuple[float, float, float]:
    """Scalar twin of eci_accel for single-trajectory right-hand sides.

    Propagation calls this millions of times; the batch path's array dispatch
    would dominate the runtime. Formulas are term-for-term the same.
    """
    r2 = rx * rx + ry * ry + rz * rz
    r = math.sqrt(r2)
    g = -_MU / (r2 * r)
    ax = g * rx
    ay = g * ry
    az = g * rz
    if fm.include_j2:
        zr2 = (rz / r) ** 2
        c = -1.5 * _MU * J2_EARTH * R_EARTH_KM**2 / r2**2
        s = c * (1.0 - 5.0 * zr2) / r
        ax += s * rx
        ay += s * ry
        az += c * (3.0 - 5.0 * zr2) / r * rz
    if fm.include_drag:
        vrx = vx + OMEGA_EARTH_RAD_S * ry
        vry = vy - OMEGA_EARTH_RAD_S * rx
        vrz = vz
        rho = density_scalar_kg_m3(r - R_EARTH_KM)
        coef = -500.0 * rho * cd_area_over_m * math.sqrt(
            vrx * vrx + vry * vry + vrz * vrz
        )
        ax += coef * vrx
        ay += coef * vry
        az += coef * vrz
    return ax, ay, az


def _rtn_to_eci_batch(R: np.ndarray, V: np.ndarray, a_rtn: np.ndarray) -> np.ndarray:
    """Map per-member RTN accelerations to ECI, recomputing the frame each call."""
    rmag = np.linalg.norm(R, axis=1, keepdims=True)
    rhat = R / rmag
    h = np.cross(R, V)
    nhat = h / np.linalg.norm(h, axis=1, keepdims=True)
    that = np.cross(nhat, rhat)
    return (
        a_rtn[:, 0:1] * rhat + a_rtn[:, 1:2] * that + a_rtn[:, 2:3] * nhat
    )


def propagate_cart(
    state: CartesianState,
    mass_kg: float,
    dt_s: float,
    sc: SpacecraftConfig,
    fm: ForceModel,
    a_rtn_kms2: np.ndarray | None = None,
    rtol: float = 1e-11,
    atol: float = 1e-12,
    record: np.ndarray | tuple = (),
) -> rk.OdeResult:
    """Propagate one Cartesian state for dt_s seconds.

    Args:
        state: Initial state (t_s is carried through to the result times).
        mass_kg: Vehicle mass, held constant (used by drag).
        dt_s: Propagation span [s], nonnegative.
        sc: Vehicle constants.
        fm: Perturbation switches.
        a_rtn_kms2: Optional commanded acceleration held fixed in RTN (3,).
        rtol/atol: Integrator tolerances.
        record: Absolute times to record exactly.

    Returns:
        rk.OdeResult whose y rows are (rx, ry, rz, vx, vy, vz).
    """
    a_cmd = None if a_rtn_kms2 is None else np.asarray(a_rtn_kms2, dtype=float)[None, :]

    def rhs(t, y):
        Y = np.atleast_2d(y)
        R, V = Y[:, :3], Y[:, 3:]
        acc = eci_accel(R, V, mass_kg, sc, fm)
        if a_cmd is not None:
            acc = acc + _rtn_to_eci_batch(R, V, np.broadcast_to(a_cmd, (R.shape[0], 3)))
        out = np.concatenate((V, acc), axis=1)
        return out[0] if y.ndim == 1 else out

    y0 = np.concatenate((state.r_km, state.v_kms))
    return rk.integrate(
        rhs, state.t_s, y0, state.t_s + dt_s, rtol=rtol, atol=atol, record=record
    )


# ── step map in generalized elements and its finite-difference STM ───────────

#: Characteristic sizes used to scale finite-difference steps per component
#: (nu is scaled by its own value; the eccentricity-type components by 1e-2).
_FD_UNITS = np.array([np.nan, 1e-2, 1e-2, 1.0, 1.0, 1.0])


def _propagate_geqoe_ensemble(
    X: np.ndarray,
    mass_kg: float | np.ndarray,
    dt_s: float,
    A_rtn: np.ndarray,
    sc: SpacecraftConfig,
    fm: ForceModel,
    rtol: float,
    atol: float,
) -> np.ndarray:
    """Propagate (m, 6) element sets with per-member fixed RTN accelerations.

    mass_kg may be a scalar or an (m,) array (per-member drag loading).
    """
    m = X.shape[0]
    Y0 = np.empty((m, 6))
    for i in range(m):
        st = geqoe_to_cart(GEqOEState.from_array(X[i]), include_j2=fm.include_j2)
        Y0[i, :3] = st.r_km
        Y0[i, 3:] = st.v_kms

    def rhs(t, Y):
        R, V = Y[:, :3], Y[:, 3:]
        acc = eci_accel(R, V, mass_kg, sc, fm) + _rtn_to_eci_batch(R, V, A_rtn)
        return np.concatenate((V, acc), axis=1)

    res = rk.integrate(rhs, 0.0, Y0, dt_s, rtol=rtol, atol=atol)
    Yf = res.y_end
    out = np.empty((m, 6))
    for i in range(m):
        out[i] = cart_to_geqoe(
            CartesianState(Yf[i, :3], Yf[i, 3:]), include_j2=fm.include_j2
        ).as_array()
    return out


def step_map(
    x_geqoe: np.ndarray,
    mass_kg: float,
    dt_s: float,
    a_rtn_kms2: np.ndarray,
    sc: SpacecraftConfig,
    fm: ForceModel,
    rtol: float = 1e-11,
    atol: float = 1e-12,
) -> np.ndarray:
    """Generalized-element state after dt_s under a held RTN acceleration."""
    X = np.asarray(x_geqoe, dtype=float)[None, :]
    A = np.asarray(a_rtn_kms2, dtype=float)[None, :]
    return _propagate_geqoe_ensemble(X, mass_kg, dt_s, A, sc, fm, rtol, atol)[0]


def compute_stm(
    x_geqoe: np.ndarray,
    mass_kg: float,
    dt_s: float,
    a_rtn_kms2: np.ndarray,
    sc: SpacecraftConfig,
    fm: ForceModel,
    bound_kms2: float | None = None,
    fd_scale: float = 1e-6,
    rtol: float = 1e-11,
    atol: float = 1e-12,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """State and control transition matrices of the step map, by central FD.

    All 19 trajectories (nominal, 12 state perturbations, 6 control
    perturbations) propagate as one ensemble with shared steps.

    Args:
        x_geqoe: Node elements (nu, p1, p2, L_gen, q1, q2).
        mass_kg: Node mass (held fixed across the step).
        dt_s: Node interval [s].
        a_rtn_kms2: Held RTN acceleration at the node (3,).
        sc, fm: Vehicle and force-model configuration.
        bound_kms2: Thrust-acceleration bound used to scale control steps
            (defaults to the thrust bound at mass_kg, or 1e-7 if thrust is 0).
        fd_scale: Finite-difference scale; state steps are fd_scale times the
            per-component characteristic size, control steps fd_scale*1e5
            times the bound.
        rtol/atol: Integrator tolerances.

    Returns:
        (A, B, x_next): A (6, 6), B (6, 3) [element units per km/s^2], and the
        nominal end state (6,).
    """
    x0 = np.asarray(x_geqoe, dtype=float)
    a0 = np.asarray(a_rtn_kms2, dtype=float)
    if bound_kms2 is None:
        bound_kms2 = sc.max_accel_kms2(mass_kg) if sc.thrust_n > 0.0 else 1e-7

    dx, da = _stm_fd_steps(x0, bound_kms2, fd_scale)
    X, A_rtn = _stm_fd_block(x0, a0, dx, da)
    out = _propagate_geqoe_ensemble(X, mass_kg, dt_s, A_rtn, sc, fm, rtol, atol)
    return _stm_fd_extract(out, dx, da)


def _stm_fd_steps(
    x0: np.ndarray, bound_kms2: float, fd_scale: float
) -> tuple[np.ndarray, float]:
    """Per-component state steps and the control step for one node."""
    dx = fd_scale * _FD_UNITS
    dx[0] = fd_scale * abs(x0[0])
    da = fd_scale * 1e5 * max(bound_kms2, 1e-9)
    return dx, da


def _stm_fd_block(
    x0: np.ndarray, a0: np.ndarray, dx: np.ndarray, da: float
) -> tuple[np.ndarray, np.ndarray]:
    """19-member ensemble block: nominal, then +/- state and control steps."""
    X = np.tile(x0, (19, 1))
    A_rtn = np.tile(a0, (19, 1))
    for j in range(6):
        X[1 + 2 * j, j] += dx[j]
        X[2 + 2 * j, j] -= dx[j]
    for j in range(3):
        A_rtn[13 + 2 * j, j] += da
        A_rtn[14 + 2 * j, j] -= da
    return X, A_rtn


def _stm_fd_extract(
    out: np.ndarray, dx: np.ndarray, da: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Central differences of one propagated 19-member block."""
    # Un-wrap the fast angle against the nominal to keep differences small.
    ref = out[0, 3]
    dL = wrap_pi(out[:, 3] - ref)
    out = out.copy()
    out[:, 3] = ref + dL

    A = np.empty((6, 6))
    B = np.empty((6, 3))
    for j in range(6):
        A[:, j] = (out[1 + 2 * j] - out[2 + 2 * j]) / (2.0 * dx[j])
    for j in range(3):
        B[:, j] = (out[13 + 2 * j] - out[14 + 2 * j]) / (2.0 * da)
    return A, B, out[0]


def compute_stm_chain(
    xs_geqoe: np.ndarray,
    masses_kg: np.ndarray,
    dts_s: np.ndarray,
    accels_rtn_kms2: np.ndarray,
    sc: SpacecraftConfig,
    fm: ForceModel,
    bounds_kms2: np.ndarray | None = None,
    fd_scale: float = 1e-6,
    rtol: float = 1e-11,
    atol: float = 1e-12,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Transition matrices for a whole chain of nodes in few ensemble runs.

    Equivalent to calling compute_stm per node, but nodes that share a step
    duration propagate as one ensemble (the dynamics are autonomous), which
    is what makes segment problem assembly fast enough for the guidance loop.

    Args:
        xs_geqoe: (k, 6) node elements.
        masses_kg: (k,) node masses.
        dts_s: (k,) node step durations [s].
        accels_rtn_kms2: (k, 3) held RTN accelerations.
        sc, fm: Vehicle and force-model configuration.
        bounds_kms2: Optional (k,) control FD scales (default: thrust bound
            at each node mass, or 1e-7 if thrust is 0).
        fd_scale, rtol, atol: As in compute_stm.

    Returns:
        (A, B, x_next): (k, 6, 6), (k, 6, 3) and (k, 6) nominal end states.
    """
    xs = np.asarray(xs_geqoe, dtype=float)
    ms = np.asarray(masses_kg, dtype=float)
    dts = np.asarray(dts_s, dtype=float)
    acc = np.asarray(accels_rtn_kms2, dtype=float)
    k = xs.shape[0]
    if bounds_kms2 is None:
        if sc.thrust_n > 0.0:
            bounds = np.array([sc.max_accel_kms2(m) for m in ms])
        else:
            bounds = np.full(k, 1e-7)
    else:
        bounds = np.asarray(bounds_kms2, dtype=float)

    A = np.empty((k, 6, 6))
    B = np.empty((k, 6, 3))
    x_next = np.empty((k, 6))
    steps = [_stm_fd_steps(xs[j], float(bounds[j]), fd_scale) for j in range(k)]

    groups: dict[float, list[int]] = {}
    for j in range(k):
        groups.setdefault(float(dts[j]), []).append(j)

    for dt, idx in groups.items():
        X = np.empty((19 * len(idx), 6))
        A_rtn = np.empty((19 * len(idx), 3))
        mass = np.empty(19 * len(idx))
        for row, j in enumerate(idx):
            dx, da = steps[j]
            blk = slice(19 * row, 19 * row + 19)
            X[blk], A_rtn[blk] = _stm_fd_block(xs[j], acc[j], dx, da)
            mass[blk] = ms[j]
        out = _propagate_geqoe_ensemble(X, mass, dt, A_rtn, sc, fm, rtol, atol)
        for row, j in enumerate(idx):
            dx, da = steps[j]
            A[j], B[j], x_next[j] = _stm_fd_extract(
                out[19 * row : 19 * row + 19], dx, da
            )
    return A, B, x_next


# ── sun, eclipse geometry and the duty gate ──────────────────────────────────


def julian_date(epoch_utc: str) -> float:
    """Julian date of an ISO-8601 UTC timestamp (e.g. '2022-03-25T00:00:00Z')."""
    s = epoch_utc.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return 2440587.5 + dt.timestamp() / 86400.0


def sun_unit_vector(jd: float) -> np.ndarray:
    """Geocentric sun direction (equatorial frame), low-precision almanac model."""
    d = jd - 2451545.0
    L = math.radians((280.460 + 0.9856474 * d) % 360.0)
    g = math.radians((357.528 + 0.9856003 * d) % 360.0)
    lam = L + math.radians(1.915) * math.sin(g) + math.radians(0.020) * math.sin(2.0 * g)
    eps = math.radians(23.439 - 4.0e-7 * d)
    return np.array(
        [math.cos(lam), math.cos(eps) * math.sin(lam), math.sin(eps) * math.sin(lam)]
    )


def eclipse_center_arg_lat(raan_rad: float, incl_rad: float, sun_hat: np.ndarray) -> float:
    """Argument of latitude of the anti-sun direction projected onto the orbit plane.

    This is where eclipse is deepest; the duty gate centers its thrust-off
    arcs on it (and on the point opposite it).
    """
    n_hat = np.array([math.cos(raan_rad), math.sin(raan_rad), 0.0])
    h_hat = np.array(
        [
            math.sin(incl_rad) * math.sin(raan_rad),
            -math.sin(incl_rad) * math.cos(raan_rad),
            math.cos(incl_rad),
        ]
    )
    m_hat = np.cross(h_hat, n_hat)
    return math.atan2(float(-sun_hat @ m_hat), float(-sun_hat @ n_hat)) % (2.0 * math.pi)


def gate_boundary_distance(u_rad: float, center_rad: float, duty_ref: float) -> float:
    """Signed angular distance into the thrust-off region (positive = off).

    Zero crossings are the gate switching instants, which event detection uses
    when generating references.
    """
    w = 0.5 * math.pi * (1.0 - duty_ref)
    d1 = abs(wrap_pi(u_rad - center_rad))
    d2 = abs(wrap_pi(u_rad - center_rad - math.pi))
    return w - min(d1, d2)


def duty_gate(
    u_rad: float | np.ndarray, center_rad: float, duty_ref: float
) -> float | np.ndarray:
    """Thrust gate: 0 inside the off-arcs around the eclipse axis, else 1.

    Args:
        u_rad: Mean argument(s) of latitude.
        center_rad: Eclipse center argument of latitude.
        duty_ref: Reference duty cycle DC' in [0, 1]; the off-arcs have
            half-width (pi/2)(1 - DC') so the on fraction is exactly DC'.

    Returns:
        0.0 or 1.0 (array-valued for array input).
    """
    if not 0.0 <= duty_ref <= 1.0:
        raise ValueError(f"duty_ref must be within [0, 1], got {duty_ref}")
    w = 0.5 * math.pi * (1.0 - duty_ref)
    u = np.asarray(u_rad, dtype=float)
    d1 = np.abs(wrap_pi(u - center_rad))
    d2 = np.abs(wrap_pi(u - center_rad - math.pi))
    off = (d1 < w) | (d2 < w)
    out = np.where(off, 0.0, 1.0)
    return float(out) if np.isscalar(u_rad) else out
