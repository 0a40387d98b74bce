"""Orbital element sets and conversions.

Supported representations:

* Cartesian inertial position/velocity (km, km/s).
* Classical Keplerian elements, osculating or mean (first-order J2 averaging).
* Modified equinoctial elements (p, f, g, h, k, L) — nonsingular for circular
  and equatorial-prograde orbits.
* Generalized equinoctial elements (nu, p1, p2, L_gen, q1, q2) that absorb the
  J2 potential into the orbit energy: under J2-only motion nu is an exact
  invariant, which is what makes the set attractive for linearized guidance.

Conventions: angles in radians internally, km and km/s for state vectors.
The transverse direction of the RTN frame is h-cross-r (not velocity-aligned).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import J2_EARTH, MU_EARTH_KM3_S2, R_EARTH_KM

_MU = MU_EARTH_KM3_S2
_J2 = J2_EARTH
_RE = R_EARTH_KM

__all__ = [
    "CartesianState",
    "KeplerianElements",
    "EquinoctialElements",
    "GEqOEState",
    "wrap_two_pi",
    "wrap_pi",
    "rtn_basis",
    "cart_to_kep",
    "kep_to_cart",
    "kep_to_equinoctial",
    "equinoctial_to_kep",
    "cart_to_equinoctial",
    "equinoctial_to_cart",
    "cart_to_geqoe",
    "geqoe_to_cart",
    "osc_to_mean",
    "mean_to_osc",
    "j2_potential",
]


# ── element containers ────────────────────────────────────────────────────────


@dataclass(frozen=True)
class CartesianState:
    """Inertial state vector.

    Attributes:
        r_km: Position (3,) [km].
        v_kms: Velocity (3,) [km/s].
        t_s: Time tag [s] relative to the scenario epoch.
    """

    r_km: np.ndarray
    v_kms: np.ndarray
    t_s: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "r_km", np.asarray(self.r_km, dtype=float))
        object.__setattr__(self, "v_kms", np.asarray(self.v_kms, dtype=float))
        if self.r_km.shape != (3,) or self.v_kms.shape != (3,):
            raise ValueError(
                f"r_km and v_kms must have shape (3,), got {self.r_km.shape} and {self.v_kms.shape}"
            )


@dataclass(frozen=True)
class KeplerianElements:
    """Classical elements; `kind` distinguishes osculating from mean sets.

    Attributes:
        a_km: Semi-major axis [km].
        e: Eccentricity [-].
        i_rad: Inclination [rad], in [0, pi); retrograde-equatorial excluded.
        raan_rad: Right ascension of ascending node [rad].
        argp_rad: Argument of perigee [rad].
        ta_rad: True anomaly [rad].
        kind: "osculating" or "mean".
    """

    a_km: float
    e: float
    i_rad: float
    raan_rad: float
    argp_rad: float
    ta_rad: float
    kind: str = "osculating"

    def __post_init__(self) -> None:
        if self.a_km <= 0.0:
            raise ValueError(f"a_km must be positive, got {self.a_km}")
        if not 0.0 <= self.e < 1.0:
            raise ValueError(f"e must be in [0, 1), got {self.e}")
        if not 0.0 <= self.i_rad < math.pi - 1e-9:
            raise ValueError(f"i_rad must be in [0, pi), got {self.i_rad}")
        if self.kind not in ("osculating", "mean"):
            raise ValueError(f"kind must be 'osculating' or 'mean', got {self.kind!r}")


@dataclass(frozen=True)
class EquinoctialElements:
    """Modified equinoctial elements (osculating).

    p = a(1-e^2); f,g encode eccentricity vector; h,k encode the orbit plane
    (h = tan(i/2)cosΩ, k = tan(i/2)sinΩ); L is true longitude Ω+ω+θ.
    """

    p_km: float
    f: float
    g: float
    h: float
    k: float
    L_rad: float

    def __post_init__(self) -> None:
        if self.p_km <= 0.0:
            raise ValueError(f"p_km must be positive, got {self.p_km}")


@dataclass(frozen=True)
class GEqOEState:
    """Generalized equinoctial elements.

    nu is the generalized mean motion built from total (kinetic + J2 potential)
    orbital energy; p1, p2 generalize the eccentricity vector; q1, q2 fix the
    orbit plane (q1 = tan(i/2)sinΩ, q2 = tan(i/2)cosΩ); l_gen_rad is the
    generalized mean longitude.
    """

    nu_rad_s: float
    p1: float
    p2: float
    l_gen_rad: float
    q1: float
    q2: float

    def as_array(self) -> np.ndarray:
        """Return (nu, p1, p2, L_gen, q1, q2) as a float array."""
        return np.array(
            [self.nu_rad_s, self.p1, self.p2, self.l_gen_rad, self.q1, self.q2]
        )

    @staticmethod
    def from_array(y: np.ndarray) -> "GEqOEState":
        """Build from a 6-array in (nu, p1, p2, L_gen, q1, q2) order."""
        return GEqOEState(*(float(v) for v in y))


# ── small angle helpers ───────────────────────────────────────────────────────


def wrap_two_pi(x: float | np.ndarray) -> float | np.ndarray:
    """Wrap angle(s) into [0, 2*pi)."""
    return np.mod(x, 2.0 * math.pi)


def wrap_pi(x: float | np.ndarray) -> float | np.ndarray:
    """Wrap angle(s) into (-pi, pi]."""
    return math.pi - np.mod(math.pi - np.asarray(x), 2.0 * math.pi)


def rtn_basis(r_km: np.ndarray, v_kms: np.ndarray) -> np.ndarray:
    """Rotation matrix whose columns are the RTN unit vectors in inertial axes.

    Columns are (radial, transverse, normal) with transverse = normal x radial,
    so `M @ a_rtn` maps an RTN acceleration into the inertial frame and
    `M.T @ a_eci` maps back.

    Args:
        r_km: Inertial position (3,).
        v_kms: Inertial velocity (3,).

    Returns:
        (3, 3) orthonormal matrix.

    Raises:
        ValueError: If the state is degenerate (zero radius or zero angular momentum).
    """
    r = np.asarray(r_km, dtype=float)
    v = np.asarray(v_kms, dtype=float)
    rmag = float(np.linalg.norm(r))
    hvec = np.cross(r, v)
    hmag = float(np.linalg.norm(hvec))
    if rmag <= 0.0 or hmag <= 0.0:
        raise ValueError("degenerate state: zero radius or angular momentum")
    rhat = r / rmag
    nhat = hvec / hmag
    that = np.cross(nhat, rhat)
    return np.column_stack((rhat, that, nhat))


def j2_potential(r_km: np.ndarray) -> float:
    """J2 perturbing potential energy per unit mass [km^2/s^2].

    Sign convention: U > 0 near the equator at LEO; total orbital energy is
    eps = v^2/2 - mu/r + U.
    """
    r = np.asarray(r_km, dtype=float)
    rmag = float(np.linalg.norm(r))
    sphi2 = (r[2] / rmag) ** 2
    return _MU * _J2 * _RE**2 / (2.0 * rmag**3) * (3.0 * sphi2 - 1.0)


# ── equinoctial frame and array-level conversions ────────────────────────────


def _mee_frame(h: float, k: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Equinoctial orbit-plane basis (f_hat, g_hat, h_hat) from (h, k)."""
    s2 = 1.0 + h * h + k * k
    fhat = np.array([1.0 + h * h - k * k, 2.0 * h * k, -2.0 * k]) / s2
    ghat = np.array([2.0 * h * k, 1.0 - h * h + k * k, 2.0 * h]) / s2
    hhat = np.array([2.0 * k, -2.0 * h, 1.0 - h * h - k * k]) / s2
    return fhat, ghat, hhat


def _cart_to_mee(r: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cartesian -> (p, f, g, h, k, L). Nonsingular for i < pi."""
    rmag = float(np.linalg.norm(r))
    hvec = np.cross(r, v)
    hmag = float(np.linalg.norm(hvec))
    if rmag <= 0.0 or hmag <= 0.0:
        raise ValueError("degenerate state: zero radius or angular momentum")
    hhat = hvec / hmag
    denom = 1.0 + hhat[2]
    if denom < 1e-12:
        raise ValueError("retrograde-equatorial orbit: equinoctial elements singular")
    h = -hhat[1] / denom
    k = hhat[0] / denom
    p = hmag * hmag / _MU
    evec = np.cross(v, hvec) / _MU - r / rmag
    fhat, ghat, _ = _mee_frame(h, k)
    f = float(evec @ fhat)
    g = float(evec @ ghat)
    L = math.atan2(float(r @ ghat), float(r @ fhat))
    return np.array([p, f, g, h, k, wrap_two_pi(L)])


def _mee_to_cart(mee: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(p, f, g, h, k, L) -> Cartesian (r, v)."""
    p, f, g, h, k, L = (float(x) for x in mee)
    if p <= 0.0:
        raise ValueError(f"semi-latus rectum must be positive, got {p}")
    fhat, ghat, _ = _mee_frame(h, k)
    cL, sL = math.cos(L), math.sin(L)
    w = 1.0 + f * cL + g * sL
    if w <= 0.0:
        raise ValueError(f"hyperbolic or invalid point on orbit: w = {w}")
    rmag = p / w
    rvec = rmag * (cL * fhat + sL * ghat)
    smup = math.sqrt(_MU / p)
    vvec = smup * (-(sL + g) * fhat + (cL + f) * ghat)
    return rvec, vvec


def _kep_to_mee(
    a: float, e: float, i: float, raan: float, argp: float, ta: float
) -> np.ndarray:
    p = a * (1.0 - e * e)
    lonper = argp + raan
    f = e * math.cos(lonper)
    g = e * math.sin(lonper)
    th = math.tan(0.5 * i)
    h = th * math.cos(raan)
    k = th * math.sin(raan)
    L = wrap_two_pi(lonper + ta)
    return np.array([p, f, g, h, k, L])


def _mee_to_kep(mee: np.ndarray) -> tuple[float, float, float, float, float, float]:
    p, f, g, h, k, L = (float(x) for x in mee)
    e = math.hypot(f, g)
    a = p / (1.0 - e * e)
    i = 2.0 * math.atan(math.hypot(h, k))
    raan = math.atan2(k, h) if (h != 0.0 or k != 0.0) else 0.0
    lonper = math.atan2(g, f) if e > 1e-15 else raan
    argp = lonper - raan
    ta = L - lonper
    return a, e, i, wrap_two_pi(raan), wrap_two_pi(argp), wrap_two_pi(ta)


def _true_to_mean_longitude(f: float, g: float, L: float) -> float:
    """True longitude -> mean longitude lambda = Omega + omega + M."""
    e = math.hypot(f, g)
    if e < 1e-14:
        return wrap_two_pi(L)
    lonper = math.atan2(g, f)
    ta = L - lonper
    cta, sta = math.cos(ta), math.sin(ta)
    denom = 1.0 + e * cta
    sE = math.sqrt(1.0 - e * e) * sta / denom
    cE = (e + cta) / denom
    E = math.atan2(sE, cE)
    M = E - e * sE
    return wrap_two_pi(lonper + M)


def _mean_to_true_longitude(f: float, g: float, lam: float) -> float:
    """Mean longitude -> true longitude, Newton on the Kepler equation."""
    e = math.hypot(f, g)
    if e < 1e-14:
        return wrap_two_pi(lam)
    lonper = math.atan2(g, f)
    M = wrap_pi(lam - lonper)
    E = M if e < 0.8 else math.pi
    for _ in range(32):
        d = (E - e * math.sin(E) - M) / (1.0 - e * math.cos(E))
        E -= d
        if abs(d) < 1e-14:
            break
    sta = math.sqrt(1.0 - e * e) * math.sin(E) / (1.0 - e * math.cos(E))
    cta = (math.cos(E) - e) / (1.0 - e * math.cos(E))
    ta = math.atan2(sta, cta)
    return wrap_two_pi(lonper + ta)


# ── public conversion wrappers ───────────────────────────────────────────────


def cart_to_kep(state: CartesianState) -> KeplerianElements:
    """Convert a Cartesian state to osculating Keplerian elements.

    Angle extraction goes through the equinoctial set so near-circular and
    near-equatorial orbits stay well conditioned (only safe atan2 forms).

    Args:
        state: Inertial state.

    Returns:
        Osculating KeplerianElements.

    Raises:
        ValueError: For degenerate, parabolic/hyperbolic, or i = pi states.
    """
    mee = _cart_to_mee(state.r_km, state.v_kms)
    a, e, i, raan, argp, ta = _mee_to_kep(mee)
    if a <= 0.0 or e >= 1.0:
        raise ValueError(f"state is not elliptic: a={a:.3f} km, e={e:.6f}")
    return KeplerianElements(a, e, i, raan, argp, ta)


def kep_to_cart(k: KeplerianElements) -> CartesianState:
    """Convert osculating Keplerian elements to a Cartesian state.

    Args:
        k: Osculating elements (mean sets must go through mean_to_osc first).

    Returns:
        CartesianState at t_s = 0.

    Raises:
        ValueError: If `k.kind` is not "osculating".
    """
    if k.kind != "osculating":
        raise ValueError("kep_to_cart requires osculating elements, got kind='mean'")
    mee = _kep_to_mee(k.a_km, k.e, k.i_rad, k.raan_rad, k.argp_rad, k.ta_rad)
    r, v = _mee_to_cart(mee)
    return CartesianState(r, v)


def kep_to_equinoctial(k: KeplerianElements) -> EquinoctialElements:
    """Classical -> modified equinoctial elements (kind is not tracked)."""
    mee = _kep_to_mee(k.a_km, k.e, k.i_rad, k.raan_rad, k.argp_rad, k.ta_rad)
    return EquinoctialElements(*(float(x) for x in mee))


def equinoctial_to_kep(eq: EquinoctialElements) -> KeplerianElements:
    """Modified equinoctial -> classical elements (osculating kind)."""
    a, e, i, raan, argp, ta = _mee_to_kep(
        np.array([eq.p_km, eq.f, eq.g, eq.h, eq.k, eq.L_rad])
    )
    return KeplerianElements(a, e, i, raan, argp, ta)


def cart_to_equinoctial(state: CartesianState) -> EquinoctialElements:
    """Cartesian -> modified equinoctial elements."""
    return EquinoctialElements(*(float(x) for x in _cart_to_mee(state.r_km, state.v_kms)))


def equinoctial_to_cart(eq: EquinoctialElements) -> CartesianState:
    """Modified equinoctial elements -> Cartesian state."""
    r, v = _mee_to_cart(np.array([eq.p_km, eq.f, eq.g, eq.h, eq.k, eq.L_rad]))
    return CartesianState(r, v)


# ── generalized equinoctial elements ─────────────────────────────────────────


def cart_to_geqoe(state: CartesianState, include_j2: bool = True) -> GEqOEState:
    """Cartesian -> generalized equinoctial elements.

    With include_j2=True the J2 potential is folded into the orbit energy and
    angular momentum, making nu invariant under J2-only motion. With
    include_j2=False the set degenerates to a classical equinoctial
    parameterization (useful when the force model itself has no J2).

    Args:
        state: Inertial state.
        include_j2: Fold the J2 potential into the generalized quantities.

    Returns:
        GEqOEState.

    Raises:
        ValueError: If the (generalized) orbit energy is not negative.
    """
    r = state.r_km
    v = state.v_kms
    rmag = float(np.linalg.norm(r))
    vsq = float(v @ v)
    U = j2_potential(r) if include_j2 else 0.0
    eps = 0.5 * vsq - _MU / rmag + U
    if eps >= 0.0:
        raise ValueError(f"generalized orbit energy must be negative, got {eps}")
    nu = (-2.0 * eps) ** 1.5 / _MU
    a = (_MU / nu**2) ** (1.0 / 3.0)

    hvec = np.cross(r, v)
    hmag = float(np.linalg.norm(hvec))
    hhat = hvec / hmag
    denom = 1.0 + hhat[2]
    if denom < 1e-12:
        raise ValueError("retrograde-equatorial orbit: elements singular")
    q1 = hhat[0] / denom
    q2 = -hhat[1] / denom

    # In-plane geometry: basis from (q1, q2) mirrors the equinoctial frame with
    # (h, k) -> (q2, q1).
    fhat, ghat, _ = _mee_frame(q2, q1)
    L = math.atan2(float(r @ ghat), float(r @ fhat))

    c = math.sqrt(hmag * hmag + 2.0 * rmag * rmag * U)
    ur = float(r @ v) / rmag
    g_cos_th = c * c / (_MU * rmag) - 1.0
    g_sin_th = c * ur / _MU
    p1 = g_cos_th * math.sin(L) - g_sin_th * math.cos(L)
    p2 = g_cos_th * math.cos(L) + g_sin_th * math.sin(L)

    gmag = math.hypot(g_cos_th, g_sin_th)
    if gmag < 1e-12:
        l_gen = wrap_two_pi(L)
    else:
        theta = math.atan2(g_sin_th, g_cos_th)
        g_sin_G = ur * rmag / math.sqrt(_MU * a)
        g_cos_G = 1.0 - rmag / a
        G = math.atan2(g_sin_G, g_cos_G)
        kepler_mean = G - g_sin_G
        l_gen = wrap_two_pi(L - theta + kepler_mean)
    return GEqOEState(nu, p1, p2, float(l_gen), q1, q2)


def geqoe_to_cart(ge: GEqOEState, include_j2: bool = True) -> CartesianState:
    """Generalized equinoctial elements -> Cartesian state (closed form).

    The generalized Kepler equation is solved by Newton iteration in the
    eccentric-longitude variable, which keeps every expression nonsingular for
    circular orbits.

    Args:
        ge: Element set.
        include_j2: Must match the flag used when building the elements.

    Returns:
        CartesianState at t_s = 0.

    Raises:
        ValueError: On non-elliptic or out-of-range element values.
    """
    nu, p1, p2, l_gen, q1, q2 = (
        ge.nu_rad_s,
        ge.p1,
        ge.p2,
        ge.l_gen_rad,
        ge.q1,
        ge.q2,
    )
    if nu <= 0.0:
        raise ValueError(f"nu must be positive, got {nu}")
    gsq = p1 * p1 + p2 * p2
    if gsq >= 1.0:
        raise ValueError(f"p1^2 + p2^2 must be < 1, got {gsq}")
    a = (_MU / nu**2) ** (1.0 / 3.0)

    # Generalized Kepler equation in eccentric longitude Lam:
    #   Lam - p2 sin(Lam) + p1 cos(Lam) = l_gen
    lam = float(l_gen)
    for _ in range(64):
        s, c = math.sin(lam), math.cos(lam)
        fval = lam - p2 * s + p1 * c - l_gen
        fp = 1.0 - p2 * c - p1 * s
        d = fval / fp
        lam -= d
        if abs(d) < 1e-15:
            break
    sl, cl = math.sin(lam), math.cos(lam)

    g_cos_G = p2 * cl + p1 * sl
    g_sin_G = p2 * sl - p1 * cl
    rmag = a * (1.0 - g_cos_G)
    eta = math.sqrt(1.0 - gsq)
    # Position direction via nonsingular eccentric-longitude expansion.
    r_cos_L = a * (eta * cl + (p2 * p2 * cl + p1 * p2 * sl) / (1.0 + eta) - p2)
    r_sin_L = a * (eta * sl + (p1 * p1 * sl + p1 * p2 * cl) / (1.0 + eta) - p1)
    L = math.atan2(r_sin_L, r_cos_L)

    fhat, ghat, _ = _mee_frame(q2, q1)
    cL, sL = math.cos(L), math.sin(L)
    rvec = rmag * (cL * fhat + sL * ghat)

    ur = math.sqrt(_MU * a) * g_sin_G / rmag
    csq = _MU * a * (1.0 - gsq)
    U = j2_potential(rvec) if include_j2 else 0.0
    h2 = csq - 2.0 * rmag * rmag * U
    if h2 <= 0.0:
        raise ValueError("angular momentum lost to potential term; elements invalid")
    hmag = math.sqrt(h2)
    rhat = rvec / rmag
    that = -sL * fhat + cL * ghat
    vvec = ur * rhat + (hmag / rmag) * that
    return CartesianState(rvec, vvec)


# ── J2 acceleration and Gauss rates in equinoctial variables ─────────────────


def _j2_accel_rtn_mee(
    p: float, f: float, g: float, h: float, k: float, L: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """J2 acceleration in RTN axes along an osculating orbit, vectorized in L."""
    L = np.asarray(L, dtype=float)
    cL, sL = np.cos(L), np.sin(L)
    w = 1.0 + f * cL + g * sL
    r = p / w
    s2 = 1.0 + h * h + k * k
    sinisinu = 2.0 * (h * sL - k * cL) / s2
    sinicosu = 2.0 * (h * cL + k * sL) / s2
    cosi = (1.0 - h * h - k * k) / s2
    C = 1.5 * _MU * _J2 * _RE**2 / r**4
    a_r = -C * (1.0 - 3.0 * sinisinu**2)
    a_t = -C * 2.0 * sinisinu * sinicosu
    a_n = -C * 2.0 * cosi * sinisinu
    return a_r, a_t, a_n


def _gve_rates_mee_lambda(
    p: float,
    f: float,
    g: float,
    h: float,
    k: float,
    L: np.ndarray,
    a_r: np.ndarray,
    a_t: np.ndarray,
    a_n: np.ndarray,
) -> np.ndarray:
    """Gauss variational rates for (p, f, g, h, k, lambda) under an RTN accel.

    The lambda row is only the perturbation part (the n = sqrt(mu/a^3) term is
    handled by the caller); the 1/e singularities of the classical domega and
    dM equations cancel into 1/(1+eta) factors.

    Returns:
        (6, len(L)) array of rates.
    """
    L = np.asarray(L, dtype=float)
    cL, sL = np.cos(L), np.sin(L)
    w = 1.0 + f * cL + g * sL
    r = p / w
    sqp = math.sqrt(p / _MU)
    hang = math.sqrt(_MU * p)
    eta = math.sqrt(max(1.0 - f * f - g * g, 0.0))
    hk = h * sL - k * cL
    s2 = 1.0 + h * h + k * k

    dp = 2.0 * p / w * sqp * a_t
    df = sqp * (sL * a_r + ((w + 1.0) * cL + f) / w * a_t - g * hk / w * a_n)
    dg = sqp * (-cL * a_r + ((w + 1.0) * sL + g) / w * a_t + f * hk / w * a_n)
    dh = sqp * s2 / (2.0 * w) * cL * a_n
    dk = sqp * s2 / (2.0 * w) * sL * a_n
    dlam = (
        -(p * (w - 1.0) / (1.0 + eta) + 2.0 * eta * r) * a_r
        + (p + r) * (f * sL - g * cL) / (1.0 + eta) * a_t
        + r * hk * a_n
    ) / hang
    return np.vstack((dp, df, dg, dh, dk, dlam))


# ── first-order J2 mean-element transformation ───────────────────────────────

_AVG_GRID_N = 2048  # uniform true-longitude grid for oscillation profiles


@dataclass(frozen=True)
class _AvgProfile:
    """Zero-time-mean J2 oscillation profiles over one orbit.

    delta[j](L) is the short-period offset of element j (p, f, g, h, k, lambda)
    at true longitude L; secular[j] is the orbit-averaged rate.
    """

    slow: np.ndarray
    grid_L: np.ndarray
    delta: np.ndarray
    secular: np.ndarray
    period_s: float

    def offsets(self, L: float | np.ndarray) -> np.ndarray:
        """Interpolate the six offset profiles at true longitude L."""
        Lw = np.mod(L, 2.0 * math.pi)
        out = np.empty((6,) + np.shape(Lw))
        for j in range(6):
            out[j] = np.interp(Lw, self.grid_L, self.delta[j])
        return out


def _build_avg_profile(slow: np.ndarray) -> _AvgProfile:
    """Quadrature of the J2 Gauss rates into oscillation profiles.

    Args:
        slow: (p, f, g, h, k) slow elements.

    Returns:
        _AvgProfile on a uniform [0, 2*pi] true-longitude grid.
    """
    p, f, g, h, k = (float(x) for x in slow)
    eta2 = 1.0 - f * f - g * g
    a = p / eta2
    n = math.sqrt(_MU / a**3)
    Lg = np.linspace(0.0, 2.0 * math.pi, _AVG_GRID_N + 1)
    cL, sL = np.cos(Lg), np.sin(Lg)
    w = 1.0 + f * cL + g * sL
    # dt/dL along the osculating two-body orbit.
    tau = 1.0 / (math.sqrt(_MU / p**3) * w * w)

    a_r, a_t, a_n = _j2_accel_rtn_mee(p, f, g, h, k, Lg)
    rates = _gve_rates_mee_lambda(p, f, g, h, k, Lg, a_r, a_t, a_n)

    period = float(np.trapezoid(tau, Lg))

    def _zero_mean_cumulative(rate_row: np.ndarray, sec: float) -> np.ndarray:
        integrand = (rate_row - sec) * tau
        prof = np.concatenate(
            ([0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(Lg)))
        )
        prof -= np.trapezoid(prof * tau, Lg) / period
        return prof

    secular = np.trapezoid(rates * tau, Lg, axis=1) / period
    delta = np.empty((6, Lg.size))
    for j in range(5):
        delta[j] = _zero_mean_cumulative(rates[j], secular[j])

    # The fast variable also feels the oscillation of the osculating mean
    # motion through a(p, f, g): dn = -(3/2)(n/a) da.
    da = delta[0] / eta2 + (2.0 * p / eta2**2) * (f * delta[1] + g * delta[2])
    dn = -1.5 * (n / a) * da
    lam_rate = rates[5] + dn
    sec_lam = float(np.trapezoid(lam_rate * tau, Lg) / period)
    delta[5] = _zero_mean_cumulative(lam_rate, sec_lam)
    secular[5] = sec_lam

    return _AvgProfile(np.asarray(slow, dtype=float).copy(), Lg, delta, secular, period)


_PROFILE_CACHE: list[_AvgProfile] = []
_PROFILE_CACHE_MAX = 16
_PROFILE_CACHE_RTOL = 1e-3


def _avg_profile(slow: np.ndarray) -> _AvgProfile:
    """Cached oscillation profile lookup keyed on the slow elements."""
    scale = np.array([max(abs(slow[0]), 1.0), 1.0, 1.0, 1.0, 1.0])
    for idx, prof in enumerate(_PROFILE_CACHE):
        if np.all(np.abs(prof.slow - slow) <= _PROFILE_CACHE_RTOL * scale):
            if idx != 0:
                _PROFILE_CACHE.insert(0, _PROFILE_CACHE.pop(idx))
            return prof
    prof = _build_avg_profile(slow)
    _PROFILE_CACHE.insert(0, prof)
    del _PROFILE_CACHE[_PROFILE_CACHE_MAX:]
    return prof


def _osc_to_mean_mee_lam(y_osc: np.ndarray) -> np.ndarray:
    """First-order mean elements from osculating (p, f, g, h, k, lambda)."""
    y = np.asarray(y_osc, dtype=float)
    prof = _avg_profile(y[:5])
    L = _mean_to_true_longitude(y[1], y[2], y[5])
    ybar = y - prof.offsets(L)
    ybar[5] = wrap_two_pi(ybar[5])
    return ybar


def _mean_to_osc_mee_lam(y_mean: np.ndarray) -> np.ndarray:
    """Exact functional inverse of the osc->mean map (fixed-point iteration)."""
    ybar = np.asarray(y_mean, dtype=float)
    y = ybar.copy()
    for _ in range(4):
        prof = _avg_profile(y[:5])
        L = _mean_to_true_longitude(y[1], y[2], y[5])
        y_new = ybar + prof.offsets(L)
        y_new[5] = wrap_two_pi(y_new[5])
        if np.max(np.abs(y_new - y)) < 1e-13 * max(1.0, abs(ybar[0])):
            y = y_new
            break
        y = y_new
    return y


def _kep_to_mee_lam(k: KeplerianElements) -> np.ndarray:
    mee = _kep_to_mee(k.a_km, k.e, k.i_rad, k.raan_rad, k.argp_rad, k.ta_rad)
    lam = _true_to_mean_longitude(mee[1], mee[2], mee[5])
    return np.array([mee[0], mee[1], mee[2], mee[3], mee[4], lam])


def _mee_lam_to_kep(y: np.ndarray, kind: str) -> KeplerianElements:
    L = _mean_to_true_longitude(y[1], y[2], y[5])
    a, e, i, raan, argp, ta = _mee_to_kep(
        np.array([y[0], y[1], y[2], y[3], y[4], L])
    )
    return KeplerianElements(a, e, i, raan, argp, ta, kind=kind)


def osc_to_mean(k: KeplerianElements) -> KeplerianElements:
    """Osculating -> mean elements (first-order J2-only averaging).

    The short-period J2 oscillation is removed by quadrature of the Gauss
    rates over one osculating orbit; the result is the orbit-averaged element
    set whose secular drift matches the first-order theory.

    Args:
        k: Osculating elements.

    Returns:
        KeplerianElements with kind="mean".

    Raises:
        ValueError: If `k` is already a mean set.
    """
    if k.kind != "osculating":
        raise ValueError("osc_to_mean requires osculating elements")
    ybar = _osc_to_mean_mee_lam(_kep_to_mee_lam(k))
    return _mee_lam_to_kep(ybar, "mean")


def mean_to_osc(k: KeplerianElements) -> KeplerianElements:
    """Mean -> osculating elements; exact inverse of osc_to_mean.

    Args:
        k: Mean elements.

    Returns:
        KeplerianElements with kind="osculating".

    Raises:
        ValueError: If `k` is already an osculating set.
    """
    if k.kind != "mean":
        raise ValueError("mean_to_osc requires mean elements")
    y = _mean_to_osc_mee_lam(_kep_to_mee_lam(k))
    return _mee_lam_to_kep(y, "osculating")


# ── mean-state helpers used by guidance ──────────────────────────────────────


def mean_mee_lam_from_cart(state: CartesianState) -> np.ndarray:
    """Mean (p, f, g, h, k, lambda) directly from a Cartesian state."""
    mee = _cart_to_mee(state.r_km, state.v_kms)
    lam = _true_to_mean_longitude(mee[1], mee[2], mee[5])
    return _osc_to_mean_mee_lam(np.array([*mee[:5], lam]))


def mean_argument_of_latitude(y_mean: np.ndarray) -> float:
    """Mean argument of latitude u = lambda_bar - raan_bar, wrapped to [0, 2pi)."""
    raan = math.atan2(y_mean[4], y_mean[3])
    return float(wrap_two_pi(y_mean[5] - raan))


def secular_raan_rate(a_km: float, e: float, i_rad: float) -> float:
    """First-order J2 secular node rate [rad/s] on mean elements."""
    p = a_km * (1.0 - e * e)
    n = math.sqrt(_MU / a_km**3)
    return -1.5 * _J2 * (_RE / p) ** 2 * n * math.cos(i_rad)
