"""Independent reference implementations used only by the test suite.

Everything here is deliberately written from textbook formulas and
scipy.integrate rather than reusing package code, so that each check pits two
independent routes against each other. Keep it that way: a package function
must never be imported to compute the quantity it is itself being tested on.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import solve_ivp

MU = 398600.4418  # km^3/s^2
RE = 6378.1363  # km
J2 = 1.08262668e-3
OMEGA_E = 7.2921159e-5  # rad/s


def j2_accel_oracle(r: np.ndarray) -> np.ndarray:
    """J2 perturbing acceleration [km/s^2], textbook Cartesian closed form."""
    x, y, z = r
    rm = math.sqrt(x * x + y * y + z * z)
    zr2 = (z / rm) ** 2
    c = -1.5 * MU * J2 * RE**2 / rm**4
    return c * np.array(
        [
            (1.0 - 5.0 * zr2) * x / rm,
            (1.0 - 5.0 * zr2) * y / rm,
            (3.0 - 5.0 * zr2) * z / rm,
        ]
    )


def harris_priester_oracle_1000km() -> tuple[float, float]:
    """Edge-of-table altitude and a sanity bracket for the 350 km density."""
    return 350.0, 1e-11


def _two_body_j2_rhs(t: float, y: np.ndarray) -> np.ndarray:
    r = y[:3]
    rm = np.linalg.norm(r)
    a = -MU * r / rm**3 + j2_accel_oracle(r)
    return np.concatenate((y[3:], a))


def propagate_j2_oracle(
    r0: np.ndarray, v0: np.ndarray, tf: float, rtol: float = 1e-12, atol: float = 1e-12
):
    """scipy propagation under two-body + J2; returns the solve_ivp solution."""
    return solve_ivp(
        _two_body_j2_rhs,
        (0.0, tf),
        np.concatenate((r0, v0)),
        rtol=rtol,
        atol=atol,
        dense_output=True,
        method="DOP853",
    )


def propagate_oracle_with_accel(
    r0: np.ndarray,
    v0: np.ndarray,
    tf: float,
    accel_fn,
    include_j2: bool = True,
    rtol: float = 1e-12,
    atol: float = 1e-12,
):
    """scipy propagation with an arbitrary extra inertial acceleration a(t, r, v)."""

    def rhs(t, y):
        r, v = y[:3], y[3:]
        rm = np.linalg.norm(r)
        a = -MU * r / rm**3
        if include_j2:
            a = a + j2_accel_oracle(r)
        a = a + accel_fn(t, r, v)
        return np.concatenate((v, a))

    return solve_ivp(
        rhs,
        (0.0, tf),
        np.concatenate((r0, v0)),
        rtol=rtol,
        atol=atol,
        dense_output=True,
        method="DOP853",
    )


def kepler_propagate_oracle(
    r0: np.ndarray, v0: np.ndarray, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic two-body propagation via Lagrange f and g (eccentric anomaly)."""
    r0 = np.asarray(r0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    r0m = float(np.linalg.norm(r0))
    v0m2 = float(v0 @ v0)
    alpha = 2.0 / r0m - v0m2 / MU  # 1/a
    if alpha <= 0.0:
        raise ValueError("oracle covers elliptic orbits only")
    a = 1.0 / alpha
    n = math.sqrt(MU / a**3)
    sigma0 = float(r0 @ v0) / math.sqrt(MU)
    M = n * dt
    # Solve the universal-eccentric Kepler equation for dE.
    dE = M
    for _ in range(64):
        sE, cE = math.sin(dE), math.cos(dE)
        F = dE - (1.0 - r0m / a) * sE - sigma0 / math.sqrt(a) * (1.0 - cE) - M
        Fp = 1.0 - (1.0 - r0m / a) * cE + sigma0 / math.sqrt(a) * sE
        d = F / Fp
        dE -= d
        if abs(d) < 1e-15:
            break
    sE, cE = math.sin(dE), math.cos(dE)
    rm = a + (r0m - a) * cE + sigma0 * math.sqrt(a) * sE
    f = 1.0 - a / r0m * (1.0 - cE)
    g = dt + math.sqrt(a**3 / MU) * (sE - dE)
    fdot = -math.sqrt(MU * a) / (rm * r0m) * sE
    gdot = 1.0 - a / rm * (1.0 - cE)
    return f * r0 + g * v0, fdot * r0 + gdot * v0


def _osc_elements_for_average(r: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Osculating (a, p, f, g, h, k) from a state — local textbook route."""
    rm = float(np.linalg.norm(r))
    hvec = np.cross(r, v)
    hm = float(np.linalg.norm(hvec))
    hhat = hvec / hm
    hq = -hhat[1] / (1.0 + hhat[2])
    kq = hhat[0] / (1.0 + hhat[2])
    p = hm * hm / MU
    evec = np.cross(v, hvec) / MU - r / rm
    s2 = 1.0 + hq * hq + kq * kq
    fhat = np.array([1.0 + hq * hq - kq * kq, 2.0 * hq * kq, -2.0 * kq]) / s2
    ghat = np.array([2.0 * hq * kq, 1.0 - hq * hq + kq * kq, 2.0 * hq]) / s2
    f = float(evec @ fhat)
    g = float(evec @ ghat)
    a = p / (1.0 - f * f - g * g)
    return np.array([a, p, f, g, hq, kq])


def orbit_average_oracle(
    r0: np.ndarray, v0: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Numerical time-average of osculating (a, p, f, g, h, k) over one orbit.

    The averaging window is one nodal period (ascending equator crossing to
    the next), located by events on a J2-only propagation, which makes the
    window error second order in J2. Because some elements drift secularly,
    the average corresponds to the mean set at the *window midpoint*; the
    midpoint state is returned alongside so callers compare like with like.

    Returns:
        (averages, r_mid, v_mid).
    """
    r0 = np.asarray(r0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    a0 = 1.0 / (2.0 / np.linalg.norm(r0) - (v0 @ v0) / MU)
    period = 2.0 * math.pi * math.sqrt(a0**3 / MU)

    def asc_node(t, y):
        return y[2]

    asc_node.direction = 1.0
    sol = solve_ivp(
        _two_body_j2_rhs,
        (0.0, 2.5 * period),
        np.concatenate((r0, v0)),
        rtol=1e-12,
        atol=1e-12,
        dense_output=True,
        method="DOP853",
        events=asc_node,
    )
    crossings = sol.t_events[0]
    if len(crossings) < 2:
        raise RuntimeError("did not find two ascending node crossings")
    t1, t2 = crossings[0], crossings[1]
    ts = np.linspace(t1, t2, 4001)
    vals = np.empty((len(ts), 6))
    for idx, t in enumerate(ts):
        y = sol.sol(t)
        vals[idx] = _osc_elements_for_average(y[:3], y[3:])
    avg = np.trapezoid(vals, ts, axis=0) / (t2 - t1)
    y_mid = sol.sol(0.5 * (t1 + t2))
    return avg, y_mid[:3], y_mid[3:]


def secular_rates_oracle(a: float, e: float, i: float) -> tuple[float, float]:
    """Textbook first-order J2 secular rates (raan_dot, argp_dot) [rad/s]."""
    p = a * (1.0 - e * e)
    n = math.sqrt(MU / a**3)
    fac = 1.5 * J2 * (RE / p) ** 2 * n
    raan_dot = -fac * math.cos(i)
    argp_dot = fac * (2.0 - 2.5 * math.sin(i) ** 2)
    return raan_dot, argp_dot


def fly_yaw_law_oracle(
    a0: float,
    i0: float,
    beta_of_t,
    i_dir: float,
    thrust_n: float,
    isp_s: float,
    m0: float,
    tf: float,
) -> tuple[float, float]:
    """Fly a yaw steering law through real two-body dynamics.

    Starts on a circular orbit and applies the commanded acceleration
    T/m(t) at yaw beta(t) from the local tangential direction, with the
    out-of-plane component flipped by argument-of-latitude hemisphere
    (sign(cos u) * i_dir). Returns the final osculating (a, i), which a
    correct transfer law should steer to its target orbit up to the
    per-revolution averaging ripple.
    """
    inc0 = i0
    raan = 0.3
    u0 = 0.1
    # circular start state at argument of latitude u0
    p_hat = np.array([math.cos(raan), math.sin(raan), 0.0])
    q_hat = np.array(
        [
            -math.cos(inc0) * math.sin(raan),
            math.cos(inc0) * math.cos(raan),
            math.sin(inc0),
        ]
    )
    v0 = math.sqrt(MU / a0)
    r_vec = a0 * (math.cos(u0) * p_hat + math.sin(u0) * q_hat)
    v_vec = v0 * (-math.sin(u0) * p_hat + math.cos(u0) * q_hat)
    mdot = thrust_n / (isp_s * 9.80665)

    def rhs(t, y):
        r, v, m = y[:3], y[3:6], y[6]
        rm = np.linalg.norm(r)
        h = np.cross(r, v)
        n_hat = h / np.linalg.norm(h)
        t_hat = np.cross(n_hat, r / rm)
        # argument of latitude from the node line of the instantaneous plane
        node = np.array([-n_hat[1], n_hat[0], 0.0])
        node /= np.linalg.norm(node)
        cos_u = float(r @ node) / rm
        beta = float(beta_of_t(t))
        f = thrust_n / m * 1e-3
        sign = math.copysign(1.0, cos_u) * i_dir if i_dir != 0.0 else 0.0
        acc = (
            -MU * r / rm**3
            + f * math.cos(beta) * t_hat
            + f * abs(math.sin(beta)) * sign * n_hat
        )
        return np.concatenate((v, acc, [-mdot]))

    sol = solve_ivp(
        rhs,
        (0.0, tf),
        np.concatenate((r_vec, v_vec, [m0])),
        rtol=1e-10,
        atol=1e-12,
        method="DOP853",
    )
    y = sol.y[:, -1]
    r, v = y[:3], y[3:6]
    a_end = 1.0 / (2.0 / np.linalg.norm(r) - float(v @ v) / MU)
    h = np.cross(r, v)
    i_end = math.acos(float(h[2]) / np.linalg.norm(h))
    return float(a_end), float(i_end)
