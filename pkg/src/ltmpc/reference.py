"""Closed-form low-thrust transfer references with drift-orbit node phasing.

Builds flyable references for near-circular low-thrust transfers. A transfer
is decomposed into thrust legs following the classical Edelbaum yaw law in
duty-averaged form, an optional coast on an intermediate drift orbit chosen
so that differential nodal precession absorbs a right-ascension offset, and a
terminal delta-v reserve that covers what the averaged model cannot (duty
gating granularity, drag, oblateness coupling).

The profile is sampled on a uniform node grid plus the exact thrust-switching
instants found by propagating the gated thrust forward in the full force
model; the convex tracking layer linearizes around it.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import rk
from .constants import DAY_S, G0_MS2, J2_EARTH, MU_EARTH_KM3_S2, R_EARTH_KM
from .coords import (
    CartesianState,
    EquinoctialElements,
    mean_argument_of_latitude,
    mean_mee_lam_from_cart,
    secular_raan_rate,
    wrap_pi,
)
from .dynamics import (
    ForceModel,
    SpacecraftConfig,
    eclipse_center_arg_lat,
    gate_boundary_distance,
    mass_flow_kg_s,
    natural_accel_scalar,
    sun_unit_vector,
)
from .tracker import delta_v_prime

__all__ = [
    "DriftOrbit",
    "Phase",
    "ReferenceGenerationError",
    "ReferenceTrajectory",
    "TransferTarget",
    "adjust_thrust_profile",
    "edelbaum_transfer",
    "generate_reference",
    "raan_drift_match",
]

_MU = MU_EARTH_KM3_S2
_TWO_PI = 2.0 * math.pi

REFERENCE_FORMAT = "ltmpc-reference-v1"

# Switching instants closer than this to an existing node are not inserted.
_NODE_DEDUP_S = 1e-6
# Inserted grid times this close to the span ends are dropped instead.
_END_KEEPOUT_S = 0.5


class ReferenceGenerationError(RuntimeError):
    """No flyable reference exists for the requested transfer."""


@dataclass(frozen=True)
class TransferTarget:
    """Mean-element transfer objective.

    Components set to None are free: they are neither steered toward during
    reference generation nor weighted by the terminal matching metric.

    Attributes:
        a_km: Target mean semi-major axis [km].
        i_rad: Target mean inclination [rad], or None to leave it free.
        raan_rad: Target mean RAAN [rad] at the reference epoch (the target
            node is propagated forward at its own secular rate), or None.
        mode: Shaping mode; only "fuel-optimal" is defined.
    """

    a_km: float
    i_rad: float | None = None
    raan_rad: float | None = None
    mode: str = "fuel-optimal"

    def __post_init__(self) -> None:
        if not self.a_km > 0.0:
            raise ValueError(f"a_km must be positive, got {self.a_km}")
        if self.mode != "fuel-optimal":
            raise ValueError(f"unknown transfer mode {self.mode!r}")


@dataclass(frozen=True)
class Phase:
    """One analytic arc of the reference: a thrust leg or a coast.

    Thrust legs follow the constant-per-rev yaw law in duty-averaged form
    (thrust acceleration scaled by the reference duty cycle, yaw magnitude
    evolving with the accumulated delta-v); coasts hold the orbit apart from
    secular node drift, which is tracked separately.
    """

    t0_s: float
    t1_s: float
    thrusting: bool
    a0_km: float
    i0_rad: float
    a1_km: float
    i1_rad: float
    v0_kms: float
    beta0_rad: float
    dv_leg_ms: float
    dv_base_ms: float
    m0_kg: float
    i_dir: float
    mdot_kg_s: float
    ve_ms: float

    @property
    def duration_s(self) -> float:
        return self.t1_s - self.t0_s


@dataclass(frozen=True)
class DriftOrbit:
    """Intermediate circular orbit whose nodal precession closes a RAAN gap."""

    a_km: float
    i_rad: float
    wait_s: float
    dv_total_ms: float
    tof_total_s: float


# ── closed-form yaw-law kinematics ───────────────────────────────────────────


def _yaw_chord_dv_kms(v0_kms, v1_kms, di_rad):
    """Delta-v of the circle-to-circle yaw-law transfer [km/s] (vectorized)."""
    phi = 0.5 * math.pi * np.abs(di_rad)
    d2 = v0_kms * v0_kms - 2.0 * v0_kms * v1_kms * np.cos(phi) + v1_kms * v1_kms
    return np.sqrt(np.maximum(d2, 0.0))


def _yaw_beta0(v0_kms, v1_kms, di_rad):
    """Initial yaw magnitude of the transfer law [rad] (vectorized)."""
    phi = 0.5 * math.pi * np.abs(di_rad)
    return np.arctan2(np.sin(phi), v0_kms / v1_kms - np.cos(phi))


def _leg_profile(tau_s, v0_kms, beta0_rad, m0_kg, mdot_kg_s, ve_ms, i0_rad, i_dir):
    """Thrust-leg histories at elapsed times tau_s (broadcasting).

    Returns:
        (a_km, i_rad, beta_rad, dv_ms, m_kg) arrays broadcast over the inputs.
        Yaw is a magnitude in [0, pi]; pure semi-major-axis legs hold 0
        (raising) or pi (lowering) throughout.
    """
    tau = np.asarray(tau_s, dtype=float)
    m = np.maximum(m0_kg - mdot_kg_s * tau, 1e-9)
    dv_ms = ve_ms * np.log(m0_kg / m)
    dvk = dv_ms * 1e-3
    sb = np.sin(beta0_rad)
    cb = np.cos(beta0_rad)
    vpar = v0_kms * cb - dvk
    vperp = v0_kms * sb
    vmag2 = np.maximum(vpar * vpar + vperp * vperp, 1e-12)
    beta = np.arctan2(vperp, vpar)
    a = _MU / vmag2
    inc = i0_rad + i_dir * (2.0 / math.pi) * (beta - beta0_rad)
    return a, inc, beta, dv_ms, m


def edelbaum_transfer(
    a0_km: float,
    i0_rad: float,
    af_km: float,
    if_rad: float,
    sc: SpacecraftConfig,
    dc_ref: float,
    m0_kg: float | None = None,
):
    """Closed-form circular-to-circular low-thrust transfer.

    Uses the classical constant-per-rev yaw law between circular orbits, with
    the thrust acceleration duty-averaged by dc_ref and propellant drawn at
    the matching mean flow rate, so the time of flight equals
    dv * m_logmean / (thrust * dc_ref).

    Args:
        a0_km/i0_rad: Initial circular orbit.
        af_km/if_rad: Final circular orbit.
        sc: Vehicle constants (thrust, Isp, initial mass).
        dc_ref: Reference duty cycle in (0, 1].
        m0_kg: Mass at the start of the leg; defaults to sc.mass_kg.

    Returns:
        (dv_ms, tof_s, beta0_rad, beta_of_t): total delta-v [m/s], time of
        flight [s], initial yaw magnitude [rad], and a vectorized map from
        elapsed seconds to the in-leg yaw magnitude [rad].

    Raises:
        ValueError: Non-physical orbit sizes or duty cycle.
        ReferenceGenerationError: Inclination change above 90 deg, where the
            yaw law has no solution, or zero available thrust.
    """
    if not (a0_km > 0.0 and af_km > 0.0):
        raise ValueError("semi-major axes must be positive")
    if not 0.0 < dc_ref <= 1.0:
        raise ValueError(f"dc_ref must be in (0, 1], got {dc_ref}")
    di = if_rad - i0_rad
    if abs(di) > 0.5 * math.pi + 1e-12:
        raise ReferenceGenerationError(
            f"inclination change {math.degrees(abs(di)):.2f} deg exceeds 90 deg"
        )
    m0 = sc.mass_kg if m0_kg is None else m0_kg
    if m0 <= 0.0:
        raise ValueError(f"m0_kg must be positive, got {m0}")
    v0 = math.sqrt(_MU / a0_km)
    vf = math.sqrt(_MU / af_km)
    dv_ms = 1e3 * float(_yaw_chord_dv_kms(v0, vf, di))
    if dv_ms < 1e-12:
        return 0.0, 0.0, 0.0, lambda tau: np.zeros_like(np.asarray(tau, dtype=float))
    mdot = dc_ref * mass_flow_kg_s(sc.thrust_n, sc.isp_s)
    if mdot <= 0.0:
        raise ReferenceGenerationError("transfer requires nonzero thrust")
    beta0 = float(_yaw_beta0(v0, vf, di))
    ve = sc.isp_s * G0_MS2
    m1 = m0 * math.exp(-dv_ms / ve)
    tof_s = (m0 - m1) / mdot
    i_dir = 0.0 if di == 0.0 else math.copysign(1.0, di)

    def beta_of_t(tau_s):
        tau = np.clip(np.asarray(tau_s, dtype=float), 0.0, tof_s)
        return _leg_profile(tau, v0, beta0, m0, mdot, ve, i0_rad, i_dir)[2]

    return dv_ms, tof_s, beta0, beta_of_t


# ── drift-orbit search ───────────────────────────────────────────────────────


def _nodal_rate(a_km, i_rad):
    """Secular J2 node rate for circular orbits [rad/s] (vectorized)."""
    a = np.asarray(a_km, dtype=float)
    return (
        -1.5 * J2_EARTH * R_EARTH_KM**2 * math.sqrt(_MU) * a**-3.5 * np.cos(i_rad)
    )


_SIMPSON_W = np.array([1.0, 4.0, 2.0, 4.0, 2.0, 4.0, 2.0, 4.0, 1.0])
_SIMPSON_XI = np.linspace(0.0, 1.0, 9)


def _colvec(x):
    """Shape per-candidate arrays to broadcast against (n, 9) sample grids."""
    arr = np.asarray(x, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


def _leg_node_integral(tof_s, v0_kms, beta0, m0_kg, mdot, ve_ms, i0_rad, i_dir):
    """Integral of the nodal rate over one leg, per candidate [(n,) arrays]."""
    tau = tof_s[:, None] * _SIMPSON_XI[None, :]
    a, inc, _, _, _ = _leg_profile(
        tau, _colvec(v0_kms), _colvec(beta0), _colvec(m0_kg),
        mdot, ve_ms, _colvec(i0_rad), _colvec(i_dir),
    )
    return tof_s * (_nodal_rate(a, inc) @ _SIMPSON_W) / 24.0


def _drift_metrics(
    a_d, i_d, a0, i0, raan0, af, if_, raanf, m0, mdot, ve
):
    """Per-candidate transfer metrics for drift orbits (a_d, i_d).

    Returns:
        (dv_ms, tof_legs_s, wait_s, guard_rad): total leg delta-v, combined
        leg time of flight, required coast duration (inf when the node gap
        cannot close), and the phase-wrap separation of the closure condition.
    """
    v0 = math.sqrt(_MU / a0)
    vd = np.sqrt(_MU / a_d)
    vf = math.sqrt(_MU / af)
    di1 = np.abs(i_d - i0)
    di2 = np.abs(if_ - i_d)
    dir1 = np.sign(i_d - i0)
    dir2 = np.sign(if_ - i_d)
    dv1 = 1e3 * _yaw_chord_dv_kms(v0, vd, di1)
    dv2 = 1e3 * _yaw_chord_dv_kms(vd, vf, di2)
    b01 = _yaw_beta0(v0, vd, di1)
    b02 = _yaw_beta0(vd, vf, di2)
    m1 = m0 * np.exp(-dv1 / ve)
    m2 = m1 * np.exp(-dv2 / ve)
    tof1 = (m0 - m1) / mdot
    tof2 = (m1 - m2) / mdot
    i_leg1 = _leg_node_integral(tof1, v0, b01, m0, mdot, ve, i0, dir1)
    i_leg2 = _leg_node_integral(tof2, vd, b02, m1, mdot, ve, i_d, dir2)
    rate_d = _nodal_rate(a_d, i_d)
    rate_f = float(_nodal_rate(af, if_))
    gap = (raanf - raan0) + rate_f * (tof1 + tof2) - i_leg1 - i_leg2
    delta = rate_d - rate_f
    m_pos = np.mod(gap, _TWO_PI)
    with np.errstate(divide="ignore", invalid="ignore"):
        wait = np.where(
            delta > 1e-15,
            m_pos / delta,
            np.where(delta < -1e-15, (m_pos - _TWO_PI) / delta, np.inf),
        )
    # Phase separation from the schedule discontinuity: the wait is a sawtooth
    # in the closure phase, continuous at zero but jumping by a full wrap
    # period on the far side. Candidates whose predicted wait sits within
    # guard of that cliff are fragile (a tiny model change collapses the wait
    # to ~zero), so selection avoids them. Near-zero phases are safe.
    signed_pos = np.where(delta >= 0.0, m_pos, _TWO_PI - m_pos)
    guard = _TWO_PI - signed_pos
    return dv1 + dv2, tof1 + tof2, wait, guard, delta


def raan_drift_match(
    a0_km: float,
    i0_rad: float,
    raan0_rad: float,
    target_a_km: float,
    target_i_rad: float,
    target_raan_rad: float,
    m0_kg: float,
    sc: SpacecraftConfig,
    dc_ref: float,
    *,
    alt_bounds_km: tuple[float, float] = (250.0, 800.0),
    grid_da_km: float = 2.0,
    grid_di_rad: float = math.radians(0.02),
    guard_rad: float = 0.02,
    refine_levels: int = 8,
) -> DriftOrbit:
    """Grid-plus-pattern search for the drift orbit closing a RAAN gap.

    The search minimizes total leg delta-v, breaking near-ties (binned at
    0.01 m/s) by total time of flight (binned at one minute) and then by
    drift semi-major axis, so the selection is deterministic under float
    noise. Candidates whose closure phase sits within guard_rad of the
    schedule discontinuity (where the predicted wait collapses from a full
    wrap period to zero) are rejected as fragile unless nothing else closes,
    and refinement moves never jump to a different sheet of the wait
    sawtooth.

    Raises:
        ReferenceGenerationError: When no candidate drift orbit can close
            the node gap in finite time.
    """
    ve = sc.isp_s * G0_MS2
    mdot = dc_ref * mass_flow_kg_s(sc.thrust_n, sc.isp_s)
    if mdot <= 0.0:
        raise ReferenceGenerationError("drift matching requires nonzero thrust")
    a_lo = R_EARTH_KM + alt_bounds_km[0]
    a_hi = R_EARTH_KM + alt_bounds_km[1]
    i_lo = min(i0_rad, target_i_rad) - math.radians(1.0)
    i_hi = max(i0_rad, target_i_rad) + math.radians(1.0)
    a_grid = np.arange(a_lo, a_hi + 1e-9, grid_da_km)
    i_grid = np.arange(i_lo, i_hi + 1e-12, grid_di_rad)
    aa, ii = np.meshgrid(a_grid, i_grid, indexing="ij")
    aa = aa.ravel()
    ii = ii.ravel()

    dv, tof_legs, wait, guard, _ = _drift_metrics(
        aa, ii, a0_km, i0_rad, raan0_rad, target_a_km, target_i_rad,
        target_raan_rad, m0_kg, mdot, ve,
    )
    feasible = np.isfinite(wait) & (wait >= 0.0)
    if not feasible.any():
        raise ReferenceGenerationError(
            "no drift orbit in the altitude band can close the node gap"
        )
    ok = feasible & (guard >= guard_rad)
    guard_req = guard_rad
    if not ok.any():
        ok = feasible
        guard_req = 0.0
    idx = np.flatnonzero(ok)
    dv_key = np.round(dv[idx] * 100.0).astype(np.int64)
    tof_key = np.round((tof_legs[idx] + wait[idx]) / 60.0).astype(np.int64)
    best = idx[np.lexsort((aa[idx], tof_key, dv_key))[0]]

    def metric(a_c: float, i_c: float, wait_prev: float | None):
        if not (a_lo <= a_c <= a_hi and i_lo <= i_c <= i_hi):
            return None
        dvc, tofc, wc, gc, dl = _drift_metrics(
            np.array([a_c]), np.array([i_c]), a0_km, i0_rad, raan0_rad,
            target_a_km, target_i_rad, target_raan_rad, m0_kg, mdot, ve,
        )
        if not np.isfinite(wc[0]) or wc[0] < 0.0 or gc[0] < guard_req:
            return None
        if wait_prev is not None and abs(dl[0]) > 1e-15:
            # Refinement stays on its sheet of the wait sawtooth.
            if abs(float(wc[0]) - wait_prev) > math.pi / abs(float(dl[0])):
                return None
        return float(dvc[0]), float(tofc[0] + wc[0]), float(wc[0])

    a_cur = float(aa[best])
    i_cur = float(ii[best])
    cur = metric(a_cur, i_cur, None)
    if cur is None:  # pragma: no cover - grid winner always re-evaluates
        raise ReferenceGenerationError("drift-orbit selection failed to re-evaluate")
    step_a = grid_da_km
    step_i = grid_di_rad
    for _ in range(refine_levels):
        for _ in range(50):
            moved = False
            for da, di in ((step_a, 0.0), (-step_a, 0.0), (0.0, step_i), (0.0, -step_i)):
                cand = metric(a_cur + da, i_cur + di, cur[2])
                if cand is None:
                    continue
                if (cand[0], cand[1], a_cur + da) < (cur[0], cur[1], a_cur):
                    a_cur += da
                    i_cur += di
                    cur = cand
                    moved = True
                    break
            if not moved:
                break
        step_a *= 0.5
        step_i *= 0.5
    return DriftOrbit(
        a_km=a_cur,
        i_rad=i_cur,
        wait_s=cur[2],
        dv_total_ms=cur[0],
        tof_total_s=cur[1],
    )


# ── sampled reference profile ────────────────────────────────────────────────


@dataclass(eq=False)
class ReferenceTrajectory:
    """Sampled reference profile for the tracking optimizer.

    All node arrays share the grid t_s (elapsed seconds from epoch_jd); the
    grid is uniform at one initial-period/nodes_per_orbit spacing with the
    exact switching instants inserted. Yaw beta_rad is stored as a magnitude
    in [0, pi]; its out-of-plane sign alternates by argument-of-latitude
    hemisphere at realization time. f_t_kms2 is the instantaneous thrust
    acceleration available along the profile (zero while coasting), evaluated
    at the reserve-adjusted mass.
    """

    t_s: np.ndarray
    f_t_kms2: np.ndarray
    beta_rad: np.ndarray
    a_km: np.ndarray
    i_rad: np.ndarray
    raan_rad: np.ndarray
    dv_cum_ms: np.ndarray
    mass_kg: np.ndarray
    thrust_on: np.ndarray
    dv_total_ms: float
    tof_days: float
    dc_ref: float
    epoch_jd: float
    r0_km: np.ndarray
    v0_kms: np.ndarray
    target: TransferTarget
    phases: tuple[Phase, ...]
    switch_t_s: np.ndarray
    dv_reserve_ms: float = 0.0

    def __post_init__(self) -> None:
        for name in (
            "t_s", "f_t_kms2", "beta_rad", "a_km", "i_rad", "raan_rad",
            "dv_cum_ms", "mass_kg", "r0_km", "v0_kms", "switch_t_s",
        ):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.thrust_on = np.asarray(self.thrust_on, dtype=bool)
        n = self.t_s.size
        for name in (
            "f_t_kms2", "beta_rad", "a_km", "i_rad", "raan_rad",
            "dv_cum_ms", "mass_kg", "thrust_on",
        ):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must match the node grid shape ({n},)")
        if n == 0:
            raise ValueError("reference needs at least one node")
        if n > 1 and not np.all(np.diff(self.t_s) > 0.0):
            raise ValueError("node times must be strictly increasing")
        if np.any(self.f_t_kms2 < 0.0):
            raise ValueError("thrust acceleration must be nonnegative")
        if np.any(self.mass_kg <= 0.0):
            raise ValueError("mass profile must stay positive")
        if not 0.0 < self.dc_ref <= 1.0:
            raise ValueError(f"dc_ref must be in (0, 1], got {self.dc_ref}")

    @property
    def n_nodes(self) -> int:
        return int(self.t_s.size)

    @property
    def tf_s(self) -> float:
        return float(self.t_s[-1])

    def _interp(self, t_s, values):
        return np.interp(np.asarray(t_s, dtype=float), self.t_s, values)

    def f_at(self, t_s):
        """Thrust acceleration magnitude at elapsed time(s) [km/s^2]."""
        return self._interp(t_s, self.f_t_kms2)

    def beta_at(self, t_s):
        """Yaw magnitude at elapsed time(s) [rad]."""
        return self._interp(t_s, self.beta_rad)

    def a_at(self, t_s):
        return self._interp(t_s, self.a_km)

    def i_at(self, t_s):
        return self._interp(t_s, self.i_rad)

    def raan_at(self, t_s):
        return self._interp(t_s, self.raan_rad)

    def dv_cum_at(self, t_s):
        """Cumulative (reserve-adjusted) delta-v at elapsed time(s) [m/s]."""
        return self._interp(t_s, self.dv_cum_ms)

    def mass_at(self, t_s):
        return self._interp(t_s, self.mass_kg)

    def phase_at(self, t_s: float) -> Phase | None:
        """Containing phase of an elapsed time, or None outside all phases."""
        if not self.phases:
            return None
        starts = [ph.t0_s for ph in self.phases]
        j = bisect.bisect_right(starts, t_s) - 1
        j = max(j, 0)
        ph = self.phases[j]
        if t_s > ph.t1_s + 1e-9 or t_s < self.phases[0].t0_s - 1e-9:
            return None
        return ph

    def target_elements_at(self, t_s) -> EquinoctialElements:
        """Circular mean-element target sampled from the profile histories."""
        a = float(self.a_at(t_s))
        inc = float(self.i_at(t_s))
        raan = float(self.raan_at(t_s))
        tt = math.tan(0.5 * inc)
        return EquinoctialElements(
            p_km=a, f=0.0, g=0.0,
            h=tt * math.cos(raan), k=tt * math.sin(raan), L_rad=0.0,
        )

    # ── serialization ────────────────────────────────────────────────────────

    def to_dict(self) -> dict:
        """JSON-serializable representation (round-trips via from_dict)."""
        return {
            "format": REFERENCE_FORMAT,
            "dc_ref": self.dc_ref,
            "dv_total_ms": self.dv_total_ms,
            "dv_reserve_ms": self.dv_reserve_ms,
            "tof_days": self.tof_days,
            "epoch_jd": self.epoch_jd,
            "r0_km": self.r0_km.tolist(),
            "v0_kms": self.v0_kms.tolist(),
            "target": {
                "a_km": self.target.a_km,
                "i_rad": self.target.i_rad,
                "raan_rad": self.target.raan_rad,
                "mode": self.target.mode,
            },
            "phases": [
                {
                    "t0_s": ph.t0_s, "t1_s": ph.t1_s, "thrusting": ph.thrusting,
                    "a0_km": ph.a0_km, "i0_rad": ph.i0_rad,
                    "a1_km": ph.a1_km, "i1_rad": ph.i1_rad,
                    "v0_kms": ph.v0_kms, "beta0_rad": ph.beta0_rad,
                    "dv_leg_ms": ph.dv_leg_ms, "dv_base_ms": ph.dv_base_ms,
                    "m0_kg": ph.m0_kg, "i_dir": ph.i_dir,
                    "mdot_kg_s": ph.mdot_kg_s, "ve_ms": ph.ve_ms,
                }
                for ph in self.phases
            ],
            "switch_t_s": self.switch_t_s.tolist(),
            "nodes": {
                "t_s": self.t_s.tolist(),
                "f_t_kms2": self.f_t_kms2.tolist(),
                "beta_rad": self.beta_rad.tolist(),
                "a_km": self.a_km.tolist(),
                "i_rad": self.i_rad.tolist(),
                "raan_rad": self.raan_rad.tolist(),
                "dv_cum_ms": self.dv_cum_ms.tolist(),
                "mass_kg": self.mass_kg.tolist(),
                "thrust_on": [int(x) for x in self.thrust_on],
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceTrajectory":
        if d.get("format") != REFERENCE_FORMAT:
            raise ValueError(f"unsupported reference format {d.get('format')!r}")
        tgt = d["target"]
        nodes = d["nodes"]
        return cls(
            t_s=nodes["t_s"],
            f_t_kms2=nodes["f_t_kms2"],
            beta_rad=nodes["beta_rad"],
            a_km=nodes["a_km"],
            i_rad=nodes["i_rad"],
            raan_rad=nodes["raan_rad"],
            dv_cum_ms=nodes["dv_cum_ms"],
            mass_kg=nodes["mass_kg"],
            thrust_on=nodes["thrust_on"],
            dv_total_ms=d["dv_total_ms"],
            tof_days=d["tof_days"],
            dc_ref=d["dc_ref"],
            epoch_jd=d["epoch_jd"],
            r0_km=d["r0_km"],
            v0_kms=d["v0_kms"],
            target=TransferTarget(
                a_km=tgt["a_km"], i_rad=tgt["i_rad"],
                raan_rad=tgt["raan_rad"], mode=tgt["mode"],
            ),
            phases=tuple(Phase(**ph) for ph in d["phases"]),
            switch_t_s=d["switch_t_s"],
            dv_reserve_ms=d.get("dv_reserve_ms", 0.0),
        )

    def save_json(self, path: str | Path) -> None:
        """Write the profile as deterministic (sorted, compact) JSON."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        Path(path).write_text(text + "\n")

    @classmethod
    def load_json(cls, path: str | Path) -> "ReferenceTrajectory":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ── grid assembly ────────────────────────────────────────────────────────────


def _merge_times(t_grid: np.ndarray, extra) -> np.ndarray:
    """Insert extra times into a sorted grid, deduplicating near-coincident
    entries and keeping the span ends exact."""
    t = [float(x) for x in t_grid]
    for s in sorted({float(x) for x in extra}):
        if s <= t[0] + _END_KEEPOUT_S or s >= t[-1] - _END_KEEPOUT_S:
            continue
        j = bisect.bisect_left(t, s)
        if (j > 0 and s - t[j - 1] < _NODE_DEDUP_S) or (
            j < len(t) and t[j] - s < _NODE_DEDUP_S
        ):
            continue
        t.insert(j, s)
    return np.asarray(t)


def _profile_on_grid(phases: tuple[Phase, ...], t: np.ndarray, raan0_rad: float):
    """Closed-form profile histories on an arbitrary node grid.

    Returns:
        (a_km, i_rad, beta_rad, dv_ms, thrust_on, raan_rad) node arrays; the
        RAAN history integrates the secular node rate along the profile.
    """
    n = t.size
    a = np.empty(n)
    inc = np.empty(n)
    beta = np.zeros(n)
    dv = np.zeros(n)
    on = np.zeros(n, dtype=bool)
    starts = np.array([ph.t0_s for ph in phases])
    idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(phases) - 1)
    for j, ph in enumerate(phases):
        sel = idx == j
        if not sel.any():
            continue
        tau = np.clip(t[sel] - ph.t0_s, 0.0, ph.duration_s)
        if ph.thrusting:
            ak, ik, bk, dvk, _ = _leg_profile(
                tau, ph.v0_kms, ph.beta0_rad, ph.m0_kg,
                ph.mdot_kg_s, ph.ve_ms, ph.i0_rad, ph.i_dir,
            )
            a[sel] = ak
            inc[sel] = ik
            beta[sel] = bk
            dv[sel] = ph.dv_base_ms + dvk
            on[sel] = True
        else:
            a[sel] = ph.a0_km
            inc[sel] = ph.i0_rad
            dv[sel] = ph.dv_base_ms
    raan = raan0_rad + cumulative_trapezoid(_nodal_rate(a, inc), t, initial=0.0)
    return a, inc, beta, dv, on, raan


def _assemble(
    t: np.ndarray,
    phases: tuple[Phase, ...],
    raan0_rad: float,
    sc: SpacecraftConfig,
    state0: CartesianState,
    m0_kg: float,
    target: TransferTarget,
    dc_ref: float,
    epoch_jd: float,
    switch_t_s,
    dv_reserve_ms: float,
) -> ReferenceTrajectory:
    """Build the sampled profile (with its delta-v reserve ramp) on a grid."""
    a, inc, beta, dv, on, raan = _profile_on_grid(phases, t, raan0_rad)
    tf = float(t[-1])
    ve = sc.isp_s * G0_MS2
    if dv_reserve_ms > 0.0 and tf > 0.0:
        dv = dv + (t / tf) * dv_reserve_ms
    mass = m0_kg * np.exp(-dv / ve)
    f_t = np.where(on, sc.thrust_n / mass * 1e-3, 0.0)
    return ReferenceTrajectory(
        t_s=t,
        f_t_kms2=f_t,
        beta_rad=beta,
        a_km=a,
        i_rad=inc,
        raan_rad=raan,
        dv_cum_ms=dv,
        mass_kg=mass,
        thrust_on=on,
        dv_total_ms=float(dv[-1]),
        tof_days=tf / DAY_S,
        dc_ref=dc_ref,
        epoch_jd=epoch_jd,
        r0_km=state0.r_km,
        v0_kms=state0.v_kms,
        target=target,
        phases=phases,
        switch_t_s=np.asarray(sorted(switch_t_s), dtype=float),
        dv_reserve_ms=dv_reserve_ms,
    )


# ── forward propagation of the gated reference thrust ───────────────────────


def _natural_rhs(sc: SpacecraftConfig, fm: ForceModel):
    cdam = sc.drag_coeff * sc.drag_area_m2

    def rhs(t, y):
        rx, ry, rz, vx, vy, vz, m = y.tolist()
        ax, ay, az = natural_accel_scalar(rx, ry, rz, vx, vy, vz, cdam / m, fm)
        return np.array([vx, vy, vz, ax, ay, az, 0.0])

    return rhs


def _interp1_factory(t_grid, v_grid):
    """Scalar clamped linear interpolation over a sorted table."""
    tg = list(t_grid)
    vg = list(v_grid)
    t_lo, t_hi = tg[0], tg[-1]

    def interp(t: float) -> float:
        if t <= t_lo:
            return vg[0]
        if t >= t_hi:
            return vg[-1]
        i = bisect.bisect_right(tg, t) - 1
        t0, t1 = tg[i], tg[i + 1]
        return vg[i] + (vg[i + 1] - vg[i]) * (t - t0) / (t1 - t0)

    return interp


def _thrust_rhs(sc, fm, sign: float, ref: "ReferenceTrajectory", follow_profile: bool):
    """RHS with the reference yaw realized while the gate is open.

    Thrust magnitude is the physical T/m, or the declared profile f_t(t) when
    follow_profile is set (the profile-consumer's view of the reference).
    """
    thrust_n = sc.thrust_n
    flow = mass_flow_kg_s(sc.thrust_n, sc.isp_s)
    cdam = sc.drag_coeff * sc.drag_area_m2
    beta_of = _interp1_factory(ref.t_s, ref.beta_rad)
    f_of = _interp1_factory(ref.t_s, ref.f_t_kms2) if follow_profile else None

    def rhs(t, y):
        rx, ry, rz, vx, vy, vz, m = y.tolist()
        ax, ay, az = natural_accel_scalar(rx, ry, rz, vx, vy, vz, cdam / m, fm)
        beta = beta_of(t)
        # in-plane/out-of-plane split in the local orbital frame
        hx = ry * vz - rz * vy
        hy = rz * vx - rx * vz
        hz = rx * vy - ry * vx
        hn = math.sqrt(hx * hx + hy * hy + hz * hz)
        nx, ny, nz = hx / hn, hy / hn, hz / hn
        rn = math.sqrt(rx * rx + ry * ry + rz * rz)
        ux, uy, uz = rx / rn, ry / rn, rz / rn
        tx = ny * uz - nz * uy
        ty = nz * ux - nx * uz
        tz = nx * uy - ny * ux
        fmag = f_of(t) if f_of is not None else thrust_n / m * 1e-3
        ct = fmag * math.cos(beta)
        cn = fmag * sign * math.sin(beta)
        return np.array(
            [
                vx,
                vy,
                vz,
                ax + ct * tx + cn * nx,
                ay + ct * ty + cn * ny,
                az + ct * tz + cn * nz,
                -flow,
            ]
        )

    return rhs


def _arc_gate_linearization(t_s: float, y: np.ndarray, epoch_jd: float):
    """Linear-in-time gate geometry valid over one thrust/coast arc.

    Returns (u0, udot, c0, cdot): mean argument of latitude and its secular
    rate, eclipse-center latitude and its drift rate (sun motion with the
    orbit plane frozen; plane precession over a sub-orbit arc shifts switch
    times well below the grid's resolution).
    """
    ym = mean_mee_lam_from_cart(CartesianState(y[:3].copy(), y[3:6].copy()))
    u0 = mean_argument_of_latitude(ym)
    p, f, g, h, k = (float(ym[i]) for i in range(5))
    e2 = f * f + g * g
    a = p / (1.0 - e2)
    n = math.sqrt(_MU / a**3)
    hk2 = h * h + k * k
    cos_i = (1.0 - hk2) / (1.0 + hk2)
    sin2_i = 1.0 - cos_i * cos_i
    j2f = 1.5 * J2_EARTH * (R_EARTH_KM / p) ** 2
    udot = n * (
        1.0
        + j2f * (math.sqrt(1.0 - e2) * (1.0 - 1.5 * sin2_i) + (2.0 - 2.5 * sin2_i))
    )
    inc = 2.0 * math.atan(math.sqrt(hk2))
    raan = math.atan2(k, h)
    c0 = eclipse_center_arg_lat(raan, inc, sun_unit_vector(epoch_jd + t_s / DAY_S))
    c1 = eclipse_center_arg_lat(
        raan, inc, sun_unit_vector(epoch_jd + (t_s + 600.0) / DAY_S)
    )
    cdot = wrap_pi(c1 - c0) / 600.0
    return u0, udot, c0, cdot


def _beta_sign(u_rad: float, i_dir: float) -> float:
    """Out-of-plane steering sign by argument-of-latitude hemisphere."""
    s = 1.0 if math.cos(u_rad) >= 0.0 else -1.0
    return s * (i_dir if i_dir != 0.0 else 1.0)


def _forward_propagate_reference(
    ref: ReferenceTrajectory,
    sc: SpacecraftConfig,
    fm: ForceModel,
    rtol: float,
    atol: float,
    follow_profile: bool = False,
):
    """Propagate the duty-gated reference thrust through the full force model.

    The thrust legs fire whenever the duty gate (half-width (pi/2)(1 - dc_ref)
    around the eclipse axis, on mean argument of latitude) is open, with the
    out-of-plane component flipping sign by hemisphere. Gate toggles and sign
    flips are located by event detection. Thrust magnitude is the physical
    T/m, or the declared f_t(t) profile when follow_profile is set.

    Returns:
        (end_state, end_mass_kg, switch_times): the final Cartesian state,
        final mass, and the list of gate/steering switching instants [s].
    """
    y = np.concatenate([ref.r0_km, ref.v0_kms, [float(ref.mass_kg[0])]])
    t = 0.0
    switches: list[float] = []
    gate_active = ref.dc_ref < 1.0 - 1e-12
    epoch = ref.epoch_jd
    dc = ref.dc_ref
    max_step = 0.05 * _TWO_PI * math.sqrt(float(ref.a_km[0]) ** 3 / _MU)
    nat = _natural_rhs(sc, fm)

    for ph in ref.phases:
        if not ph.thrusting:
            if ph.t1_s > t + 1e-9:
                res = rk.integrate(nat, t, y, ph.t1_s, rtol, atol)
                y = res.y_end
                t = res.t_end
            continue
        flips_active = abs(math.sin(ph.beta0_rad)) > 1e-9 and ph.i_dir != 0.0
        thr = {
            s: _thrust_rhs(sc, fm, s, ref, follow_profile) for s in (1.0, -1.0)
        }
        while t < ph.t1_s - 1e-9:
            # Gate/steering geometry refreshed from the current state each
            # arc; decisions use the geometry nudged 1 s into the arc so a
            # restart exactly on a boundary is unambiguous.
            u0, udot, c0, cdot = _arc_gate_linearization(t, y, epoch)
            u_n = u0 + udot
            eta = (
                0
                if (gate_active and gate_boundary_distance(u_n, c0 + cdot, dc) > 0.0)
                else 1
            )
            sign = _beta_sign(u_n, ph.i_dir)
            events = []
            if gate_active:

                def gate_fn(ts, _yv, u0=u0, udot=udot, c0=c0, cdot=cdot, ta=t):
                    du = ts - ta
                    return gate_boundary_distance(u0 + udot * du, c0 + cdot * du, dc)

                events.append(
                    rk.Event(gate_fn, direction=0, terminal=True, state_free=True)
                )
            if flips_active and eta:

                def flip_fn(ts, _yv, u0=u0, udot=udot, ta=t):
                    return math.cos(u0 + udot * (ts - ta))

                events.append(
                    rk.Event(flip_fn, direction=0, terminal=True, state_free=True)
                )
            rhs = thr[sign] if eta else nat
            res = rk.integrate(
                rhs, t, y, ph.t1_s, rtol, atol, events=events, max_step=max_step
            )
            y = res.y_end
            t = res.t_end
            if res.status != "event":
                break
            if not switches or t - switches[-1] > 0.05:
                switches.append(t)
    end_state = CartesianState(y[:3].copy(), y[3:6].copy())
    return end_state, float(y[6]), switches


def _target_elements(
    target: TransferTarget, ym_reached: np.ndarray, tf_s: float
) -> EquinoctialElements:
    """Terminal matching target with free components held at reached values."""
    h_c, k_c = float(ym_reached[3]), float(ym_reached[4])
    if target.i_rad is None and target.raan_rad is None:
        h_t, k_t = h_c, k_c
    else:
        i_t = target.i_rad if target.i_rad is not None else 2.0 * math.atan(
            math.hypot(h_c, k_c)
        )
        if target.raan_rad is not None:
            raan_t = target.raan_rad + secular_raan_rate(target.a_km, 0.0, i_t) * tf_s
        else:
            raan_t = math.atan2(k_c, h_c)
        tt = math.tan(0.5 * i_t)
        h_t, k_t = tt * math.cos(raan_t), tt * math.sin(raan_t)
    return EquinoctialElements(
        p_km=target.a_km, f=0.0, g=0.0, h=h_t, k=k_t, L_rad=0.0
    )


def adjust_thrust_profile(
    ref: ReferenceTrajectory,
    sc: SpacecraftConfig,
    *,
    dv_reserve_ms: float | None = None,
    force_model: ForceModel | None = None,
    rtol: float = 1e-9,
    atol: float = 1e-10,
) -> ReferenceTrajectory:
    """Add a linear-in-time delta-v reserve to an unadjusted profile.

    When dv_reserve_ms is None, the reserve is sized by forward-propagating
    the gated thrust through the full force model and evaluating the terminal
    matching metric against the transfer target; the switching instants found
    along the way are inserted into the node grid. The cumulative delta-v
    gains (t/tf)*reserve, the mass profile is drawn down consistently, and
    the available thrust acceleration is re-evaluated at the reduced mass —
    so the adjusted profile never promises less delta-v than the base one,
    and a zero reserve reproduces it exactly.
    """
    if dv_reserve_ms is not None and dv_reserve_ms < 0.0:
        raise ValueError(f"dv_reserve_ms must be nonnegative, got {dv_reserve_ms}")
    fm = force_model if force_model is not None else ForceModel()
    t = ref.t_s
    switches = list(ref.switch_t_s)
    if dv_reserve_ms is None:
        if not ref.phases or ref.tf_s <= 0.0:
            dv_reserve_ms = 0.0
        else:
            end_state, _, ev_times = _forward_propagate_reference(
                ref, sc, fm, rtol, atol
            )
            t = _merge_times(t, ev_times)
            switches.extend(ev_times)
            ym = mean_mee_lam_from_cart(end_state)
            reached = EquinoctialElements(
                p_km=float(ym[0]), f=float(ym[1]), g=float(ym[2]),
                h=float(ym[3]), k=float(ym[4]), L_rad=float(ym[5]),
            )
            _, dv_reserve_ms = delta_v_prime(
                reached, _target_elements(ref.target, ym, ref.tf_s)
            )
    state0 = CartesianState(ref.r0_km.copy(), ref.v0_kms.copy())
    return _assemble(
        t, ref.phases, float(ref.raan_rad[0]), sc, state0, float(ref.mass_kg[0]),
        ref.target, ref.dc_ref, ref.epoch_jd, switches, float(dv_reserve_ms),
    )


# ── top-level generation ─────────────────────────────────────────────────────


def generate_reference(
    state: CartesianState,
    mass_kg: float,
    target: TransferTarget,
    sc: SpacecraftConfig,
    *,
    dc_ref: float,
    epoch_jd: float,
    nodes_per_orbit: int = 36,
    force_model: ForceModel | None = None,
    adjust: bool = True,
    rtol: float = 1e-9,
    atol: float = 1e-10,
) -> ReferenceTrajectory:
    """Build the flyable reference for one transfer.

    Pipeline: mean elements of the start state; leg/coast decomposition (with
    a drift-orbit search when RAAN is targeted); closed-form histories on the
    node grid; then, unless adjust is False, forward propagation of the gated
    thrust in the full force model to place exact switching instants and size
    the terminal delta-v reserve.

    Args:
        state: Osculating Cartesian start state.
        mass_kg: Wet mass at the start of the transfer.
        target: Mean-element objective (free components set to None).
        sc: Vehicle constants.
        dc_ref: Reference duty cycle in (0, 1] used to average the thrust.
        epoch_jd: Julian date of t = 0 (drives eclipse geometry).
        nodes_per_orbit: Uniform grid density per initial orbit period.
        force_model: Perturbations for the switching propagation.
        adjust: Apply the reserve sizing step.
        rtol/atol: Integration tolerances of the switching propagation.

    Raises:
        ReferenceGenerationError: Infeasible geometry (inclination change
            above 90 deg, or no drift orbit closes the node gap).
    """
    if not 0.0 < dc_ref <= 1.0:
        raise ValueError(f"dc_ref must be in (0, 1], got {dc_ref}")
    if nodes_per_orbit < 1:
        raise ValueError(f"nodes_per_orbit must be >= 1, got {nodes_per_orbit}")
    if mass_kg <= 0.0:
        raise ValueError(f"mass_kg must be positive, got {mass_kg}")
    fm = force_model if force_model is not None else ForceModel()
    ym = mean_mee_lam_from_cart(state)
    p, f_e, g_e, h_e, k_e = (float(x) for x in ym[:5])
    a0 = p / (1.0 - f_e * f_e - g_e * g_e)
    i0 = 2.0 * math.atan(math.hypot(h_e, k_e))
    raan0 = math.atan2(k_e, h_e)
    i_f = target.i_rad if target.i_rad is not None else i0
    ve = sc.isp_s * G0_MS2
    mdot = dc_ref * mass_flow_kg_s(sc.thrust_n, sc.isp_s)

    phases: list[Phase] = []
    t_cur = 0.0
    m_cur = mass_kg
    dv_base = 0.0

    def add_leg(a_s: float, i_s: float, a_e: float, i_e: float) -> None:
        nonlocal t_cur, m_cur, dv_base
        dv, tof, beta0, _ = edelbaum_transfer(a_s, i_s, a_e, i_e, sc, dc_ref, m_cur)
        if dv < 1e-9 or tof <= 0.0:
            return
        di = i_e - i_s
        phases.append(
            Phase(
                t0_s=t_cur, t1_s=t_cur + tof, thrusting=True,
                a0_km=a_s, i0_rad=i_s, a1_km=a_e, i1_rad=i_e,
                v0_kms=math.sqrt(_MU / a_s), beta0_rad=beta0,
                dv_leg_ms=dv, dv_base_ms=dv_base, m0_kg=m_cur,
                i_dir=0.0 if di == 0.0 else math.copysign(1.0, di),
                mdot_kg_s=mdot, ve_ms=ve,
            )
        )
        t_cur += tof
        m_cur *= math.exp(-dv / ve)
        dv_base += dv

    if target.raan_rad is None:
        add_leg(a0, i0, target.a_km, i_f)
    else:
        drift = raan_drift_match(
            a0, i0, raan0, target.a_km, i_f, target.raan_rad, mass_kg, sc, dc_ref
        )
        add_leg(a0, i0, drift.a_km, drift.i_rad)
        if drift.wait_s > 1e-9:
            phases.append(
                Phase(
                    t0_s=t_cur, t1_s=t_cur + drift.wait_s, thrusting=False,
                    a0_km=drift.a_km, i0_rad=drift.i_rad,
                    a1_km=drift.a_km, i1_rad=drift.i_rad,
                    v0_kms=math.sqrt(_MU / drift.a_km), beta0_rad=0.0,
                    dv_leg_ms=0.0, dv_base_ms=dv_base, m0_kg=m_cur,
                    i_dir=0.0, mdot_kg_s=0.0, ve_ms=ve,
                )
            )
            t_cur += drift.wait_s
        add_leg(drift.a_km, drift.i_rad, target.a_km, i_f)

    tf = t_cur
    if not phases or tf <= 0.0:
        # Null transfer: a single-node profile with no thrust and no motion.
        one = np.array([0.0])
        return ReferenceTrajectory(
            t_s=one, f_t_kms2=one * 0.0, beta_rad=one * 0.0,
            a_km=np.array([a0]), i_rad=np.array([i0]), raan_rad=np.array([raan0]),
            dv_cum_ms=one * 0.0, mass_kg=np.array([mass_kg]),
            thrust_on=np.array([False]),
            dv_total_ms=0.0, tof_days=0.0, dc_ref=dc_ref, epoch_jd=epoch_jd,
            r0_km=state.r_km, v0_kms=state.v_kms, target=target,
            phases=(), switch_t_s=np.array([]),
        )

    period0 = _TWO_PI * math.sqrt(a0**3 / _MU)
    dt_grid = period0 / nodes_per_orbit
    n_full = int(math.floor(tf / dt_grid + 1e-9))
    t_grid = dt_grid * np.arange(n_full + 1)
    if tf - t_grid[-1] > _NODE_DEDUP_S:
        t_grid = np.append(t_grid, tf)
    else:
        t_grid[-1] = tf
    boundaries = [ph.t0_s for ph in phases[1:]]
    t_grid = _merge_times(t_grid, boundaries)

    ref = _assemble(
        t_grid, tuple(phases), raan0, sc, state, mass_kg, target,
        dc_ref, epoch_jd, boundaries, 0.0,
    )
    if adjust:
        ref = adjust_thrust_profile(
            ref, sc, force_model=fm, rtol=rtol, atol=atol
        )
    return ref
