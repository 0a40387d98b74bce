"""Adaptive Dormand-Prince 5(4) integration for trajectory ensembles.

The integrator advances a whole batch of states with a *shared* adaptive step
sequence. That is deliberate: state-transition matrices are later built from
finite differences between ensemble members, and sharing the step sequence
makes the dominant truncation error common mode so it cancels in the
differences. Exact landing on requested record times (no dense-output
interpolation error) and root-located event times are supported.

Everything is plain numpy and deterministic run to run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = ["Event", "OdeResult", "integrate"]

# Dormand-Prince RK5(4)7M coefficients.
_C = np.array([0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1.0 / 5.0]),
    np.array([3.0 / 40.0, 9.0 / 40.0]),
    np.array([44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0]),
    np.array([19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0]),
    np.array(
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
        ]
    ),
    np.array(
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0]
    ),
]
_B5 = np.array(
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0]
)
_B4 = np.array(
    [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ]
)
_E = _B5 - _B4

_EVENT_GUARD_S = 1e-6  # ignore events this close to the segment start (re-fire guard)


@dataclass
class Event:
    """Scalar event function with crossing direction and terminal flag.

    Attributes:
        fn: g(t, y) -> float evaluated on the first ensemble member.
        direction: +1 fires on -→+, -1 on +→-, 0 on any sign change.
        terminal: Stop the integration at the event time.
        state_free: fn depends on t only (ignores y); location then skips
            state reconstruction until the root is found.
    """

    fn: Callable[[float, np.ndarray], float]
    direction: int = 0
    terminal: bool = False
    state_free: bool = False


@dataclass
class OdeResult:
    """Outcome of an integrate() call.

    Attributes:
        t_end: Final time reached (equals tf, or the terminal event time).
        y_end: Final states, same shape as the input y0.
        status: "finished" or "event".
        t_rec/y_rec: States recorded exactly at the requested times.
        event_times/event_states: Per-event lists of located crossings.
        n_steps/n_rejected/n_rhs: Work counters.
    """

    t_end: float
    y_end: np.ndarray
    status: str
    t_rec: np.ndarray
    y_rec: np.ndarray
    event_times: list[list[float]] = field(default_factory=list)
    event_states: list[list[np.ndarray]] = field(default_factory=list)
    n_steps: int = 0
    n_rejected: int = 0
    n_rhs: int = 0


def _substep(rhs, t, y, f, h_part, squeeze):
    """One fixed-size fifth-order step from the start of an accepted step.

    Used to evaluate trial states while locating an event: a single method
    step of size <= the accepted step keeps the one-step error at the
    tolerance level, whereas endpoint Hermite interpolation does not (its
    O(h^4) error is kilometres for orbit-sized steps and leaks a systematic
    state kick into every event restart).
    """
    Kp = np.empty((7,) + y.shape)
    Kp[0] = f
    for s in range(1, 7):
        ys = y + h_part * np.tensordot(_A[s], Kp[:s], axes=(0, 0))
        arg = ys[0] if squeeze else ys
        Kp[s] = np.atleast_2d(np.asarray(rhs(t + _C[s] * h_part, arg), dtype=float))
    return y + h_part * np.tensordot(_B5, Kp, axes=(0, 0))


def _root(g, lo, glo, hi, ghi, tol):
    """Illinois regula falsi with bisection fallback on a bracketed root.

    Returns the post-crossing bracket end (the side whose sign matches ghi)
    so callers restarting from it do not re-detect the same crossing.
    """
    side = 0
    for _ in range(80):
        if hi - lo < tol:
            break
        denom = ghi - glo
        m = hi - ghi * (hi - lo) / denom if denom != 0.0 else 0.5 * (lo + hi)
        if not (lo < m < hi):
            m = 0.5 * (lo + hi)
            if m <= lo or m >= hi:  # bracket is at float resolution
                break
        gm = g(m)
        if gm == 0.0:
            return m
        if (gm >= 0.0) == (ghi >= 0.0):
            hi, ghi = m, gm
            if side == +1:
                glo *= 0.5
            side = +1
        else:
            lo, glo = m, gm
            if side == -1:
                ghi *= 0.5
            side = -1
    return hi


def _locate(ev, rhs, t, y, f, t_new, y_new, g_old, g_new, squeeze, res):
    """Locate one crossing inside an accepted step.

    Trial states come from fifth-order substeps (skipped entirely for
    state-free event functions), so both the returned time and state are
    tolerance-accurate; endpoint Hermite interpolation is not, and its
    O(h^4) error would leak a systematic state kick into every restart.
    """
    tol = max(1e-9, 4.0 * np.finfo(float).eps * abs(t_new))
    if ev.state_free:
        t_ev = _root(lambda m: ev.fn(m, None), t, g_old, t_new, g_new, tol)
        y_ev = _substep(rhs, t, y, f, t_ev - t, squeeze)
        res.n_rhs += 6
        return t_ev, y_ev

    cache: dict[float, np.ndarray] = {}

    def g(m):
        ym = _substep(rhs, t, y, f, m - t, squeeze)
        res.n_rhs += 6
        cache[m] = ym
        return ev.fn(m, ym[0])

    t_ev = _root(g, t, g_old, t_new, g_new, tol)
    y_ev = cache.get(t_ev)
    if y_ev is None:
        y_ev = y_new if t_ev == t_new else _substep(rhs, t, y, f, t_ev - t, squeeze)
        if t_ev != t_new:
            res.n_rhs += 6
    return t_ev, y_ev


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    y0: np.ndarray,
    tf: float,
    rtol: float = 1e-11,
    atol: float = 1e-12,
    events: Sequence[Event] = (),
    record: Sequence[float] | np.ndarray = (),
    max_step: float = math.inf,
    max_steps: int = 2_000_000,
) -> OdeResult:
    """Integrate an ODE ensemble from t0 to tf (tf >= t0).

    Args:
        rhs: f(t, y) with y shaped like y0 ((d,) for one trajectory or (m, d)
            for an ensemble sharing the step sequence).
        t0: Initial time [s].
        y0: Initial state(s).
        tf: Final time [s].
        rtol: Relative tolerance of the embedded error estimate.
        atol: Absolute tolerance.
        events: Event functions, evaluated on the first ensemble member.
        record: Times to record exactly (integration lands on them); must lie
            in [t0, tf] and be nondecreasing.
        max_step: Upper bound on the step size [s].
        max_steps: Safety cap on accepted+rejected steps.

    Returns:
        OdeResult; `status` is "event" when a terminal event stopped early.

    Raises:
        ValueError: On tf < t0 or out-of-range record times.
        RuntimeError: If the step count cap is hit or the step size underflows.
    """
    if tf < t0:
        raise ValueError(f"backward integration not supported: tf={tf} < t0={t0}")
    y = np.atleast_2d(np.asarray(y0, dtype=float)).copy()
    squeeze = np.asarray(y0).ndim == 1

    rec = np.asarray(record, dtype=float)
    if rec.size and (rec[0] < t0 - 1e-9 or rec[-1] > tf + 1e-9 or np.any(np.diff(rec) < 0)):
        raise ValueError("record times must be nondecreasing and inside [t0, tf]")
    rec = np.clip(rec, t0, tf)
    y_rec = np.empty((rec.size,) + y.shape)
    i_rec = 0

    res = OdeResult(
        t_end=t0,
        y_end=y0,
        status="finished",
        t_rec=rec,
        y_rec=y_rec,
        event_times=[[] for _ in events],
        event_states=[[] for _ in events],
    )

    def _record_if_due(t: float, yv: np.ndarray) -> None:
        nonlocal i_rec
        while i_rec < rec.size and rec[i_rec] <= t + 1e-12:
            y_rec[i_rec] = yv
            i_rec += 1

    _record_if_due(t0, y)

    if tf == t0:
        res.y_end = y[0] if squeeze else y
        res.y_rec = y_rec[:, 0, :] if squeeze else y_rec
        return res

    t = t0
    f = rhs(t, y[0] if squeeze else y)
    f = np.atleast_2d(np.asarray(f, dtype=float)).copy()  # own it: rhs may reuse a buffer
    res.n_rhs += 1
    g_prev = [ev.fn(t, y[0]) for ev in events]

    span = tf - t0
    h = min(max_step, span, 60.0, max(1e-3, 0.005 * span))
    K = np.empty((7,) + y.shape)
    stopped = False

    while t < tf and not stopped:
        if res.n_steps + res.n_rejected > max_steps:
            raise RuntimeError(f"step limit exceeded at t={t}")
        # Land exactly on the next record time or the final time.
        t_target = tf if i_rec >= rec.size else min(tf, max(rec[i_rec], t + 1e-12))
        if t + h >= t_target:
            h = t_target - t
        if h < 1e-12 * max(1.0, abs(t)):
            raise RuntimeError(f"step size underflow at t={t}")

        K[0] = f
        for s in range(1, 7):
            ys = y + h * np.tensordot(_A[s], K[:s], axes=(0, 0))
            arg = ys[0] if squeeze else ys
            K[s] = np.atleast_2d(np.asarray(rhs(t + _C[s] * h, arg), dtype=float))
        res.n_rhs += 6

        y_new = y + h * np.tensordot(_B5, K, axes=(0, 0))
        err_vec = h * np.tensordot(_E, K, axes=(0, 0))
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = math.sqrt(float(np.mean((err_vec / scale) ** 2)))

        if err <= 1.0:
            t_new = t + h
            # FSAL: copy, because K is reused by later steps (and by event
            # substeps) while f must keep the step-start derivative.
            f_new = K[6].copy()
            # Event sweep on the accepted step: locate every crossing first,
            # then stop at the earliest terminal one (if any) and keep only
            # the crossings that happened at or before the stop time.
            crossings: list[tuple[int, float, np.ndarray]] = []
            t_stop = None
            for j, ev in enumerate(events):
                g_new = ev.fn(t_new, y_new[0])
                g_old = g_prev[j]
                crossed = (
                    (ev.direction >= 0 and g_old < 0.0 <= g_new)
                    or (ev.direction <= 0 and g_old > 0.0 >= g_new)
                    if ev.direction != 0
                    else (g_old < 0.0 <= g_new) or (g_old > 0.0 >= g_new)
                )
                if crossed:
                    t_ev, y_ev = _locate(ev, rhs, t, y, f, t_new, y_new, g_old, g_new, squeeze, res)
                    if t_ev - t0 > _EVENT_GUARD_S:
                        crossings.append((j, t_ev, y_ev))
                        if ev.terminal and (t_stop is None or t_ev < t_stop):
                            t_stop = t_ev
                g_prev[j] = g_new
            y_stop = None
            for j, t_ev, y_ev in crossings:
                if t_stop is not None and t_ev > t_stop + 1e-12:
                    continue  # the integration never reached this crossing
                res.event_times[j].append(t_ev)
                res.event_states[j].append(y_ev[0].copy() if squeeze else y_ev.copy())
                if t_stop is not None and t_ev == t_stop:
                    y_stop = y_ev
            if t_stop is not None:
                if y_stop is None:
                    y_stop = _substep(rhs, t, y, f, t_stop - t, squeeze)
                    res.n_rhs += 6
                y = y_stop
                t = t_stop
                res.status = "event"
                stopped = True
            else:
                t, y, f = t_new, y_new, f_new
            _record_if_due(t, y)
            res.n_steps += 1
            fac = 0.9 * err ** -0.2 if err > 0.0 else 5.0
            h = min(max_step, h * min(5.0, max(0.2, fac)))
        else:
            res.n_rejected += 1
            h *= max(0.2, 0.9 * err**-0.2)

    res.t_end = t
    res.y_end = y[0] if squeeze else y
    res.y_rec = y_rec[:, 0, :] if squeeze else y_rec
    return res
