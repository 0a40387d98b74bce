"""Static Harris-Priester atmospheric density (mean solar activity).

The table is the classical 100-1000 km Harris-Priester listing of minimum and
maximum densities [g/km^3]; this model uses their arithmetic mean and the
customary exponential interpolation between layers (linear in log-density).
Outside the tabulated range the density is clamped to the nearest edge value
and a warning is emitted once.
"""

from __future__ import annotations

import bisect
import math
import warnings

import numpy as np

__all__ = ["density_kg_m3", "density_scalar_kg_m3", "ALT_MIN_KM", "ALT_MAX_KM"]

# Altitude [km], rho_min, rho_max [g/km^3] at mean solar activity.
_HP_TABLE = np.array(
    [
        [100.0, 497400.0, 497400.0],
        [120.0, 24900.0, 24900.0],
        [130.0, 8377.0, 8710.0],
        [140.0, 3899.0, 4059.0],
        [150.0, 2122.0, 2215.0],
        [160.0, 1263.0, 1344.0],
        [170.0, 800.8, 875.8],
        [180.0, 528.3, 601.0],
        [190.0, 361.7, 429.7],
        [200.0, 255.7, 316.2],
        [210.0, 183.9, 239.6],
        [220.0, 134.1, 185.3],
        [230.0, 99.49, 145.5],
        [240.0, 74.88, 115.7],
        [250.0, 57.09, 93.08],
        [260.0, 44.03, 75.55],
        [270.0, 34.30, 61.82],
        [280.0, 26.97, 50.95],
        [290.0, 21.39, 42.26],
        [300.0, 17.08, 35.26],
        [320.0, 10.99, 25.11],
        [340.0, 7.214, 18.19],
        [360.0, 4.824, 13.37],
        [380.0, 3.274, 9.955],
        [400.0, 2.249, 7.492],
        [420.0, 1.558, 5.684],
        [440.0, 1.091, 4.355],
        [460.0, 0.7701, 3.362],
        [480.0, 0.5474, 2.612],
        [500.0, 0.3916, 2.042],
        [520.0, 0.2819, 1.605],
        [540.0, 0.2042, 1.267],
        [560.0, 0.1488, 1.005],
        [580.0, 0.1092, 0.7997],
        [600.0, 0.08070, 0.6390],
        [620.0, 0.06012, 0.5123],
        [640.0, 0.04519, 0.4121],
        [660.0, 0.03430, 0.3325],
        [680.0, 0.02632, 0.2691],
        [700.0, 0.02043, 0.2185],
        [720.0, 0.01607, 0.1779],
        [740.0, 0.01281, 0.1452],
        [760.0, 0.01036, 0.1190],
        [780.0, 0.008496, 0.09776],
        [800.0, 0.007069, 0.08059],
        [840.0, 0.004680, 0.05741],
        [880.0, 0.003200, 0.04210],
        [920.0, 0.002210, 0.03130],
        [960.0, 0.001560, 0.02360],
        [1000.0, 0.001150, 0.01810],
    ]
)

ALT_MIN_KM = float(_HP_TABLE[0, 0])
ALT_MAX_KM = float(_HP_TABLE[-1, 0])

_ALT = _HP_TABLE[:, 0]
# Mean-activity density in kg/m^3 (1 g/km^3 = 1e-12 kg/m^3), log for layer interp.
_LOG_RHO = np.log(0.5 * (_HP_TABLE[:, 1] + _HP_TABLE[:, 2]) * 1e-12)


def density_kg_m3(alt_km: float | np.ndarray) -> float | np.ndarray:
    """Mean Harris-Priester density at geocentric altitude(s).

    Args:
        alt_km: Altitude(s) above the equatorial radius [km].

    Returns:
        Density [kg/m^3], exponentially interpolated between table layers;
        clamped (with a warning) outside [100, 1000] km.
    """
    alt = np.asarray(alt_km, dtype=float)
    if np.any(alt < ALT_MIN_KM) or np.any(alt > ALT_MAX_KM):
        warnings.warn(
            f"altitude outside Harris-Priester range [{ALT_MIN_KM:.0f}, "
            f"{ALT_MAX_KM:.0f}] km; density clamped",
            stacklevel=2,
        )
        alt = np.clip(alt, ALT_MIN_KM, ALT_MAX_KM)
    rho = np.exp(np.interp(alt, _ALT, _LOG_RHO))
    return float(rho) if np.isscalar(alt_km) else rho


# Plain-float copies for the scalar fast path (propagation right-hand sides
# call this millions of times; array dispatch overhead dominates otherwise).
_ALT_LIST = _ALT.tolist()
_LOG_RHO_LIST = _LOG_RHO.tolist()
_N_LAYERS = len(_ALT_LIST)


def density_scalar_kg_m3(alt_km: float) -> float:
    """Scalar twin of density_kg_m3 (same layers, interpolation, clamping)."""
    if alt_km < ALT_MIN_KM or alt_km > ALT_MAX_KM:
        warnings.warn(
            f"altitude outside Harris-Priester range [{ALT_MIN_KM:.0f}, "
            f"{ALT_MAX_KM:.0f}] km; density clamped",
            stacklevel=2,
        )
        alt_km = min(max(alt_km, ALT_MIN_KM), ALT_MAX_KM)
    i = bisect.bisect_right(_ALT_LIST, alt_km) - 1
    if i >= _N_LAYERS - 1:
        return math.exp(_LOG_RHO_LIST[-1])
    a0, a1 = _ALT_LIST[i], _ALT_LIST[i + 1]
    l0, l1 = _LOG_RHO_LIST[i], _LOG_RHO_LIST[i + 1]
    return math.exp(l0 + (l1 - l0) * (alt_km - a0) / (a1 - a0))
