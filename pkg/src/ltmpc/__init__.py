"""Convex-MPC guidance for low-thrust orbital transfers.

The package generates analytic low-thrust transfer references, tracks them
with a per-segment second-order cone program in generalized equinoctial
elements, and closes the loop in a receding-horizon simulation with thrust
errors and velocity-gap-triggered reference regeneration.
"""

from .constants import MU_EARTH_KM3_S2, R_EARTH_KM, J2_EARTH, G0_MS2
from .coords import (
    CartesianState,
    KeplerianElements,
    EquinoctialElements,
    GEqOEState,
    cart_to_kep,
    kep_to_cart,
    cart_to_geqoe,
    geqoe_to_cart,
    osc_to_mean,
    mean_to_osc,
)

__version__ = "0.1.0"
