"""Physical constants shared across the package.

All internal computation uses kilometers, seconds, radians and kilograms unless a
name says otherwise. Configuration files accept degrees for angles and SI metric
units where conventional (thrust in newtons, Isp in seconds); conversion happens
at the boundary.
"""

from __future__ import annotations

import math

#: Earth gravitational parameter [km^3/s^2].
MU_EARTH_KM3_S2: float = 398600.4418

#: Earth equatorial radius [km].
R_EARTH_KM: float = 6378.1363

#: Earth second zonal harmonic (unnormalized) [-].
J2_EARTH: float = 1.08262668e-3

#: Standard gravity [m/s^2] — rocket-equation convention.
G0_MS2: float = 9.80665

#: Earth rotation rate [rad/s] — used for the atmosphere co-rotation velocity.
OMEGA_EARTH_RAD_S: float = 7.2921159e-5

#: Canonical time unit sqrt(R_E^3 / mu) [s]; pairs with R_EARTH_KM as length unit.
TU_S: float = math.sqrt(R_EARTH_KM**3 / MU_EARTH_KM3_S2)

#: Seconds per day.
DAY_S: float = 86400.0
