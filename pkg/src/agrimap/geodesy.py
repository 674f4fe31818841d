"""WGS84 geodetic <-> local East-North-Up conversion."""
from __future__ import annotations

import math

import numpy as np

from .errors import InvalidGeodetic

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)


def _check(lat, lon, alt):
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    alt = np.asarray(alt, dtype=float)
    if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon)) and np.all(np.isfinite(alt))):
        raise InvalidGeodetic("non-finite coordinate")
    if np.any(np.abs(lat) > 90.0) or np.any(np.abs(lon) > 180.0):
        raise InvalidGeodetic("latitude must be within ±90° and longitude within ±180°")
    return lat, lon, alt


def geodetic_to_ecef(lat, lon, alt) -> np.ndarray:
    lat, lon, alt = _check(lat, lon, alt)
    phi = np.radians(lat)
    lam = np.radians(lon)
    sp, cp = np.sin(phi), np.cos(phi)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sp * sp)
    x = (n + alt) * cp * np.cos(lam)
    y = (n + alt) * cp * np.sin(lam)
    z = (n * (1.0 - WGS84_E2) + alt) * sp
    return np.stack([x, y, z], axis=-1)


def ecef_to_geodetic(xyz):
    """Iterative inverse; converges to sub-micrometer in a few steps near the surface."""
    xyz = np.asarray(xyz, dtype=float)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    lam = np.arctan2(y, x)
    p = np.hypot(x, y)
    phi = np.arctan2(z, p * (1.0 - WGS84_E2))
    h = np.zeros_like(p)
    for _ in range(10):
        sp = np.sin(phi)
        n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sp * sp)
        h = p / np.cos(phi) - n
        phi = np.arctan2(z, p * (1.0 - WGS84_E2 * n / (n + h)))
    return np.degrees(phi), np.degrees(lam), h


def _enu_rotation(lat0: float, lon0: float) -> np.ndarray:
    """Rows are the East, North, Up unit vectors in ECEF."""
    phi = math.radians(lat0)
    lam = math.radians(lon0)
    sp, cp = math.sin(phi), math.cos(phi)
    sl, cl = math.sin(lam), math.cos(lam)
    return np.array(
        [
            [-sl, cl, 0.0],
            [-sp * cl, -sp * sl, cp],
            [cp * cl, cp * sl, sp],
        ]
    )


def geodetic_to_enu(lat, lon, alt, origin) -> np.ndarray:
    """Local tangent-plane coordinates relative to ``origin = (lat0, lon0, alt0)``.

    Accepts scalars or arrays; returns (..., 3) East, North, Up meters.
    """
    lat0, lon0, alt0 = origin
    ref = geodetic_to_ecef(lat0, lon0, alt0)
    d = geodetic_to_ecef(lat, lon, alt) - ref
    return d @ _enu_rotation(lat0, lon0).T


def enu_to_geodetic(enu, origin):
    lat0, lon0, alt0 = origin
    ref = geodetic_to_ecef(lat0, lon0, alt0)
    xyz = np.asarray(enu, dtype=float) @ _enu_rotation(lat0, lon0) + ref
    return ecef_to_geodetic(xyz)
