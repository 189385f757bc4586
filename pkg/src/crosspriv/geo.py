"""Geodesic helpers and the planar Laplace perturbation mechanism.

Perturbation offsets live in coordinate degrees: a radius ``r`` is added
straight onto longitude/latitude, so ``eps`` is measured in inverse degrees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

EARTH_RADIUS_KM = 6371.0
TWO_PI = 2.0 * math.pi


class ParameterError(ValueError):
    """Raised for out-of-domain mechanism parameters."""


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float

    def __post_init__(self):
        if not (-180.0 <= self.lon <= 180.0) or not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"invalid coordinate lon={self.lon} lat={self.lat}")

    def as_tuple(self):
        return (self.lon, self.lat)


@dataclass(frozen=True)
class PolarOffset:
    r: float
    theta: float

    def __post_init__(self):
        if self.r < 0.0:
            raise ValueError(f"negative radius {self.r}")
        if not (0.0 <= self.theta < TWO_PI):
            raise ValueError(f"angle {self.theta} outside [0, 2pi)")


def wrap_angle(theta):
    """Wrap into [0, 2pi). Guards the float edge where ``x % 2pi == 2pi``."""
    w = math.fmod(theta, TWO_PI)
    if w < 0.0:
        w += TWO_PI
    if w >= TWO_PI:
        w = 0.0
    return w


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(1.0, h)))


def degree_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Euclidean distance in raw coordinate degrees (the perturbation metric)."""
    return math.hypot(a.lon - b.lon, a.lat - b.lat)


def apply_polar_offset(p: GeoPoint, off: PolarOffset) -> GeoPoint:
    lon = p.lon + off.r * math.cos(off.theta)
    lat = p.lat + off.r * math.sin(off.theta)
    return GeoPoint(min(180.0, max(-180.0, lon)), min(90.0, max(-90.0, lat)))


def planar_laplace_pdf(eps: float, r):
    """Joint density over (r, theta): eps^2/(2 pi) * r * exp(-eps r)."""
    if not eps > 0.0:
        raise ParameterError(f"eps must be positive, got {eps}")
    r = np.asarray(r, dtype=np.float64)
    out = eps * eps / TWO_PI * r * np.exp(-eps * r)
    return float(out) if out.ndim == 0 else out


def radial_cdf(eps: float, r):
    r = np.asarray(r, dtype=np.float64)
    return 1.0 - (1.0 + eps * r) * np.exp(-eps * r)


def radial_inverse_cdf(eps: float, p):
    """Radius at cumulative probability ``p`` via the W_{-1} branch."""
    if not eps > 0.0:
        raise ParameterError(f"eps must be positive, got {eps}")
    p = np.asarray(p, dtype=np.float64)
    w = kernels.lambertw_m1((p - 1.0) / math.e)
    return -(w + 1.0) / eps


def sample_planar_laplace(eps: float, rng: np.random.Generator) -> PolarOffset:
    if not eps > 0.0:
        raise ParameterError(f"eps must be positive, got {eps}")
    theta = wrap_angle(rng.uniform(0.0, TWO_PI))
    r = float(radial_inverse_cdf(eps, rng.random()))
    return PolarOffset(max(r, 0.0), theta)


def sample_planar_laplace_batch(eps: float, n: int, rng: np.random.Generator):
    """Vectorised draw of ``n`` offsets; returns ``(r, theta)`` arrays."""
    if not eps > 0.0:
        raise ParameterError(f"eps must be positive, got {eps}")
    theta = rng.uniform(0.0, TWO_PI, size=n)
    theta[theta >= TWO_PI] = 0.0
    r = np.maximum(radial_inverse_cdf(eps, rng.random(n)), 0.0)
    return r, theta


def local_bearing(origin: GeoPoint, target: GeoPoint) -> float:
    """Bearing in [0, 2pi) of ``target`` seen from ``origin``, counter-clockwise from east.

    Uses an equirectangular projection centred at ``origin``.
    """
    dx = (target.lon - origin.lon) * math.cos(math.radians(origin.lat))
    dy = target.lat - origin.lat
    return wrap_angle(math.atan2(dy, dx))


def included_angle(v_from: GeoPoint, v_to_server: GeoPoint, perturb_theta: float):
    """Angle in [0, pi] between the server direction and the perturbation direction.

    Returns ``(angle, degenerate)``; coincident points give ``(0.0, True)``.
    """
    if v_from.lon == v_to_server.lon and v_from.lat == v_to_server.lat:
        return 0.0, True
    diff = abs(local_bearing(v_from, v_to_server) - wrap_angle(perturb_theta))
    if diff > math.pi:
        diff = TWO_PI - diff
    return diff, False
