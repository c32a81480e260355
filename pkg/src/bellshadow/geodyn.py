"""Circular orbits over a rotating spherical Earth, and link geometry.

Everything is computed in an Earth-centred inertial frame whose x axis
points at the Greenwich meridian at t = 0. Ground stations co-rotate with
the Earth; latitude/longitude appear only at the boundaries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS = 6_371_000.0
EARTH_ROTATION_RATE = 7.2921159e-5
EARTH_MU = 3.986004418e14


@dataclass(frozen=True)
class EarthModel:
    radius: float = EARTH_RADIUS
    rotation_rate: float = EARTH_ROTATION_RATE
    mu: float = EARTH_MU

    def __post_init__(self):
        if self.radius <= 0 or self.mu <= 0 or self.rotation_rate < 0:
            raise ValueError(f"invalid Earth model: {self}")


@dataclass(frozen=True)
class OrbitSpec:
    """Circular orbit. Angles in radians, altitude in metres."""

    altitude: float
    inclination: float = math.pi / 2
    raan: float = 0.0
    phase_at_epoch: float = 0.0

    def __post_init__(self):
        if self.altitude <= 0:
            raise ValueError(f"altitude must be positive, got {self.altitude}")
        if not 0.0 <= self.inclination <= math.pi:
            raise ValueError(f"inclination must lie in [0, pi], got {self.inclination}")

    def radius(self, earth: EarthModel) -> float:
        return earth.radius + self.altitude

    def mean_motion(self, earth: EarthModel) -> float:
        return math.sqrt(earth.mu / self.radius(earth) ** 3)

    def period(self, earth: EarthModel) -> float:
        return 2.0 * math.pi / self.mean_motion(earth)


@dataclass(frozen=True)
class SatelliteState:
    position: np.ndarray
    velocity: np.ndarray
    epoch_offset: float


@dataclass(frozen=True)
class GroundStation:
    latitude: float
    longitude: float
    name: str = ""

    def __post_init__(self):
        if not -math.pi / 2 <= self.latitude <= math.pi / 2:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -math.pi <= self.longitude < math.pi:
            raise ValueError(f"longitude out of range [-pi, pi): {self.longitude}")

    @classmethod
    def from_degrees(cls, lat_deg: float, lon_deg: float, name: str = "") -> GroundStation:
        lon = (lon_deg + 180.0) % 360.0 - 180.0
        return cls(math.radians(lat_deg), math.radians(lon), name)


@dataclass(frozen=True)
class LinkGeometry:
    distance: float
    visible: bool
    radial_velocity: float
    zenith_angle: float


@dataclass(frozen=True)
class Footprint:
    """Spherical cap of ground points that see the satellite."""

    center_lat: float
    center_lon: float
    central_angle: float

    def contains(self, lat, lon, tol: float = 1e-9):
        return central_angle(self.center_lat, self.center_lon, lat, lon) <= self.central_angle + tol


def orbit_state_arrays(orbit: OrbitSpec, earth: EarthModel, t):
    """Vectorised ECI position and velocity, shape ``t.shape + (3,)``."""
    t = np.asarray(t, dtype=float)
    r = orbit.radius(earth)
    n = orbit.mean_motion(earth)
    u = orbit.phase_at_epoch + n * t
    cu, su = np.cos(u), np.sin(u)
    co, so = math.cos(orbit.raan), math.sin(orbit.raan)
    ci, si = math.cos(orbit.inclination), math.sin(orbit.inclination)
    pos = r * np.stack([co * cu - so * su * ci, so * cu + co * su * ci, su * si], axis=-1)
    vel = r * n * np.stack([-co * su - so * cu * ci, -so * su + co * cu * ci, cu * si], axis=-1)
    return pos, vel


def propagate(orbit: OrbitSpec, earth: EarthModel, t: float) -> SatelliteState:
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    pos, vel = orbit_state_arrays(orbit, earth, t)
    return SatelliteState(pos, vel, float(t))


def ground_state_arrays(lat, lon, earth: EarthModel, t):
    """ECI position/velocity of surface points; broadcasts lat/lon against t."""
    lat = np.asarray(lat, dtype=float)
    theta = np.asarray(lon, dtype=float) + earth.rotation_rate * np.asarray(t, dtype=float)
    cl = np.cos(lat)
    x = earth.radius * cl * np.cos(theta)
    y = earth.radius * cl * np.sin(theta)
    z = np.broadcast_to(earth.radius * np.sin(lat), x.shape)
    pos = np.stack([x, y, z], axis=-1)
    w = earth.rotation_rate
    vel = np.stack([-w * y, w * x, np.zeros_like(x)], axis=-1)
    return pos, vel


def link_arrays(sat_pos, sat_vel, gs_pos, gs_vel):
    """Distance, cosine of zenith angle and radial velocity for arrays of links."""
    d = sat_pos - gs_pos
    dist = np.linalg.norm(d, axis=-1)
    up = gs_pos / np.linalg.norm(gs_pos, axis=-1, keepdims=True)
    cos_z = np.einsum("...i,...i->...", d, up) / dist
    vrad = np.einsum("...i,...i->...", d, sat_vel - gs_vel) / dist
    return dist, cos_z, vrad


def link_geometry(sat: SatelliteState, gs: GroundStation, earth: EarthModel,
                  t: float | None = None) -> LinkGeometry:
    if t is None:
        t = sat.epoch_offset
    gpos, gvel = ground_state_arrays(gs.latitude, gs.longitude, earth, t)
    dist, cos_z, vrad = link_arrays(np.asarray(sat.position), np.asarray(sat.velocity), gpos, gvel)
    zenith = float(np.arccos(np.clip(cos_z, -1.0, 1.0)))
    return LinkGeometry(float(dist), bool(cos_z > 0.0), float(vrad), zenith)


def subsatellite_point(sat_pos, earth: EarthModel, t):
    """Geocentric (lat, lon) in radians of the point beneath the satellite."""
    sat_pos = np.asarray(sat_pos, dtype=float)
    lat = np.arcsin(sat_pos[..., 2] / np.linalg.norm(sat_pos, axis=-1))
    lon = np.arctan2(sat_pos[..., 1], sat_pos[..., 0]) - earth.rotation_rate * np.asarray(t)
    return lat, wrap_longitude(lon)


def wrap_longitude(lon):
    return (np.asarray(lon) + math.pi) % (2 * math.pi) - math.pi


def horizon_angle(altitude: float, earth: EarthModel) -> float:
    return math.acos(earth.radius / (earth.radius + altitude))


def visibility_footprint(sat: SatelliteState, earth: EarthModel) -> Footprint:
    r = float(np.linalg.norm(sat.position))
    lat, lon = subsatellite_point(sat.position, earth, sat.epoch_offset)
    return Footprint(float(lat), float(lon), math.acos(min(1.0, earth.radius / r)))


def central_angle(lat1, lon1, lat2, lon2):
    """Great-circle angle between points, haversine form (stable near 0)."""
    s = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    return 2 * np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0)))


def intersat_visible(sat_a: SatelliteState, sat_b: SatelliteState, earth: EarthModel) -> bool:
    """True when the straight segment between the satellites clears the Earth."""
    p = np.asarray(sat_a.position, dtype=float)
    q = np.asarray(sat_b.position, dtype=float)
    d = q - p
    dd = float(d @ d)
    if dd == 0.0:
        return bool(np.linalg.norm(p) > earth.radius)
    s = min(1.0, max(0.0, -float(p @ d) / dd))
    return bool(np.linalg.norm(p + s * d) > earth.radius)


def orbit_over(lat: float, lon: float, t: float, altitude: float, earth: EarthModel,
               inclination: float = math.pi / 2, ascending: bool = True) -> OrbitSpec:
    """Circular orbit whose sub-satellite point is (lat, lon) at time ``t``."""
    si = math.sin(inclination)
    if si <= 0 or abs(math.sin(lat)) > si + 1e-12:
        raise ValueError("latitude is not reachable with this inclination")
    u = math.asin(max(-1.0, min(1.0, math.sin(lat) / si)))
    if not ascending:
        u = math.pi - u
    alpha = lon + earth.rotation_rate * t
    raan = alpha - math.atan2(math.sin(u) * math.cos(inclination), math.cos(u))
    n = math.sqrt(earth.mu / (earth.radius + altitude) ** 3)
    return OrbitSpec(altitude, inclination, raan % (2 * math.pi), u - n * t)
