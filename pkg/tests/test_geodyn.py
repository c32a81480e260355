import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bellshadow.geodyn import (EarthModel, GroundStation, OrbitSpec, central_angle, horizon_angle,
                               intersat_visible, link_geometry, orbit_over, propagate, subsatellite_point,
                               visibility_footprint)

EARTH = EarthModel()
H = 500e3


def kepler_period(altitude, radius=6_371_000.0, mu=3.986004418e14):
    return 2 * math.pi * math.sqrt((radius + altitude) ** 3 / mu)


def test_period_matches_kepler():
    orbit = OrbitSpec(H)
    assert abs(orbit.period(EARTH) - kepler_period(H)) < 1e-9
    # mean radius 6371 km gives 5668.1 s; the often quoted 5677 s uses the equatorial radius
    assert orbit.period(EARTH) == pytest.approx(5668.14, abs=0.01)
    equatorial = EarthModel(radius=6_378_137.0)
    assert abs(orbit.period(equatorial) - 5677) < 1.0


def test_epoch_position_is_phase():
    orbit = OrbitSpec(H, math.pi / 2, 0.3, 0.7)
    pos = propagate(orbit, EARTH, 0.0).position
    r = EARTH.radius + H
    # polar orbit: the phase angle is measured in the plane spanned by the node and the pole
    expected = r * np.array([math.cos(0.3) * math.cos(0.7), math.sin(0.3) * math.cos(0.7), math.sin(0.7)])
    np.testing.assert_allclose(pos, expected, rtol=1e-12)


def test_full_period_returns_to_start():
    orbit = OrbitSpec(H, 1.2, 0.4, 2.0)
    p0 = propagate(orbit, EARTH, 0.0).position
    p1 = propagate(orbit, EARTH, orbit.period(EARTH)).position
    assert np.linalg.norm(p1 - p0) / np.linalg.norm(p0) < 1e-9


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        propagate(OrbitSpec(H), EARTH, -1.0)


@pytest.mark.parametrize("kwargs", [dict(altitude=0.0), dict(altitude=H, inclination=4.0)])
def test_bad_orbit(kwargs):
    with pytest.raises(ValueError):
        OrbitSpec(**kwargs)


def test_velocity_is_derivative_of_position():
    orbit = OrbitSpec(H, 0.9, 1.1, 0.2)
    dt = 1e-2
    a = propagate(orbit, EARTH, 100.0 - dt)
    b = propagate(orbit, EARTH, 100.0 + dt)
    np.testing.assert_allclose((b.position - a.position) / (2 * dt), propagate(orbit, EARTH, 100.0).velocity,
                               rtol=1e-7, atol=1e-6)


def test_nadir_station_geometry():
    orbit = orbit_over(math.radians(12.0), math.radians(30.0), 50.0, H, EARTH)
    sat = propagate(orbit, EARTH, 50.0)
    geom = link_geometry(sat, GroundStation.from_degrees(12.0, 30.0), EARTH)
    assert geom.visible
    assert geom.distance == pytest.approx(H, rel=1e-9)
    assert geom.zenith_angle == pytest.approx(0.0, abs=1e-6)


def test_horizon_distance():
    gamma = math.acos(EARTH.radius / (EARTH.radius + H))
    sat = propagate(OrbitSpec(H, math.pi / 2, 0.0, 0.0), EARTH, 0.0)  # above (0, 0)
    gs = GroundStation(gamma, 0.0)
    geom = link_geometry(sat, gs, EARTH)
    assert geom.zenith_angle == pytest.approx(math.pi / 2, abs=1e-9)
    assert geom.distance == pytest.approx(2_574_000, rel=2e-3)
    assert geom.distance == pytest.approx(math.sqrt((EARTH.radius + H) ** 2 - EARTH.radius ** 2), rel=1e-12)


def test_antipode_not_visible():
    sat = propagate(OrbitSpec(H), EARTH, 0.0)
    assert not link_geometry(sat, GroundStation(0.0, -math.pi), EARTH).visible


def test_cap_angle():
    gamma = horizon_angle(H, EARTH)
    assert math.degrees(gamma) == pytest.approx(22.0, abs=0.05)
    assert abs(math.degrees(gamma) - math.degrees(math.acos(6371 / 6871))) < 0.01
    assert EARTH.radius * gamma / 1e3 == pytest.approx(2445, abs=5)
    assert horizon_angle(1e-3, EARTH) < 1e-4


def test_footprint_boundary_and_center():
    orbit = OrbitSpec(H, 1.0, 0.5, 0.3)
    sat = propagate(orbit, EARTH, 123.0)
    fp = visibility_footprint(sat, EARTH)
    lat, lon = subsatellite_point(sat.position, EARTH, 123.0)
    assert fp.center_lat == pytest.approx(float(lat))
    assert fp.central_angle == pytest.approx(horizon_angle(H, EARTH), abs=1e-12)
    # a point exactly on the cap edge, due north of the centre
    assert fp.contains(fp.center_lat + fp.central_angle, fp.center_lon)
    assert not fp.contains(fp.center_lat + fp.central_angle + 1e-6, fp.center_lon)


def test_intersat_visibility():
    ring = [OrbitSpec(H, math.pi / 2, 0.0, 2 * math.pi * k / 10) for k in range(10)]
    states = [propagate(o, EARTH, 0.0) for o in ring]
    assert intersat_visible(states[0], states[1], EARTH)
    # closest approach of the chord is (R + h) cos 18 deg
    assert (EARTH.radius + H) * math.cos(math.radians(18)) / 1e3 == pytest.approx(6535, abs=1)
    assert not intersat_visible(states[0], states[5], EARTH)
    assert intersat_visible(states[0], states[0], EARTH)


def test_station_validation():
    with pytest.raises(ValueError):
        GroundStation(2.0, 0.0)
    with pytest.raises(ValueError):
        GroundStation(0.0, math.pi)
    assert GroundStation.from_degrees(0, 180).longitude == pytest.approx(-math.pi)


@given(st.floats(-60, 60), st.floats(-179, 179), st.floats(0, 5000), st.booleans())
def test_orbit_over_places_subsatellite_point(lat, lon, t, ascending):
    orbit = orbit_over(math.radians(lat), math.radians(lon), t, H, EARTH, math.radians(75), ascending)
    sat = propagate(orbit, EARTH, t)
    got_lat, got_lon = subsatellite_point(sat.position, EARTH, t)
    assert float(central_angle(got_lat, got_lon, math.radians(lat), math.radians(lon))) < 1e-9


@given(st.floats(-1.5, 1.5), st.floats(-3.1, 3.1), st.floats(-1.5, 1.5), st.floats(-3.1, 3.1))
def test_central_angle_symmetric_and_bounded(a, b, c, d):
    x = float(central_angle(a, b, c, d))
    assert x == pytest.approx(float(central_angle(c, d, a, b)), abs=1e-12)
    assert 0.0 <= x <= math.pi + 1e-12


@given(st.floats(0, 6000), st.floats(0, math.pi), st.floats(0, 2 * math.pi))
def test_orbit_radius_constant(t, inc, raan):
    orbit = OrbitSpec(H, inc, raan, 0.1)
    sat = propagate(orbit, EARTH, t)
    assert np.linalg.norm(sat.position) == pytest.approx(EARTH.radius + H, rel=1e-12)
    assert abs(float(sat.position @ sat.velocity)) < 1e-3 * np.linalg.norm(sat.position)
