import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bellshadow import apps
from bellshadow import photonsim as ps
from bellshadow.belltest import BellTestConfig
from bellshadow.channel import ChannelParams
from bellshadow.geodyn import EarthModel, GroundStation, LinkGeometry, orbit_over
from bellshadow.shadows import GeoGrid, SimParams, Status, bell_shadow_double_downlink, shadow_area

EARTH = EarthModel()
NYC = GroundStation.from_degrees(40.7128, -74.0060, "New York City")
BOSTON = GroundStation.from_degrees(42.3601, -71.0589, "Boston")
OVER_NYC = orbit_over(math.radians(40.0), math.radians(-73.0), 0.0, 500e3, EARTH)
GRID = GeoGrid(1.0, 1.0)


def c_light_t_bin(n_min, v, rate, eta):
    """Independent arithmetic with the exact speed of light."""
    return n_min * abs(v) / (rate * eta * 299_792_458.0)


@pytest.mark.parametrize("f", [1.0, 0.0, 0.78, 0.5])
def test_qber_of_mixed_stream(f):
    rng = np.random.default_rng(0)
    runs = [apps.key_records(4000, f, rng) for _ in range(30)]
    q = apps.qber_from_records(runs)
    expected = (1 - f) / 2
    if f == 1.0:
        assert q.qber_mean == 0.0
    else:
        assert q.qber_mean == pytest.approx(expected, abs=4 * q.qber_std / math.sqrt(30) + 1e-3)
    assert q.sifted_count > 0


def test_boundary_genuine_fraction():
    assert (1 - 0.78) / 2 == pytest.approx(0.11)


def test_qber_edge_cases():
    assert apps.qber_from_records([]).qber_mean is None
    one = apps.key_records(100, 1.0, np.random.default_rng(1))
    assert apps.qber_from_records(one).qber_mean == 0.0
    assert apps.qber_from_records(one.to_list()).qber_mean == 0.0
    assert apps.sift(one)[1] == int((one.alice_basis == one.bob_basis).sum())


def test_qkd_config_validation():
    with pytest.raises(ValueError):
        apps.QkdConfig(qber_threshold=0.6)
    with pytest.raises(ValueError):
        apps.QkdConfig(key_fraction=1.0)
    odd = apps.QkdConfig(key_basis_alice=(0.0, 0.3))
    with pytest.raises(ValueError):
        apps.qber_shadow(OVER_NYC, NYC, GRID, SimParams(), BellTestConfig(), 0.0, odd)


def test_noiseless_qber_shadow_is_footprint():
    p = SimParams(channel=ChannelParams(atm_zenith_transmittance=1.0))
    m = apps.qber_shadow(OVER_NYC, NYC, GRID, p, BellTestConfig(t_acq=5e-3), 0.0, seed=1)
    assert shadow_area(m) == pytest.approx(shadow_area(m, Status.VISIBLE_NO_VIOLATION), rel=0.01)
    assert np.nanmax(m.aux["qber_mean"]) < 0.02


def test_bell_cells_have_low_qber():
    noise = ps.NoiseParams(1e4, 1e4)
    m = apps.qber_shadow(OVER_NYC, NYC, GRID, SimParams(noise=noise), BellTestConfig(t_acq=1e-2), 0.0, seed=2)
    bell = m.aux["bell_violation"] == 1.0
    assert bell.sum() > 50
    assert np.mean(m.aux["qber_mean"][bell] < 0.15) >= 0.95
    assert m.scenario == "qkd"


def test_t_bin_arithmetic():
    geom = LinkGeometry(1e6, True, 7000.0, 0.3)
    t = apps.t_bin(apps.QcsConfig(30, 1e7), geom, 1e-3)
    assert t == pytest.approx(7.0e-8, rel=2e-3)
    assert t == pytest.approx(c_light_t_bin(30, 7000.0, 1e7, 1e-3), rel=1e-15)
    assert apps.t_bin(apps.QcsConfig(30, 1e7), LinkGeometry(1e6, True, 0.0, 0.3), 1e-3) == 0.0
    assert apps.t_bin(apps.QcsConfig(60, 1e7), geom, 1e-3) == 2 * t
    with pytest.raises(ValueError):
        apps.t_bin(apps.QcsConfig(), geom, 0.0)
    with pytest.raises(ValueError):
        apps.QcsConfig(n_min=0)


@given(st.integers(1, 1000), st.floats(-8000, 8000), st.floats(1e3, 1e9), st.floats(1e-9, 1.0))
def test_t_bin_matches_reimplementation(n_min, v, rate, eta):
    got = float(apps.t_bin_array(n_min, v, rate, eta))
    assert got == pytest.approx(c_light_t_bin(n_min, v, rate, eta), rel=4 * np.finfo(float).eps, abs=0.0)


def test_infinite_target_covers_usable_footprint():
    qcs = apps.QcsConfig(target_precision=math.inf)
    m = apps.precision_shadow(OVER_NYC, GRID, SimParams(), qcs, 0.0)
    usable = (m.status >= Status.VISIBLE_NO_VIOLATION) & (m.aux["eta_uplink"] > 0)
    np.testing.assert_array_equal(m.mask(), usable)


def test_precision_shadow_shrinks_with_n_min_and_secure_is_subset():
    p = SimParams(noise=ps.NoiseParams(0.0, 0.0, 100.0, 100.0))
    cfg = BellTestConfig(t_acq=2e-2)
    areas, prev = [], None
    for n in (5, 10, 30, 60):
        plain = apps.precision_shadow(OVER_NYC, GRID, p, apps.QcsConfig(n), 0.0, seed=3)
        secure = apps.precision_shadow(OVER_NYC, GRID, p, apps.QcsConfig(n), 0.0, True, cfg, seed=3)
        assert np.isin(secure.ids(), plain.ids()).all()
        if prev is not None:
            assert np.isin(plain.ids(), prev).all()
        prev = plain.ids()
        areas.append(shadow_area(plain))
    assert areas == sorted(areas, reverse=True) and areas[-1] < areas[0]
    assert np.isfinite(plain.aux["t_bin"][plain.mask()]).all()


def test_timeseries_shapes_and_visibility():
    p = SimParams(noise=ps.NoiseParams(1e4, 1e4, 1e3, 1e3))
    times = np.arange(0.0, 2000.0, 100.0)
    out = apps.timeseries(OVER_NYC, NYC, BOSTON, p, BellTestConfig(t_acq=1e-2), times, seed=4)
    assert set(out) >= {"t", "visible", "s_mean", "s_std", "qber_mean", "qber_std", "valid_runs"}
    assert out["visible"][0] and not out["visible"].all()
    assert np.isnan(out["s_mean"][~out["visible"]]).all()
    again = apps.timeseries(OVER_NYC, NYC, BOSTON, p, BellTestConfig(t_acq=1e-2), times, seed=4)
    np.testing.assert_array_equal(out["s_mean"], again["s_mean"])


def test_qber_shadow_matches_bell_verdicts():
    noise = ps.NoiseParams(1e3, 1e3)
    p = SimParams(noise=noise)
    cfg = BellTestConfig(t_acq=1e-2)
    q = apps.qber_shadow(OVER_NYC, NYC, GRID, p, cfg, 0.0, seed=5)
    b = bell_shadow_double_downlink(OVER_NYC, NYC, GRID, p, cfg, 0.0, seed=5)
    np.testing.assert_array_equal(q.cell_ids, b.cell_ids)
    assert shadow_area(q) > 0
