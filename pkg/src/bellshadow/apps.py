"""Applications on top of the event stream: QKD error rates, clock-sync precision."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from bellshadow import photonsim as ps
from bellshadow.belltest import BellTestConfig, summarize_runs
from bellshadow.channel import Direction, channel_transmittance
from bellshadow.geodyn import (GroundStation, LinkGeometry, OrbitSpec, ground_state_arrays, link_arrays,
                               orbit_state_arrays, propagate)
from bellshadow.shadows import (GeoGrid, LinkJob, Scenario, ShadowMap, SimParams, Status, bell_shadow,
                                evaluate_units, footprint_cells)

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class QkdConfig:
    key_basis_alice: tuple[float, float] = (0.0, math.pi / 4)
    key_basis_bob: tuple[float, float] = (0.0, math.pi / 4)
    qber_threshold: float = 0.11
    key_fraction: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.qber_threshold < 0.5:
            raise ValueError(f"qber_threshold must lie in (0, 0.5), got {self.qber_threshold}")
        if not 0.0 < self.key_fraction < 1.0:
            raise ValueError(f"key_fraction must lie in (0, 1), got {self.key_fraction}")

    @property
    def bases(self) -> ps.MeasurementBases:
        return ps.MeasurementBases(self.key_basis_alice, self.key_basis_bob)


@dataclass(frozen=True)
class QberResult:
    qber_mean: float | None
    qber_std: float | None
    sifted_count: int


def sift(records) -> tuple[int, int]:
    """(errors, sifted) of one run's key rounds with matching basis index."""
    batch = ps.RecordBatch.from_records(records)
    keep = batch.key_round & (batch.alice_basis == batch.bob_basis)
    prod = batch.alice_outcome[keep].astype(int) * batch.bob_outcome[keep].astype(int)
    return int((prod > 0).sum()), int(keep.sum())


def qber_from_records(runs) -> QberResult:
    """QBER averaged over runs; a single record list counts as one run.

    Singlet key bits at equal angles are anti-correlated, so an error is a
    record whose outcome product is +1.
    """
    if isinstance(runs, ps.RecordBatch):
        runs = [runs]
    runs = list(runs)
    if runs and isinstance(runs[0], ps.CoincidenceRecord):
        runs = [runs]
    per_run, sifted_total = [], 0
    for run in runs:
        errors, sifted = sift(run)
        sifted_total += sifted
        per_run.append(errors / sifted if sifted else np.nan)
    if sifted_total == 0:
        return QberResult(None, None, 0)
    mean, std, _, _ = summarize_runs(np.array(per_run), 1.0)
    return QberResult(float(mean), float(std), sifted_total)


def key_records(n: int, genuine_fraction: float, rng: np.random.Generator,
                qkd: QkdConfig = QkdConfig()) -> ps.RecordBatch:
    """Key-round records with bases drawn uniformly from the key sets."""
    batch = ps.simulate_fixed_coincidences(n, genuine_fraction, qkd.bases, rng, balanced=False)
    batch.key_round[:] = True
    return batch


def qber_shadow(orbit: OrbitSpec, fixed_gs: GroundStation, grid: GeoGrid, params: SimParams,
                cfg: BellTestConfig, t: float, qkd: QkdConfig = QkdConfig(), seed: int = 0,
                workers: int | None = None) -> ShadowMap:
    """Double-downlink cells marked by QBER below threshold; Bell verdicts kept in aux.

    Key and Bell rounds share one pass, split by ``qkd.key_fraction``.
    """
    _check_key_bases(qkd)
    bell = bell_shadow(Scenario.DOUBLE_DOWNLINK, orbit, grid, params, cfg, t, seed, fixed_gs,
                       key_fraction=qkd.key_fraction, workers=workers)
    q = bell.aux["qber_mean"]
    visible = bell.status >= Status.VISIBLE_NO_VIOLATION
    with np.errstate(invalid="ignore"):
        good = visible & (q < qkd.qber_threshold)
    status = np.where(good, Status.VIOLATION, np.where(visible, Status.VISIBLE_NO_VIOLATION,
                                                       Status.OUTSIDE_VISIBILITY)).astype(np.int8)
    aux = dict(bell.aux)
    aux["bell_violation"] = (bell.status == Status.VIOLATION).astype(float)
    return ShadowMap(grid, bell.cell_ids, status, bell.s_mean, bell.s_std, bell.valid_runs, "qkd", t, seed, aux)


def _check_key_bases(qkd: QkdConfig):
    if tuple(qkd.key_basis_alice) != tuple(ps.KEY_BASES.alice) or tuple(qkd.key_basis_bob) != tuple(ps.KEY_BASES.bob):
        raise ValueError("the counts engine implements the {0, 45} degree key bases only")


# ---------------------------------------------------------------------------
# clock synchronisation


@dataclass(frozen=True)
class QcsConfig:
    n_min: int = 30
    source_rate: float = 1e7
    target_precision: float = 1e-9

    def __post_init__(self):
        if self.n_min < 1:
            raise ValueError(f"n_min must be at least 1, got {self.n_min}")
        if self.source_rate <= 0:
            raise ValueError("source_rate must be positive")
        if self.target_precision <= 0:
            raise ValueError("target_precision must be positive")


@dataclass(frozen=True)
class PrecisionResult:
    t_bin: float
    secure: bool


def t_bin(cfg: QcsConfig, geom: LinkGeometry, eta: float) -> float:
    """Sync precision N_min |v_rad| / (R eta c)."""
    return float(t_bin_array(cfg.n_min, geom.radial_velocity, cfg.source_rate, eta))


def t_bin_array(n_min, radial_velocity, rate, eta):
    eta = np.asarray(eta, dtype=float)
    if np.any(eta <= 0):
        raise ValueError("channel efficiency must be positive")
    return n_min * np.abs(radial_velocity) / (rate * eta * SPEED_OF_LIGHT)


def precision_shadow(orbit: OrbitSpec, grid: GeoGrid, params: SimParams, qcs: QcsConfig, t: float,
                     secure: bool = False, bell_cfg: BellTestConfig | None = None, seed: int = 0,
                     workers: int | None = None) -> ShadowMap:
    """Cells whose uplink supports t_bin <= target; ``secure`` also demands a 1-sigma uplink Bell violation."""
    earth, ch = params.earth, params.channel
    ids, lat, lon, visible = footprint_cells(orbit, grid, earth, t)
    sat = propagate(orbit, earth, t)
    gpos, gvel = ground_state_arrays(lat, lon, earth, t)
    dist, cos_z, vrad = link_arrays(sat.position, sat.velocity, gpos, gvel)
    eta = channel_transmittance(ch, dist, cos_z, Direction.UPLINK) * ch.det_eff_sat * ch.det_eff_gs
    usable = visible & (eta > 0)
    tb = np.full(len(ids), np.inf)
    tb[usable] = t_bin_array(qcs.n_min, vrad[usable], qcs.source_rate, eta[usable])
    ok = usable & (tb <= qcs.target_precision)
    s_mean = np.full(len(ids), np.nan)
    s_std = np.full(len(ids), np.nan)
    valid = np.zeros(len(ids), dtype=np.int64)
    aux = {"t_bin": np.where(usable, tb, np.nan), "radial_velocity": vrad, "eta_uplink": eta}
    if secure:
        cfg = replace(bell_cfg or BellTestConfig(), confidence_n=1.0)
        up = bell_shadow(Scenario.SINGLE_UPLINK, orbit, grid, params, cfg, t, seed, workers=workers)
        ok &= up.status == Status.VIOLATION
        s_mean, s_std, valid = up.s_mean, up.s_std, up.valid_runs
    status = np.where(ok, Status.VIOLATION, np.where(visible, Status.VISIBLE_NO_VIOLATION,
                                                     Status.OUTSIDE_VISIBILITY)).astype(np.int8)
    name = "qcs_secure" if secure else "qcs_precision"
    return ShadowMap(grid, ids, status, s_mean, s_std, valid, name, t, seed, aux)


# ---------------------------------------------------------------------------
# time series


def timeseries(orbit: OrbitSpec, station_a: GroundStation, station_b: GroundStation, params: SimParams,
               cfg: BellTestConfig, times, seed: int = 0, key_fraction: float = 0.5,
               workers: int | None = None) -> dict[str, np.ndarray]:
    """Double-downlink CHSH and QBER statistics between two stations at each sample time."""
    times = np.asarray(times, dtype=float)
    earth = params.earth
    spos, svel = orbit_state_arrays(orbit, earth, times)
    vis = np.ones(len(times), dtype=bool)
    for gs in (station_a, station_b):
        gpos, gvel = ground_state_arrays(gs.latitude, gs.longitude, earth, times)
        vis &= link_arrays(spos, svel, gpos, gvel)[1] > 0.0
    out = {k: np.full(len(times), np.nan) for k in ("s_mean", "s_std", "qber_mean", "qber_std")}
    out["valid_runs"] = np.zeros(len(times), dtype=np.int64)
    idx = np.flatnonzero(vis)
    if len(idx):
        job = LinkJob(Scenario.DOUBLE_DOWNLINK, orbit, params, cfg, seed, idx.astype(np.int64),
                      np.full(len(idx), station_b.latitude), np.full(len(idx), station_b.longitude),
                      times[idx], station_a, 1.0, key_fraction)
        st = evaluate_units(job, workers)
        out["s_mean"][idx], out["s_std"][idx] = st.s_mean, st.s_std
        out["qber_mean"][idx], out["qber_std"][idx] = st.qber_mean, st.qber_std
        out["valid_runs"][idx] = st.valid_runs
    out["t"] = times
    out["visible"] = vis
    return out
