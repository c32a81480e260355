"""Bell violation shadows rasterised on a latitude/longitude lattice.

Cells are evaluated independently: each (cell, run) pair draws its counts
from uniforms keyed by (seed, cell id, run), so results do not depend on
chunking, worker count or evaluation order, and different parameter settings
share randomness cell by cell.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from bellshadow import photonsim as ps
from bellshadow.belltest import BellTestConfig, chsh_from_counts, summarize_runs
from bellshadow.channel import ChannelParams, Direction, channel_transmittance
from bellshadow.geodyn import (EarthModel, GroundStation, OrbitSpec, central_angle, ground_state_arrays,
                               horizon_angle, intersat_visible, link_arrays, orbit_state_arrays, propagate,
                               subsatellite_point)
from bellshadow.kernels import counter_uniforms


class Status(IntEnum):
    OUTSIDE_VISIBILITY = 0
    VISIBLE_NO_VIOLATION = 1
    VIOLATION = 2


STATUS_NAMES = {s: s.name.lower() for s in Status}


class Scenario:
    SINGLE_DOWNLINK = "single_downlink"
    SINGLE_UPLINK = "single_uplink"
    DOUBLE_DOWNLINK = "double_downlink"
    SWAP = "swap_double"
    ALL = (SINGLE_DOWNLINK, SINGLE_UPLINK, DOUBLE_DOWNLINK, SWAP)
    TWO_STATION = (DOUBLE_DOWNLINK, SWAP)


@dataclass(frozen=True)
class SimParams:
    """Hardware, source and noise settings shared by every cell."""

    channel: ChannelParams = ChannelParams()
    source: ps.SourceParams = ps.SourceParams()
    noise: ps.NoiseParams = ps.NoiseParams()
    bases: ps.MeasurementBases = ps.MeasurementBases()
    earth: EarthModel = EarthModel()
    slot_duration: float | None = None
    failed_swap: str = "random"

    def slot(self) -> float:
        return ps.default_slot(self.source, self.slot_duration)


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class GeoGrid:
    """Regular lattice of cell centres; ids are row-major over the full globe."""

    lat_step: float = 0.25
    lon_step: float = 0.25
    radius_km: float = EarthModel().radius / 1000.0

    def __post_init__(self):
        if self.lat_step <= 0 or self.lon_step <= 0:
            raise ValueError("grid steps must be positive")
        if not (180.0 / self.lat_step).is_integer() or not (360.0 / self.lon_step).is_integer():
            raise ValueError("grid steps must divide 180 and 360 degrees")

    @property
    def n_rows(self) -> int:
        return int(round(180.0 / self.lat_step))

    @property
    def n_cols(self) -> int:
        return int(round(360.0 / self.lon_step))

    @property
    def n_cells(self) -> int:
        return self.n_rows * self.n_cols

    def lat_of_row(self, row):
        return -90.0 + (np.asarray(row) + 0.5) * self.lat_step

    def lon_of_col(self, col):
        return -180.0 + (np.asarray(col) + 0.5) * self.lon_step

    def centers(self, cell_ids):
        row, col = np.divmod(np.asarray(cell_ids, dtype=np.int64), self.n_cols)
        return self.lat_of_row(row), self.lon_of_col(col)

    def areas(self, cell_ids) -> np.ndarray:
        """Exact spherical areas in km^2."""
        row = np.asarray(cell_ids, dtype=np.int64) // self.n_cols
        lo = np.radians(-90.0 + row * self.lat_step)
        hi = np.radians(-90.0 + (row + 1) * self.lat_step)
        return self.radius_km ** 2 * math.radians(self.lon_step) * (np.sin(hi) - np.sin(lo))

    def all_ids(self) -> np.ndarray:
        return np.arange(self.n_cells, dtype=np.int64)

    def cell_of(self, lat_deg: float, lon_deg: float) -> int:
        row = min(int((lat_deg + 90.0) // self.lat_step), self.n_rows - 1)
        col = int(((lon_deg + 180.0) % 360.0) // self.lon_step)
        return row * self.n_cols + col

    def cap_cells(self, center_lat: float, center_lon: float, angle: float) -> np.ndarray:
        """Ids of cells whose centre lies within ``angle`` (radians) of the centre point."""
        lat_lo = math.degrees(center_lat - angle) - self.lat_step
        lat_hi = math.degrees(center_lat + angle) + self.lat_step
        r0 = max(0, int((lat_lo + 90.0) // self.lat_step))
        r1 = min(self.n_rows - 1, int((lat_hi + 90.0) // self.lat_step))
        rows = np.arange(r0, r1 + 1)
        cols = np.arange(self.n_cols)
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        lat = np.radians(self.lat_of_row(rr))
        lon = np.radians(self.lon_of_col(cc))
        inside = central_angle(center_lat, center_lon, lat, lon) <= angle
        return np.sort((rr * self.n_cols + cc)[inside])


# ---------------------------------------------------------------------------
# maps


@dataclass(frozen=True)
class ShadowCell:
    lat: float
    lon: float
    status: Status
    s_mean: float | None = None
    s_std: float | None = None
    aux: dict = field(default_factory=dict)


@dataclass
class ShadowMap:
    """Array-backed shadow over the evaluated cells (degrees for lat/lon)."""

    grid: GeoGrid
    cell_ids: np.ndarray
    status: np.ndarray
    s_mean: np.ndarray
    s_std: np.ndarray
    valid_runs: np.ndarray
    scenario: str
    epoch: float
    seed: int
    aux: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.cell_ids)

    @property
    def lat(self):
        return self.grid.centers(self.cell_ids)[0]

    @property
    def lon(self):
        return self.grid.centers(self.cell_ids)[1]

    @property
    def area(self):
        return self.grid.areas(self.cell_ids)

    def mask(self, at_least: Status = Status.VIOLATION) -> np.ndarray:
        return self.status >= at_least

    def ids(self, at_least: Status = Status.VIOLATION) -> np.ndarray:
        return self.cell_ids[self.mask(at_least)]

    @property
    def cells(self) -> list[ShadowCell]:
        lat, lon = self.grid.centers(self.cell_ids)
        out = []
        for i in range(len(self)):
            aux = {k: _scalar(v[i]) for k, v in self.aux.items()}
            out.append(ShadowCell(float(lat[i]), float(lon[i]), Status(int(self.status[i])),
                                  _scalar(self.s_mean[i]), _scalar(self.s_std[i]), aux))
        return out


def _scalar(v):
    v = float(v)
    return None if math.isnan(v) else v


def shadow_area(smap: ShadowMap, at_least: Status = Status.VIOLATION) -> float:
    """Total area in km^2 of cells with status at or above ``at_least``."""
    return float(smap.area[smap.mask(at_least)].sum())


def shadow_intersection(a: ShadowMap, b: ShadowMap, at_least: Status = Status.VIOLATION) -> np.ndarray:
    return np.intersect1d(a.ids(at_least), b.ids(at_least))


def shadow_union(a: ShadowMap, b: ShadowMap, at_least: Status = Status.VIOLATION) -> np.ndarray:
    return np.union1d(a.ids(at_least), b.ids(at_least))


def ids_area(grid: GeoGrid, cell_ids) -> float:
    return float(grid.areas(cell_ids).sum())


# ---------------------------------------------------------------------------
# cell evaluation


@dataclass(frozen=True)
class LinkJob:
    """Everything one worker needs to evaluate a batch of units.

    A unit is one ground location with its own start time; ``fixed`` is the
    partner station of two-station scenarios. Angles in radians.
    """

    scenario: str
    orbit: OrbitSpec
    params: SimParams
    cfg: BellTestConfig
    seed: int
    unit_ids: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    t_start: np.ndarray
    fixed: GroundStation | None = None
    p_sw: float = 1.0
    key_fraction: float = 0.0

    def __len__(self):
        return len(self.unit_ids)

    def part(self, lo: int, hi: int) -> LinkJob:
        return replace(self, unit_ids=self.unit_ids[lo:hi], lat=self.lat[lo:hi],
                       lon=self.lon[lo:hi], t_start=self.t_start[lo:hi])


def _link_channel(job: LinkJob, lat, lon, times, direction):
    earth = job.params.earth
    spos, svel = orbit_state_arrays(job.orbit, earth, times)
    gpos, gvel = ground_state_arrays(lat, lon, earth, times)
    dist, cos_z, vrad = link_arrays(spos, svel, gpos, gvel)
    return channel_transmittance(job.params.channel, dist, cos_z, direction), cos_z, vrad


def arm_probabilities(job: LinkJob):
    """Per-(unit, run) slot probabilities of the job's scenario."""
    p = job.params
    ch, nz = p.channel, p.noise
    slot = p.slot()
    times = job.t_start[:, None] + np.arange(job.cfg.n_runs)[None, :] * job.cfg.t_acq
    lat, lon = job.lat[:, None], job.lon[:, None]
    pe = p.source.pair_rate * slot
    if job.scenario == Scenario.SINGLE_DOWNLINK:
        eta, _, _ = _link_channel(job, lat, lon, times, Direction.DOWNLINK)
        probs = ps.slot_probabilities(pe, ch.det_eff_sat, eta * ch.det_eff_gs, 0.0, nz.dark_rate_a * slot,
                                      nz.bkg_rate_b * slot, nz.dark_rate_b * slot)
        return probs, None
    if job.scenario == Scenario.SINGLE_UPLINK:
        eta, _, _ = _link_channel(job, lat, lon, times, Direction.UPLINK)
        probs = ps.slot_probabilities(pe, ch.det_eff_gs, eta * ch.det_eff_sat, 0.0, nz.dark_rate_a * slot,
                                      nz.bkg_rate_b * slot, nz.dark_rate_b * slot)
        return probs, None
    if job.fixed is None:
        raise ValueError(f"scenario {job.scenario} needs a fixed ground station")
    eta_f, _, _ = _link_channel(job, job.fixed.latitude, job.fixed.longitude, times, Direction.DOWNLINK)
    eta_c, _, _ = _link_channel(job, lat, lon, times, Direction.DOWNLINK)
    if job.scenario == Scenario.DOUBLE_DOWNLINK:
        probs = ps.slot_probabilities(pe, eta_f * ch.det_eff_gs, eta_c * ch.det_eff_gs,
                                      nz.bkg_rate_a * slot, nz.dark_rate_a * slot,
                                      nz.bkg_rate_b * slot, nz.dark_rate_b * slot)
        return probs, None
    if job.scenario == Scenario.SWAP:
        ds = nz.dark_rate_sat * slot
        p1 = ps.slot_probabilities(pe, ch.det_eff_sat, eta_f * ch.det_eff_gs, 0.0, ds,
                                   nz.bkg_rate_a * slot, nz.dark_rate_a * slot)
        p2 = ps.slot_probabilities(pe, ch.det_eff_sat, eta_c * ch.det_eff_gs, 0.0, ds,
                                   nz.bkg_rate_b * slot, nz.dark_rate_b * slot)
        return p1, p2
    raise ValueError(f"unknown scenario {job.scenario!r}")


def sample_job_counts(job: LinkJob) -> ps.RunCounts:
    n_slots = int(round(job.cfg.t_acq / job.params.slot()))
    if n_slots < 1:
        raise ValueError("t_acq is shorter than one slot")
    u = counter_uniforms(job.seed, job.unit_ids, job.cfg.n_runs, ps.N_DRAWS)
    p1, p2 = arm_probabilities(job)
    if p2 is None:
        g, c = ps.draw_totals(u, n_slots, p1)
    else:
        if not 0.0 <= job.p_sw <= 1.0:
            raise ValueError(f"p_sw must lie in [0, 1], got {job.p_sw}")
        g, c = ps.draw_swap_totals(u, n_slots, p1, p2, job.p_sw, job.params.failed_swap)
    weights, same = ps.category_layout(job.params.bases, job.key_fraction)
    return ps.split_counts(g, c, u, weights, same)


@dataclass
class UnitStats:
    s_mean: np.ndarray
    s_std: np.ndarray
    valid_runs: np.ndarray
    verdict: np.ndarray
    per_run_s: np.ndarray
    qber_mean: np.ndarray
    qber_std: np.ndarray
    records_mean: np.ndarray

    @classmethod
    def concatenate(cls, parts) -> UnitStats:
        parts = list(parts)
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in cls.__dataclass_fields__))


def qber_from_counts(total, same):
    """Per-run QBER from key-round tallies; matched bases are categories 4 and 7."""
    sifted = total[..., 4] + total[..., 7]
    errors = same[..., 4] + same[..., 7]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(sifted > 0, errors / np.where(sifted > 0, sifted, 1), np.nan), sifted


def evaluate_job(job: LinkJob) -> UnitStats:
    counts = sample_job_counts(job)
    total, same = counts.total, counts.same
    s = chsh_from_counts(total[..., :4], same[..., :4])
    mean, std, n_valid, verdict = summarize_runs(s, job.cfg.confidence_n, job.cfg.min_valid_runs)
    if job.key_fraction > 0:
        q, _ = qber_from_counts(total, same)
        q_mean, q_std, _, _ = summarize_runs(q, 1.0)
    else:
        q_mean = q_std = np.full(len(job), np.nan)
    return UnitStats(mean, std, n_valid, verdict, s, q_mean, q_std, total.sum(axis=-1).mean(axis=-1))


CHUNK = 2048


def default_workers() -> int:
    return max(1, int(os.environ.get("BELLSHADOW_WORKERS", "1")))


def evaluate_units(job: LinkJob, workers: int | None = None, chunk: int | None = None) -> UnitStats:
    """Evaluate in fixed-size chunks; parallel chunks are reassembled in order."""
    workers = default_workers() if workers is None else workers
    chunk = CHUNK if chunk is None else chunk
    parts = [job.part(lo, min(lo + chunk, len(job))) for lo in range(0, max(len(job), 1), chunk)]
    if workers > 1 and len(parts) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return UnitStats.concatenate(pool.map(evaluate_job, parts))
    return UnitStats.concatenate(map(evaluate_job, parts))


# ---------------------------------------------------------------------------
# shadows


def footprint_cells(orbit: OrbitSpec, grid: GeoGrid, earth: EarthModel, t: float):
    """Cells of the visibility cap at ``t`` plus a one-cell rim, with visibility flags."""
    sat = propagate(orbit, earth, t)
    lat0, lon0 = subsatellite_point(sat.position, earth, t)
    gamma = horizon_angle(orbit.altitude, earth)
    rim = math.radians(max(grid.lat_step, grid.lon_step))
    ids = grid.cap_cells(float(lat0), float(lon0), gamma + rim)
    lat, lon = (np.radians(v) for v in grid.centers(ids))
    gpos, gvel = ground_state_arrays(lat, lon, earth, t)
    _, cos_z, _ = link_arrays(sat.position, sat.velocity, gpos, gvel)
    return ids, lat, lon, cos_z > 0.0


def _shadow_from_job(job: LinkJob, grid: GeoGrid, visible, workers, t, extra_aux=None) -> ShadowMap:
    n = len(job.unit_ids)
    s_mean = np.full(n, np.nan)
    s_std = np.full(n, np.nan)
    valid = np.zeros(n, dtype=np.int64)
    status = np.where(visible, Status.VISIBLE_NO_VIOLATION, Status.OUTSIDE_VISIBILITY).astype(np.int8)
    aux = {"records_mean": np.full(n, np.nan)}
    if job.key_fraction > 0:
        aux["qber_mean"] = np.full(n, np.nan)
        aux["qber_std"] = np.full(n, np.nan)
    idx = np.flatnonzero(visible)
    if len(idx):
        sub = replace(job, unit_ids=job.unit_ids[idx], lat=job.lat[idx], lon=job.lon[idx],
                      t_start=job.t_start[idx])
        st = evaluate_units(sub, workers)
        s_mean[idx], s_std[idx], valid[idx] = st.s_mean, st.s_std, st.valid_runs
        status[idx[st.verdict]] = Status.VIOLATION
        aux["records_mean"][idx] = st.records_mean
        if job.key_fraction > 0:
            aux["qber_mean"][idx] = st.qber_mean
            aux["qber_std"][idx] = st.qber_std
    if extra_aux:
        aux.update(extra_aux)
    return ShadowMap(grid, job.unit_ids, status, s_mean, s_std, valid, job.scenario, t, job.seed, aux)


def bell_shadow(scenario: str, orbit: OrbitSpec, grid: GeoGrid, params: SimParams, cfg: BellTestConfig,
                t: float, seed: int = 0, fixed_gs: GroundStation | None = None, p_sw: float = 1.0,
                key_fraction: float = 0.0, workers: int | None = None, unit_offset: int = 0) -> ShadowMap:
    """Shadow of ``scenario`` over the satellite's visibility cap at ``t``."""
    if scenario not in Scenario.ALL:
        raise ValueError(f"unknown scenario {scenario!r}")
    earth = params.earth
    if scenario in Scenario.TWO_STATION:
        if fixed_gs is None:
            raise ValueError(f"scenario {scenario} needs a fixed ground station")
        sat = propagate(orbit, earth, t)
        gpos, gvel = ground_state_arrays(fixed_gs.latitude, fixed_gs.longitude, earth, t)
        if link_arrays(sat.position, sat.velocity, gpos, gvel)[1] <= 0.0:
            raise ValueError("fixed ground station is not visible from the satellite")
    ids, lat, lon, visible = footprint_cells(orbit, grid, earth, t)
    job = LinkJob(scenario, orbit, params, cfg, seed, ids + unit_offset, lat, lon, np.full(len(ids), float(t)),
                  fixed_gs, p_sw, key_fraction)
    smap = _shadow_from_job(job, grid, visible, workers, t)
    smap.cell_ids = ids
    return smap


def bell_shadow_single_downlink(orbit, grid, params, cfg, t, seed=0, workers=None) -> ShadowMap:
    return bell_shadow(Scenario.SINGLE_DOWNLINK, orbit, grid, params, cfg, t, seed, workers=workers)


def bell_shadow_single_uplink(orbit, grid, params, cfg, t, seed=0, workers=None) -> ShadowMap:
    return bell_shadow(Scenario.SINGLE_UPLINK, orbit, grid, params, cfg, t, seed, workers=workers)


def bell_shadow_double_downlink(orbit, fixed_gs, grid, params, cfg, t, seed=0, workers=None) -> ShadowMap:
    return bell_shadow(Scenario.DOUBLE_DOWNLINK, orbit, grid, params, cfg, t, seed, fixed_gs, workers=workers)


def bell_shadow_swapped(orbit, fixed_gs, grid, params, cfg, p_sw, t, seed=0, workers=None) -> ShadowMap:
    return bell_shadow(Scenario.SWAP, orbit, grid, params, cfg, t, seed, fixed_gs, p_sw=p_sw, workers=workers)


# ---------------------------------------------------------------------------
# constellations


def polar_ring(n_sats: int, altitude: float, raan: float = 0.0, phase0: float = 0.0) -> list[OrbitSpec]:
    return [OrbitSpec(altitude, math.pi / 2, raan, phase0 + 2 * math.pi * k / n_sats) for k in range(n_sats)]


class _DisjointSets:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def nadir_station(orbit: OrbitSpec, earth: EarthModel, t: float, name: str = "") -> GroundStation:
    sat = propagate(orbit, earth, t)
    lat, lon = subsatellite_point(sat.position, earth, t)
    return GroundStation(float(lat), float(wrap_lon(float(lon))), name)


def wrap_lon(lon: float) -> float:
    out = (lon + math.pi) % (2 * math.pi) - math.pi
    return -math.pi if out >= math.pi else out


def constellation_shadow(constellation: list[OrbitSpec], mode: str, grid: GeoGrid, params: SimParams,
                         cfg: BellTestConfig, t: float, seed: int = 0, scenario: str = Scenario.DOUBLE_DOWNLINK,
                         workers: int | None = None) -> ShadowMap:
    """Union of per-satellite shadows with satellite labels and component ids.

    ``mode="double"``: each satellite pairs cells with a station at its own
    nadir; satellites are joined only when their shadows share a cell.
    ``mode="repeater"``: satellites are also joined along chains of mutually
    visible neighbours.
    """
    if not constellation:
        raise ValueError("constellation needs at least one satellite")
    if mode not in ("double", "repeater"):
        raise ValueError(f"mode must be 'double' or 'repeater', got {mode!r}")
    earth = params.earth
    maps = []
    for k, orbit in enumerate(constellation):
        fixed = nadir_station(orbit, earth, t, f"nadir-{k}") if scenario in Scenario.TWO_STATION else None
        maps.append(bell_shadow(scenario, orbit, grid, params, cfg, t, seed, fixed,
                                workers=workers, unit_offset=k * grid.n_cells))
    sets = _DisjointSets(len(constellation))
    owner: dict[int, int] = {}
    for k, m in enumerate(maps):
        for cid in m.ids().tolist():
            if cid in owner:
                sets.union(owner[cid], k)
            else:
                owner[cid] = k
    if mode == "repeater":
        states = [propagate(o, earth, t) for o in constellation]
        for i in range(len(states)):
            for j in range(i + 1, len(states)):
                if intersat_visible(states[i], states[j], earth):
                    sets.union(i, j)
    # merge per-satellite maps cell by cell, keeping the strongest status
    all_ids = np.unique(np.concatenate([m.cell_ids for m in maps]))
    pos = {int(c): i for i, c in enumerate(all_ids)}
    n = len(all_ids)
    status = np.zeros(n, dtype=np.int8)
    s_mean = np.full(n, np.nan)
    s_std = np.full(n, np.nan)
    valid = np.zeros(n, dtype=np.int64)
    sat_label = np.full(n, -1, dtype=np.int64)
    component = np.full(n, -1, dtype=np.int64)
    for k, m in enumerate(maps):
        idx = np.array([pos[int(c)] for c in m.cell_ids], dtype=np.int64)
        better = m.status > status[idx]
        sel = idx[better]
        status[sel] = m.status[better]
        s_mean[sel], s_std[sel], valid[sel] = m.s_mean[better], m.s_std[better], m.valid_runs[better]
        hit = idx[(m.status == Status.VIOLATION) & (sat_label[idx] < 0)]
        sat_label[hit] = k
    roots = sorted({sets.find(int(k)) for k in sat_label[sat_label >= 0]})
    relabel = {r: i for i, r in enumerate(roots)}
    lit = sat_label >= 0
    component[lit] = [relabel[sets.find(int(k))] for k in sat_label[lit]]
    aux = {"satellite": sat_label.astype(float), "component": component.astype(float)}
    return ShadowMap(grid, all_ids, status, s_mean, s_std, valid, f"constellation_{mode}", t, seed, aux)


def n_components(smap: ShadowMap) -> int:
    comp = smap.aux["component"]
    return len(np.unique(comp[comp >= 0]))
