"""Command line: ``bellshadow {shadow,timeseries,analytic,sweep} --config FILE``.

Flags override the file, the file overrides built-in defaults.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import time
from dataclasses import dataclass, replace
from importlib import metadata
from pathlib import Path

import numpy as np

from bellshadow import analytic, apps, io
from bellshadow import photonsim as ps
from bellshadow.belltest import BellTestConfig
from bellshadow.channel import ChannelParams
from bellshadow.config import ConfigError, ScenarioConfig, load_config, override, serialize_config
from bellshadow.geodyn import EarthModel, GroundStation, OrbitSpec, orbit_over
from bellshadow.kernels import BACKEND
from bellshadow.shadows import (GeoGrid, Scenario, ShadowMap, SimParams, bell_shadow, constellation_shadow,
                                default_workers, n_components, polar_ring, shadow_area)

VERBS = ("shadow", "timeseries", "analytic", "sweep")


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover
        return "unknown"


# ---------------------------------------------------------------------------
# config -> domain objects


def sim_params(cfg: ScenarioConfig) -> SimParams:
    c, n = cfg.channel, cfg.noise
    return SimParams(
        channel=ChannelParams(c.wavelength, c.sat_radius, c.gs_radius, c.det_eff_sat, c.det_eff_gs,
                              c.atm_zenith_transmittance),
        source=ps.SourceParams(cfg.source.pair_rate),
        noise=ps.NoiseParams(n.bkg_rate_a, n.bkg_rate_b, n.dark_rate_a, n.dark_rate_b, n.dark_rate_sat),
        slot_duration=cfg.source.slot_duration,
        failed_swap=cfg.swap.failed_swap,
    )


def bell_config(cfg: ScenarioConfig) -> BellTestConfig:
    b = cfg.bell
    return BellTestConfig(b.n_runs, b.t_acq, b.confidence_n, b.min_valid_runs)


def orbit_of(cfg: ScenarioConfig, earth: EarthModel) -> OrbitSpec:
    o = cfg.orbit
    inc = math.radians(o.inclination_deg)
    if o.over_lat_deg is not None:
        return orbit_over(math.radians(o.over_lat_deg), math.radians(o.over_lon_deg), o.over_time,
                          o.altitude, earth, inc)
    return OrbitSpec(o.altitude, inc, math.radians(o.raan_deg), math.radians(o.phase_deg))


def station(section, default_name: str) -> GroundStation | None:
    if section is None:
        return None
    return GroundStation.from_degrees(section.lat_deg, section.lon_deg, section.name or default_name)


def grid_of(cfg: ScenarioConfig) -> GeoGrid:
    return GeoGrid(cfg.grid.lat_step_deg, cfg.grid.lon_step_deg)


def shadow_snapshot(cfg: ScenarioConfig, t: float, workers: int) -> ShadowMap:
    params = sim_params(cfg)
    bell = bell_config(cfg)
    grid = grid_of(cfg)
    orbit = orbit_of(cfg, params.earth)
    fixed = station(cfg.station, "fixed")
    s = cfg.scenario
    if s in Scenario.ALL:
        return bell_shadow(s, orbit, grid, params, bell, t, cfg.seed, fixed, p_sw=cfg.swap.p_sw, workers=workers)
    if s == "qkd":
        qkd = apps.QkdConfig(qber_threshold=cfg.qkd.qber_threshold, key_fraction=cfg.qkd.key_fraction)
        return apps.qber_shadow(orbit, fixed, grid, params, bell, t, qkd, cfg.seed, workers)
    if s in ("qcs_precision", "qcs_secure"):
        qcs = apps.QcsConfig(cfg.qcs.n_min, cfg.source.pair_rate, cfg.qcs.target_precision)
        return apps.precision_shadow(orbit, grid, params, qcs, t, s == "qcs_secure", bell, cfg.seed, workers)
    if s in ("constellation_double", "constellation_repeater"):
        ring = polar_ring(cfg.orbit.n_sats, cfg.orbit.altitude, orbit.raan, orbit.phase_at_epoch)
        mode = "double" if s == "constellation_double" else "repeater"
        return constellation_shadow(ring, mode, grid, params, bell, t, cfg.seed, workers=workers)
    raise ConfigError([("scenario", None, f"scenario {s} has no shadow output")])


# ---------------------------------------------------------------------------
# verbs


@dataclass
class Outputs:
    """Tracks written files so a failed run can remove them."""

    directory: Path
    files: list

    def path(self, name: str) -> Path:
        p = self.directory / name
        self.files.append(p)
        return p

    def discard(self):
        for p in self.files:
            if p.exists():
                p.unlink()


def _stem(cfg: ScenarioConfig, verb: str) -> str:
    return cfg.output.name or f"{cfg.scenario}_{verb}"


def run_shadow(cfg, out: Outputs, fmt, workers):
    maps = [shadow_snapshot(cfg, float(t), workers) for t in cfg.time.epochs]
    io.write_shadow(out.path(f"{_stem(cfg, 'shadow')}.{fmt}"), maps, fmt)
    return {"areas_km2": [shadow_area(m) for m in maps],
            "components": [n_components(m) for m in maps if "component" in m.aux]}


def run_timeseries(cfg, out: Outputs, fmt, workers):
    if cfg.station is None or cfg.station_b is None:
        raise ConfigError([("station_b", None, "timeseries needs [station] and [station_b]")])
    params = sim_params(cfg)
    tm = cfg.time
    times = np.arange(tm.start, tm.stop + 0.5 * tm.step, tm.step)
    series = apps.timeseries(orbit_of(cfg, params.earth), station(cfg.station, "a"), station(cfg.station_b, "b"),
                             params, bell_config(cfg), times, cfg.seed, cfg.qkd.key_fraction, workers)
    io.write_timeseries(out.path(f"{_stem(cfg, 'timeseries')}.csv"), series)
    return {}


def run_analytic(cfg, out: Outputs, fmt, workers):
    a = cfg.analytic
    rows = [dict(zip(("p1", "nbar", "mean_s", "p_success"), r)) for r in analytic.tables(a.p1, a.nbar)]
    io.write_table(out.path(f"{_stem(cfg, 'analytic')}_success.csv"), ("p1", "nbar", "mean_s", "p_success"), rows)
    dist = []
    for p1 in a.p1:
        for n in a.n:
            s, prob = analytic.distribution_given_n(float(p1), int(n))
            dist += [{"p1": float(p1), "n": int(n), "s": float(si), "probability": float(pi)}
                     for si, pi in zip(s, prob)]
    io.write_table(out.path(f"{_stem(cfg, 'analytic')}_distribution.csv"), ("p1", "n", "s", "probability"), dist)
    return {}


def run_sweep(cfg, out: Outputs, fmt, workers):
    sw = cfg.sweep
    if not sw.parameter or not sw.values:
        raise ConfigError([("sweep", None, "sweep needs parameter and values")])
    rows = []
    t = float(cfg.time.epochs[0])
    for v in sw.values:
        m = shadow_snapshot(override(cfg, sw.parameter, v), t, workers)
        area = shadow_area(m)
        cell = float(np.median(m.area)) if len(m) else float("nan")
        rows.append({"value": float(v), "area_km2": area, "cells": int((m.status == 2).sum()),
                     "area_in_cells": area / cell if cell else 0.0})
    io.write_table(out.path(f"{_stem(cfg, 'sweep')}.csv"), ("value", "area_km2", "cells", "area_in_cells"), rows)
    return {"parameter": sw.parameter}


RUNNERS = {"shadow": run_shadow, "timeseries": run_timeseries, "analytic": run_analytic, "sweep": run_sweep}


def run_scenario(cfg: ScenarioConfig, verb: str = "shadow", out_dir=".", fmt: str | None = None,
                 workers: int | None = None) -> int:
    """Run ``verb`` and write data files plus ``manifest.json``; 0 on success."""
    if cfg.scenario == "analytic_tables":
        verb = "analytic"
    fmt = fmt or cfg.output.format
    workers = default_workers() if workers is None else workers
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    out = Outputs(directory, [])
    start = time.perf_counter()
    try:
        summary = RUNNERS[verb](cfg, out, fmt, workers)
        data_files = list(out.files)
        manifest = {
            "verb": verb, "scenario": cfg.scenario, "seed": cfg.seed, "code_version": code_version(),
            "kernel_backend": BACKEND, "workers": workers, "format": fmt,
            "wall_time_s": time.perf_counter() - start, "config": serialize_config(cfg),
            "outputs": {p.name: io.sha256_of(p) for p in data_files}, "summary": summary,
        }
        io.write_manifest(out.path("manifest.json"), manifest)
    except Exception:
        out.discard()
        raise
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bellshadow", description="Bell violation shadows of LEO satellites")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", required=True, help="scenario TOML file")
    p.add_argument("--seed", type=int, help="override the global seed")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--format", choices=("geojson", "csv"), help="shadow map format")
    p.add_argument("--workers", type=int, help="worker processes (default: $BELLSHADOW_WORKERS or 1)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = override(cfg, "seed", args.seed)
        if args.format:
            cfg = replace(cfg, output=replace(cfg.output, format=args.format))
        return run_scenario(cfg, args.verb, args.out, args.format, args.workers)
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
