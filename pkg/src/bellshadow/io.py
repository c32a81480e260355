"""Serialisation of shadow maps, time series and run manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from importlib import resources

import numpy as np

from bellshadow.shadows import STATUS_NAMES, ShadowMap, Status

SCHEMA_VERSION = "1.0"
BASE_COLUMNS = ("epoch", "cell_id", "lat", "lon", "area_km2", "status", "s_mean", "s_std", "valid_runs")


def schema() -> dict:
    text = resources.files("bellshadow").joinpath("schema/shadowmap.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _num(v):
    v = float(v)
    return None if math.isnan(v) or math.isinf(v) else v


def _aux_keys(maps) -> list[str]:
    return sorted({k for m in maps for k in m.aux})


def cell_rows(maps: list[ShadowMap]):
    """Flat per-cell rows across snapshots, in snapshot then cell order."""
    aux_keys = _aux_keys(maps)
    for m in maps:
        lat, lon = m.grid.centers(m.cell_ids)
        area = m.area
        for i in range(len(m)):
            row = {
                "epoch": float(m.epoch), "cell_id": int(m.cell_ids[i]), "lat": float(lat[i]), "lon": float(lon[i]),
                "area_km2": float(area[i]), "status": STATUS_NAMES[Status(int(m.status[i]))],
                "s_mean": _num(m.s_mean[i]), "s_std": _num(m.s_std[i]), "valid_runs": int(m.valid_runs[i]),
            }
            for k in aux_keys:
                row[k] = _num(m.aux[k][i]) if k in m.aux else None
            yield row


def to_geojson(maps: list[ShadowMap]) -> dict:
    if not maps:
        raise ValueError("nothing to serialise")
    features = []
    for row in cell_rows(maps):
        props = {k: v for k, v in row.items() if k not in ("lat", "lon")}
        features.append({"type": "Feature", "geometry": {"type": "Point", "coordinates": [row["lon"], row["lat"]]},
                         "properties": props})
    g = maps[0].grid
    return {"type": "FeatureCollection", "schema_version": SCHEMA_VERSION, "scenario": maps[0].scenario,
            "seed": int(maps[0].seed), "grid": {"lat_step_deg": g.lat_step, "lon_step_deg": g.lon_step},
            "features": features}


def write_geojson(path, maps: list[ShadowMap]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(to_geojson(maps), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(path, columns, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])


def write_csv(path, maps: list[ShadowMap]):
    write_table(path, list(BASE_COLUMNS) + _aux_keys(maps), cell_rows(maps))


def write_shadow(path, maps: list[ShadowMap], fmt: str):
    if fmt == "geojson":
        write_geojson(path, maps)
    elif fmt == "csv":
        write_csv(path, maps)
    else:
        raise ValueError(f"unknown format {fmt!r}")


TIMESERIES_COLUMNS = ("t", "visible", "s_mean", "s_std", "qber_mean", "qber_std", "valid_runs")


def write_timeseries(path, series: dict):
    rows = []
    for i in range(len(series["t"])):
        row = {}
        for c in TIMESERIES_COLUMNS:
            v = series[c][i]
            if c == "visible":
                row[c] = int(bool(v))
            elif c == "valid_runs":
                row[c] = int(v)
            else:
                row[c] = _num(v)
        rows.append(row)
    write_table(path, TIMESERIES_COLUMNS, rows)


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, manifest: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(f"not serialisable: {type(v).__name__}")
