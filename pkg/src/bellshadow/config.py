"""Scenario configuration: TOML in, validated dataclasses out, and back."""
from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, fields, is_dataclass, replace

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

SCENARIOS = (
    "single_downlink", "single_uplink", "double_downlink", "swap_double", "constellation_double",
    "constellation_repeater", "qkd", "qcs_precision", "qcs_secure", "analytic_tables",
)
NEEDS_STATION = ("double_downlink", "swap_double", "qkd")


class ConfigError(ValueError):
    """Validation failure; ``problems`` lists (field, line, message)."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = []
        for name, line, msg in self.problems:
            where = f"line {line}: " if line else ""
            lines.append(f"{where}{name}: {msg}")
        super().__init__("\n".join(lines))


@dataclass(frozen=True)
class OrbitSection:
    altitude: float = 500e3
    inclination_deg: float = 90.0
    raan_deg: float = 0.0
    phase_deg: float = 0.0
    # when set, the orbit is placed so its sub-satellite point is here at over_time
    over_lat_deg: float | None = None
    over_lon_deg: float | None = None
    over_time: float = 0.0
    n_sats: int = 1


@dataclass(frozen=True)
class StationSection:
    lat_deg: float = 0.0
    lon_deg: float = 0.0
    name: str = ""


@dataclass(frozen=True)
class GridSection:
    lat_step_deg: float = 0.25
    lon_step_deg: float = 0.25


@dataclass(frozen=True)
class ChannelSection:
    wavelength: float = 810e-9
    sat_radius: float = 0.10
    gs_radius: float = 0.60
    det_eff_sat: float = 0.5
    det_eff_gs: float = 0.5
    atm_zenith_transmittance: float = 0.5


@dataclass(frozen=True)
class SourceSection:
    pair_rate: float = 1e7
    slot_duration: float | None = None


@dataclass(frozen=True)
class NoiseSection:
    bkg_rate_a: float = 0.0
    bkg_rate_b: float = 10e3
    dark_rate_a: float = 1e3
    dark_rate_b: float = 1e3
    dark_rate_sat: float = 1e3


@dataclass(frozen=True)
class BellSection:
    n_runs: int = 30
    t_acq: float = 1e-3
    confidence_n: float = 1.0
    min_valid_runs: int = 2


@dataclass(frozen=True)
class TimeSection:
    epochs: tuple = (0.0,)
    start: float = 0.0
    stop: float = 600.0
    step: float = 20.0


@dataclass(frozen=True)
class SwapSection:
    p_sw: float = 0.9
    failed_swap: str = "random"


@dataclass(frozen=True)
class QkdSection:
    qber_threshold: float = 0.11
    key_fraction: float = 0.5


@dataclass(frozen=True)
class QcsSection:
    n_min: int = 30
    target_precision: float = 1e-9


@dataclass(frozen=True)
class SweepSection:
    parameter: str = ""
    values: tuple = ()


@dataclass(frozen=True)
class AnalyticSection:
    p1: tuple = (0.5, 0.75, 0.8535533905932737, 1.0)
    nbar: tuple = (4.0, 10.0, 40.0)
    n: tuple = (4, 40)


@dataclass(frozen=True)
class OutputSection:
    format: str = "geojson"
    name: str = ""


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    seed: int = 0
    orbit: OrbitSection = OrbitSection()
    station: StationSection | None = None
    station_b: StationSection | None = None
    grid: GridSection = GridSection()
    channel: ChannelSection = ChannelSection()
    source: SourceSection = SourceSection()
    noise: NoiseSection = NoiseSection()
    bell: BellSection = BellSection()
    time: TimeSection = TimeSection()
    swap: SwapSection = SwapSection()
    qkd: QkdSection = QkdSection()
    qcs: QcsSection = QcsSection()
    sweep: SweepSection = SweepSection()
    analytic: AnalyticSection = AnalyticSection()
    output: OutputSection = OutputSection()


SECTION_TYPES = {
    "orbit": OrbitSection, "station": StationSection, "station_b": StationSection, "grid": GridSection,
    "channel": ChannelSection, "source": SourceSection, "noise": NoiseSection, "bell": BellSection,
    "time": TimeSection, "swap": SwapSection, "qkd": QkdSection, "qcs": QcsSection, "sweep": SweepSection,
    "analytic": AnalyticSection, "output": OutputSection,
}


# ---------------------------------------------------------------------------
# locating keys in the source text for diagnostics


def _line_index(text: str) -> dict[tuple[str, str], int]:
    index: dict[tuple[str, str], int] = {}
    section = ""
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.]+)\s*\]$", line)
        if m:
            section = m.group(1)
            index.setdefault((section, ""), no)
            continue
        m = re.match(r"^([A-Za-z0-9_]+)\s*=", line)
        if m:
            index.setdefault((section, m.group(1)), no)
    return index


# ---------------------------------------------------------------------------
# validation rules


def _probability(v):
    return None if 0.0 <= v <= 1.0 else "must lie in [0, 1]"


def _positive(v):
    return None if v > 0 else "must be positive"


def _non_negative(v):
    return None if v >= 0 else "must be non-negative"


RULES = {
    ("orbit", "altitude"): _positive,
    ("orbit", "inclination_deg"): lambda v: None if 0 <= v <= 180 else "must lie in [0, 180]",
    ("orbit", "over_lat_deg"): lambda v: None if v is None or -90 <= v <= 90 else "must lie in [-90, 90]",
    ("orbit", "over_time"): _non_negative,
    ("orbit", "n_sats"): lambda v: None if v >= 1 else "must be at least 1",
    ("station", "lat_deg"): lambda v: None if -90 <= v <= 90 else "must lie in [-90, 90]",
    ("station_b", "lat_deg"): lambda v: None if -90 <= v <= 90 else "must lie in [-90, 90]",
    ("grid", "lat_step_deg"): lambda v: None if v > 0 and (180 / v).is_integer() else "must be positive and divide 180",
    ("grid", "lon_step_deg"): lambda v: None if v > 0 and (360 / v).is_integer() else "must be positive and divide 360",
    ("channel", "wavelength"): _positive,
    ("channel", "sat_radius"): _positive,
    ("channel", "gs_radius"): _positive,
    ("channel", "det_eff_sat"): _probability,
    ("channel", "det_eff_gs"): _probability,
    ("channel", "atm_zenith_transmittance"): _probability,
    ("source", "pair_rate"): _non_negative,
    ("source", "slot_duration"): lambda v: None if v is None or v > 0 else "must be positive",
    ("noise", "bkg_rate_a"): _non_negative,
    ("noise", "bkg_rate_b"): _non_negative,
    ("noise", "dark_rate_a"): _non_negative,
    ("noise", "dark_rate_b"): _non_negative,
    ("noise", "dark_rate_sat"): _non_negative,
    ("bell", "n_runs"): lambda v: None if v >= 2 else "must be at least 2",
    ("bell", "t_acq"): _positive,
    ("bell", "confidence_n"): _positive,
    ("bell", "min_valid_runs"): lambda v: None if v >= 1 else "must be at least 1",
    ("time", "epochs"): lambda v: None if len(v) and all(t >= 0 for t in v) else "must be a non-empty list of times >= 0",
    ("time", "start"): _non_negative,
    ("time", "step"): _positive,
    ("swap", "p_sw"): _probability,
    ("swap", "failed_swap"): lambda v: None if v in ("random", "discard") else "must be 'random' or 'discard'",
    ("qkd", "qber_threshold"): lambda v: None if 0 < v < 0.5 else "must lie in (0, 0.5)",
    ("qkd", "key_fraction"): lambda v: None if 0 < v < 1 else "must lie in (0, 1)",
    ("qcs", "n_min"): lambda v: None if v >= 1 else "must be at least 1",
    ("qcs", "target_precision"): _positive,
    ("output", "format"): lambda v: None if v in ("geojson", "csv") else "must be 'geojson' or 'csv'",
}

_NUMBER = (int, float)


def _coerce(where: str, kind: str, value, problems, line):
    """Check a TOML value against the field annotation and convert."""
    is_num = isinstance(value, _NUMBER) and not isinstance(value, bool)
    if kind in ("float", "float | None"):
        ok = is_num
        value = float(value) if ok else value
    elif kind == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind == "str":
        ok = isinstance(value, str)
    elif kind == "tuple":
        ok = isinstance(value, list) and all(isinstance(v, _NUMBER) and not isinstance(v, bool) for v in value)
        value = tuple(value) if ok else value
    else:
        ok = True
    if not ok:
        problems.append((where, line, f"wrong type {type(value).__name__}"))
        return None
    if isinstance(value, float) and not math.isfinite(value):
        problems.append((where, line, "must be finite"))
    return value


def _build_section(name: str, raw: dict, lines, problems):
    cls = SECTION_TYPES[name]
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        line = lines.get((name, key))
        if key not in known:
            problems.append((f"{name}.{key}", line, "unknown key"))
            continue
        n_before = len(problems)
        value = _coerce(f"{name}.{key}", known[key].type, value, problems, line)
        if len(problems) > n_before:
            continue
        rule = RULES.get((name, key))
        msg = rule(value) if rule else None
        if msg:
            problems.append((f"{name}.{key}", line, msg))
        kwargs[key] = value
    return cls(**kwargs)


def parse_config(text: str) -> ScenarioConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([("<toml>", None, str(exc))]) from None
    lines = _line_index(text)
    problems = []
    top = {}
    for key, value in data.items():
        if key in SECTION_TYPES:
            if not isinstance(value, dict):
                problems.append((key, lines.get(("", key)), "must be a table"))
            continue
        if key == "scenario":
            if value not in SCENARIOS:
                problems.append(("scenario", lines.get(("", key)), f"unknown scenario {value!r}"))
            top[key] = value
        elif key == "seed":
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                problems.append(("seed", lines.get(("", key)), "must be a non-negative integer"))
            else:
                top[key] = value
        else:
            problems.append((key, lines.get(("", key)), "unknown key"))
    if "scenario" not in data:
        problems.append(("scenario", None, "missing (required)"))
    sections = {name: _build_section(name, data[name], lines, problems)
                for name in SECTION_TYPES if isinstance(data.get(name), dict)}
    if problems:
        raise ConfigError(problems)
    cfg = ScenarioConfig(**top, **sections)
    problems = validate(cfg, lines)
    if problems:
        raise ConfigError(problems)
    return cfg


def validate(cfg: ScenarioConfig, lines=None) -> list:
    """Cross-field checks that depend on the scenario."""
    lines = lines or {}
    problems = []
    if cfg.scenario in NEEDS_STATION and cfg.station is None:
        problems.append(("station", None, f"required for scenario {cfg.scenario}"))
    o = cfg.orbit
    if (o.over_lat_deg is None) != (o.over_lon_deg is None):
        problems.append(("orbit.over_lat_deg", lines.get(("orbit", "over_lat_deg")),
                         "over_lat_deg and over_lon_deg must be given together"))
    if o.over_lat_deg is not None and abs(o.over_lat_deg) > min(o.inclination_deg, 180 - o.inclination_deg) + 1e-9:
        problems.append(("orbit.over_lat_deg", lines.get(("orbit", "over_lat_deg")),
                         "latitude not reachable with this inclination"))
    if cfg.time.stop < cfg.time.start:
        problems.append(("time.stop", lines.get(("time", "stop")), "must not precede time.start"))
    if cfg.bell.min_valid_runs > cfg.bell.n_runs:
        problems.append(("bell.min_valid_runs", lines.get(("bell", "min_valid_runs")), "exceeds n_runs"))
    slot = cfg.source.slot_duration
    if slot is None and cfg.source.pair_rate > 0:
        slot = 1.0 / cfg.source.pair_rate
    if slot is not None and slot > cfg.bell.t_acq:
        problems.append(("source.slot_duration", lines.get(("source", "slot_duration")), "exceeds bell.t_acq"))
    return problems


# ---------------------------------------------------------------------------
# serialisation


def _plain(obj):
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj) if getattr(obj, f.name) is not None}
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    return obj


def to_dict(cfg: ScenarioConfig) -> dict:
    return _plain(cfg)


def serialize_config(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def override(cfg: ScenarioConfig, dotted: str, value) -> ScenarioConfig:
    """Copy of ``cfg`` with ``section.key`` (or a top-level key) replaced, then revalidated."""
    if "." not in dotted:
        data = to_dict(replace(cfg, **{dotted: value}))
    else:
        section, key = dotted.split(".", 1)
        data = to_dict(cfg)
        data.setdefault(section, {})[key] = value
    return parse_config(tomli_w.dumps(data))
