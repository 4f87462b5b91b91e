"""Pipeline configuration: defaults, YAML loading and validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError
from .timeutil import parse_clock, parse_offset


@dataclass
class IngestConfig:
    ibi_min_ms: float = 200.0
    ibi_max_ms: float = 3000.0
    eda_rate_hz: float = 4.0
    eda_gap_periods: float = 2.0
    stress_range: list = field(default_factory=lambda: [0, 10])
    valence_range: list = field(default_factory=lambda: [-3, 3])
    arousal_range: list = field(default_factory=lambda: [0, 4])
    sleep_range: list = field(default_factory=lambda: [1, 5])


@dataclass
class HrvConfig:
    window_s: float = 300.0
    step_s: float = 1.0
    min_intervals: int = 10
    sleep_window: list = field(default_factory=lambda: ["01:00", "06:00"])
    min_sleep_coverage_s: float = 1800.0
    standardize_scope: str = "per_participant_all"
    ddof: int = 1


@dataclass
class IrfSearchConfig:
    tau1_range: list = field(default_factory=lambda: [0.2, 2.0])
    tau2_range: list = field(default_factory=lambda: [1.0, 8.0])
    grid: int = 8
    refine: int = 5
    beta: float = 0.1


@dataclass
class EdaConfig:
    tau1_s: float = 0.7
    tau2_s: float = 2.0
    lambda_sparsity: float = 0.005
    max_iter: int = 5000
    tol: float = 1e-6
    min_segment_s: float = 60.0
    block_s: float = 600.0
    margin_s: float = 30.0
    region_eps: float = 0.001
    amp_threshold: float = 0.02
    window_s: float = 300.0
    step_s: float = 1.0
    optimize_irf: bool = False
    optimize_excerpt_s: float = 900.0
    search: IrfSearchConfig = field(default_factory=IrfSearchConfig)


@dataclass
class GpsConfig:
    dedup_horizon_ms: int = 1000
    v_min: float = 0.5
    v_max: float = 2.0
    min_duration_s: float = 300.0
    max_gap_s: float = 750.0  # 2.5x the 5-min cadence: one missed fix is bridged, two are not
    fallback_radius_m: float = 1000.0


@dataclass
class FuseConfig:
    step_s: float = 1.0
    physio_tol_s: float = 1.0
    location_tol_s: float = 300.0
    rmssd_percentile: float = 5.0
    scr_percentile: float = 95.0
    min_episode_s: float = 10.0
    min_daily_points: int = 600
    rmssd_pool: str = "full_day"
    scr_walking_gate: bool = True


@dataclass
class SurveyConfig:
    stoplist: list = field(default_factory=lambda: [
        "none", "no", "nope", "n/a", "na", "nothing", "i didn't see any issue", "i didnt see any issue"])
    keywords: dict = field(default_factory=lambda: {
        "sidewalk": ["sidewalk", "pavement", "footpath", "pole"],
        "crosswalk": ["crosswalk", "crossing", "intersection", "traffic light", "cars"],
        "uneven_surface": ["uneven", "crack", "pothole", "bump", "brick"],
        "trash_debris": ["trash", "litter", "debris", "garbage"],
    })
    stopwords_file: Optional[str] = None
    top_n: int = 20


@dataclass
class ReportConfig:
    kde_grid: int = 256
    bandwidth: str = "silverman"
    composite_hours: float = 3.0
    composite_windows: list = field(default_factory=list)  # [{participant, start_ms, end_ms}]
    series_dumps: bool = True


@dataclass
class ParticipantEntry:
    id: str
    tz_offset: int = 0
    ibi: Optional[str] = None
    eda: Optional[str] = None
    gps: Optional[str] = None


@dataclass
class PipelineConfig:
    participants: list = field(default_factory=list)
    esm_file: Optional[str] = None
    walkability_file: Optional[str] = None
    output_dir: str = "out"
    study_days: int = 14
    jobs: Optional[int] = None
    ingest: IngestConfig = field(default_factory=IngestConfig)
    hrv: HrvConfig = field(default_factory=HrvConfig)
    eda: EdaConfig = field(default_factory=EdaConfig)
    gps: GpsConfig = field(default_factory=GpsConfig)
    fuse: FuseConfig = field(default_factory=FuseConfig)
    surveys: SurveyConfig = field(default_factory=SurveyConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    base_dir: str = field(default=".", metadata={"echo": False})

    def resolve(self, rel: Optional[str]) -> Optional[Path]:
        if rel is None:
            return None
        p = Path(rel)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def echo(self) -> dict:
        """Effective configuration as plain data, without machine-specific fields."""
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        d.pop("output_dir")
        d.pop("jobs")
        return d


_NESTED = {
    "ingest": IngestConfig, "hrv": HrvConfig, "eda": EdaConfig, "gps": GpsConfig, "fuse": FuseConfig,
    "surveys": SurveyConfig, "report": ReportConfig, "search": IrfSearchConfig,
}


def _coerce(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{where}: expected a list, got {value!r}")
    if isinstance(default, dict) and not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a mapping, got {value!r}")
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    return value


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    obj = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in names or key == "base_dir":
            raise ConfigError(f"{where}: unknown key {key!r}")
        current = getattr(obj, key)
        if key in _NESTED and dataclasses.is_dataclass(current):
            setattr(obj, key, _build(_NESTED[key], value, f"{where}.{key}"))
        elif current is None:
            setattr(obj, key, value)
        else:
            setattr(obj, key, _coerce(value, current, f"{where}.{key}"))
    return obj


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate(cfg: PipelineConfig) -> PipelineConfig:
    _check(cfg.study_days >= 1, "study_days must be >= 1")
    _check(cfg.jobs is None or (isinstance(cfg.jobs, int) and cfg.jobs >= 1), "jobs must be a positive integer")
    h = cfg.hrv
    _check(h.window_s > 0 and h.step_s > 0, "hrv.window_s and hrv.step_s must be positive")
    _check(h.min_intervals >= 1, "hrv.min_intervals must be >= 1")
    _check(h.standardize_scope in ("per_participant_all", "per_participant_walking"),
           "hrv.standardize_scope must be per_participant_all or per_participant_walking")
    _check(h.ddof in (0, 1), "hrv.ddof must be 0 or 1")
    try:
        _check(len(h.sleep_window) == 2, "hrv.sleep_window needs [start, end]")
        for c in h.sleep_window:
            parse_clock(c)
    except ValueError as exc:
        raise ConfigError(f"hrv.sleep_window: {exc}") from None
    e = cfg.eda
    _check(0 < e.tau1_s < e.tau2_s, "eda: need 0 < tau1_s < tau2_s")
    _check(e.lambda_sparsity >= 0, "eda.lambda_sparsity must be >= 0")
    _check(e.max_iter >= 1 and e.tol > 0, "eda.max_iter/tol must be positive")
    _check(e.window_s > 0 and e.step_s > 0, "eda.window_s and eda.step_s must be positive")
    _check(e.amp_threshold >= 0 and e.region_eps >= 0, "eda thresholds must be >= 0")
    _check(e.block_s > 0 and e.margin_s >= 0, "eda.block_s must be positive, eda.margin_s >= 0")
    s = e.search
    _check(len(s.tau1_range) == 2 and len(s.tau2_range) == 2, "eda.search ranges need two values")
    _check(0 < s.tau1_range[0] < s.tau1_range[1] and 0 < s.tau2_range[0] < s.tau2_range[1]
           and s.tau1_range[0] < s.tau2_range[1], "eda.search: degenerate search box")
    _check(s.grid >= 2 and s.refine >= 1, "eda.search.grid must be >= 2 and refine >= 1")
    g = cfg.gps
    _check(0 <= g.v_min < g.v_max, "gps: need 0 <= v_min < v_max")
    _check(g.min_duration_s >= 0 and g.max_gap_s > 0 and g.dedup_horizon_ms >= 0, "gps durations must be positive")
    _check(g.fallback_radius_m >= 0, "gps.fallback_radius_m must be >= 0")
    f = cfg.fuse
    _check(0 <= f.rmssd_percentile <= 100 and 0 <= f.scr_percentile <= 100, "fuse percentiles must lie in [0, 100]")
    _check(f.rmssd_pool in ("full_day", "walking"), "fuse.rmssd_pool must be full_day or walking")
    _check(f.step_s > 0 and f.physio_tol_s >= 0 and f.location_tol_s >= 0, "fuse tolerances must be >= 0")
    _check(f.min_episode_s >= 0 and f.min_daily_points >= 1, "fuse.min_episode_s/min_daily_points out of range")
    _check(cfg.surveys.top_n >= 1, "surveys.top_n must be >= 1")
    _check(all(isinstance(v, list) for v in cfg.surveys.keywords.values()), "surveys.keywords values must be lists")
    _check(cfg.report.bandwidth in ("silverman", "scott"), "report.bandwidth must be silverman or scott")
    _check(cfg.report.kde_grid >= 2 and cfg.report.composite_hours > 0, "report settings out of range")
    for name in ("stress_range", "valence_range", "arousal_range", "sleep_range"):
        r = getattr(cfg.ingest, name)
        _check(len(r) == 2 and r[0] <= r[1], f"ingest.{name} must be [low, high]")
    _check(cfg.ingest.ibi_min_ms < cfg.ingest.ibi_max_ms, "ingest: ibi_min_ms must be < ibi_max_ms")
    _check(cfg.ingest.eda_rate_hz > 0, "ingest.eda_rate_hz must be positive")
    ids = [p.id for p in cfg.participants]
    _check(len(ids) == len(set(ids)), "participant ids must be unique")
    return cfg


def from_dict(data: dict, base_dir=".") -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    data = dict(data)
    roster = data.pop("participants", [])
    cfg = _build(PipelineConfig, data, "config")
    if not isinstance(roster, list):
        raise ConfigError("participants must be a list")
    entries = []
    for i, p in enumerate(roster):
        if not isinstance(p, dict) or "id" not in p:
            raise ConfigError(f"participants[{i}]: needs an 'id'")
        unknown = set(p) - {"id", "tz_offset", "ibi", "eda", "gps"}
        if unknown:
            raise ConfigError(f"participants[{i}]: unknown keys {sorted(unknown)}")
        try:
            tz = parse_offset(p.get("tz_offset", 0))
        except ValueError as exc:
            raise ConfigError(f"participants[{i}]: {exc}") from None
        entries.append(ParticipantEntry(str(p["id"]), tz, p.get("ibi"), p.get("eda"), p.get("gps")))
    cfg.participants = entries
    cfg.base_dir = str(base_dir)
    return validate(cfg)


def load(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    return from_dict(data or {}, base_dir=path.parent)


def apply_overrides(cfg: PipelineConfig, step_s: Optional[float] = None, window_s: Optional[float] = None,
                    jobs: Optional[int] = None) -> PipelineConfig:
    if step_s is not None:
        cfg.hrv.step_s = cfg.eda.step_s = cfg.fuse.step_s = float(step_s)
    if window_s is not None:
        cfg.hrv.window_s = cfg.eda.window_s = float(window_s)
    if jobs is not None:
        cfg.jobs = int(jobs)
    return validate(cfg)
