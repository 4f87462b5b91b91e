"""Parsers and writers for the raw input files.

Every parser returns a canonical, time-sorted series plus a
:class:`ParseReport` in which ``n_accepted + n_rejected == n_rows``.
Series are columnar: timestamps live in an ``int64`` array of UTC
milliseconds and values in parallel ``float64`` arrays.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import EmptySeriesError, FormatError

log = logging.getLogger(__name__)

IBI_HEADER = ["t_utc_ms", "ibi_ms"]
EDA_HEADER = ["t_utc_ms", "sc_us"]
GPS_HEADER = ["t_utc_ms", "lat", "lon", "speed_mps"]
ESM_HEADER = [
    "participant_id", "survey_type", "t_utc_ms", "stress", "valence", "arousal",
    "sleep_quality", "walked_today", "walk_minutes", "infra_text",
]
RANK_KEYS = ("rank_w", "rank_x", "rank_y", "rank_z")

SURVEY_TYPES = ("morning", "afternoon", "evening", "end_of_day")

# Which payload fields each survey type may carry.
SURVEY_FIELDS = {
    "morning": ("stress", "valence", "arousal", "sleep_quality"),
    "afternoon": ("stress", "valence", "arousal"),
    "evening": ("stress", "valence", "arousal"),
    "end_of_day": ("stress", "valence", "arousal", "walked_today", "walk_minutes", "infra_text"),
}
PAYLOAD_FIELDS = ("stress", "valence", "arousal", "sleep_quality", "walked_today", "walk_minutes", "infra_text")


@dataclass
class IngestSettings:
    ibi_min_ms: float = 200.0
    ibi_max_ms: float = 3000.0
    eda_rate_hz: float = 4.0
    eda_gap_periods: float = 2.0
    eda_rate_tolerance: float = 0.10
    eda_rate_run: int = 10
    stress_range: tuple = (0, 10)
    valence_range: tuple = (-3, 3)
    arousal_range: tuple = (0, 4)
    sleep_range: tuple = (1, 5)


@dataclass
class ParseReport:
    path: str
    n_rows: int = 0
    n_accepted: int = 0
    n_rejected: int = 0
    reasons: Counter = field(default_factory=Counter)
    warnings: list = field(default_factory=list)

    def reject(self, reason: str, n: int = 1) -> None:
        self.n_rejected += n
        self.reasons[reason] += n

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "n_rows": self.n_rows,
            "n_accepted": self.n_accepted,
            "n_rejected": self.n_rejected,
            "reasons": dict(sorted(self.reasons.items())),
            "warnings": list(self.warnings),
        }


@dataclass
class IbiSeries:
    participant_id: str
    t: np.ndarray  # int64 beat times, UTC ms
    ibi_ms: np.ndarray

    def __len__(self) -> int:
        return int(self.t.size)

    @classmethod
    def empty(cls, participant_id: str) -> "IbiSeries":
        return cls(participant_id, np.zeros(0, np.int64), np.zeros(0))


@dataclass
class EdaSeries:
    participant_id: str
    t: np.ndarray
    sc_us: np.ndarray
    nominal_rate_hz: float = 4.0
    gaps: list = field(default_factory=list)  # [(start_ms, end_ms)], end exclusive of the gap hole

    def __len__(self) -> int:
        return int(self.t.size)

    def segments(self) -> list[slice]:
        """Index slices of the gap-free runs between declared gaps."""
        if self.t.size == 0:
            return []
        cuts = [int(np.searchsorted(self.t, end, side="left")) for _, end in self.gaps]
        bounds = [0, *cuts, int(self.t.size)]
        return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


@dataclass
class GpsTrack:
    participant_id: str
    t: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    speed_mps: np.ndarray  # NaN where absent

    def __len__(self) -> int:
        return int(self.t.size)

    def take(self, idx) -> "GpsTrack":
        return GpsTrack(self.participant_id, self.t[idx], self.lat[idx], self.lon[idx], self.speed_mps[idx])


@dataclass
class EsmResponse:
    participant_id: str
    survey_type: str
    t: int
    stress: Optional[int] = None
    valence: Optional[int] = None
    arousal: Optional[int] = None
    sleep_quality: Optional[int] = None
    walked_today: Optional[bool] = None
    walk_minutes: Optional[int] = None
    infra_text: Optional[str] = None

    def payload_empty(self) -> bool:
        return all(getattr(self, name) is None for name in SURVEY_FIELDS[self.survey_type])


@dataclass
class WalkabilityCell:
    cell_id: str
    rings: list  # list of rings, each a list of (lon, lat); empty for point cells
    point: Optional[tuple]  # (lon, lat) for point geometries
    rank_w: float
    rank_x: float
    rank_y: float
    rank_z: float
    score: Optional[float] = None


# ---------------------------------------------------------------- helpers


def _read_header(path: Path, expected: list[str]) -> None:
    with open(path, newline="") as fh:
        first = fh.readline()
    header = [h.strip() for h in first.strip().split(",")]
    if header != expected:
        raise FormatError(f"{path}: expected header {','.join(expected)!r}, got {first.strip()!r}")


def _parse_int_ms(text: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        v = float(text)
        if not v.is_integer():
            raise
        return int(v)


def _read_two_column(path: Path, header: list[str], report: ParseReport):
    """Load a numeric two-column file; slow csv path only when the fast path chokes."""
    _read_header(path, header)
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2)
        if arr.size == 0:
            arr = arr.reshape(0, 2)
        if arr.shape[1] != 2:
            raise ValueError("column count")
        t = arr[:, 0]
        ok_t = np.isfinite(t) & (t == np.floor(t)) & (t >= 0)
        report.n_rows = int(arr.shape[0])
        bad = int((~ok_t).sum())
        if bad:
            report.reject("bad_timestamp", bad)
        return t[ok_t].astype(np.int64), arr[ok_t, 1]
    except ValueError:
        pass
    ts, vals = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            report.n_rows += 1
            if len(row) != 2:
                report.reject("bad_row")
                continue
            try:
                t = _parse_int_ms(row[0])
            except ValueError:
                report.reject("bad_timestamp")
                continue
            if t < 0:
                report.reject("bad_timestamp")
                continue
            try:
                v = float(row[1])
            except ValueError:
                report.reject("bad_value")
                continue
            ts.append(t)
            vals.append(v)
    return np.asarray(ts, dtype=np.int64), np.asarray(vals, dtype=np.float64)


def _sort_unique(t: np.ndarray, *cols, report: ParseReport, drop_duplicates: bool = True):
    order = np.argsort(t, kind="stable")
    t = t[order]
    cols = [c[order] for c in cols]
    if drop_duplicates and t.size > 1:
        keep = np.ones(t.size, dtype=bool)
        keep[1:] = t[1:] != t[:-1]
        dup = int((~keep).sum())
        if dup:
            report.reject("duplicate_timestamp", dup)
            t = t[keep]
            cols = [c[keep] for c in cols]
    return (t, *cols)


# ---------------------------------------------------------------- parsers


def parse_ibi(path, participant_id: str, settings: IngestSettings | None = None) -> tuple[IbiSeries, ParseReport]:
    """Read a ``t_utc_ms,ibi_ms`` file.

    Beats outside the open interval (ibi_min_ms, ibi_max_ms) are dropped
    and counted under ``out_of_range``.
    """
    s = settings or IngestSettings()
    path = Path(path)
    report = ParseReport(str(path))
    t, ibi = _read_two_column(path, IBI_HEADER, report)
    ok = np.isfinite(ibi) & (ibi > s.ibi_min_ms) & (ibi < s.ibi_max_ms)
    if (~ok).any():
        report.reject("out_of_range", int((~ok).sum()))
    t, ibi = _sort_unique(t[ok], ibi[ok], report=report)
    report.n_accepted = int(t.size)
    if report.n_rows and not t.size:
        raise EmptySeriesError(f"{path}: all {report.n_rows} IBI rows rejected")
    return IbiSeries(participant_id, t, ibi), report


def detect_gaps(t: np.ndarray, rate_hz: float, gap_periods: float = 2.0) -> list[tuple[int, int]]:
    """Spacings longer than ``gap_periods`` nominal periods, as (last_before, first_after)."""
    if t.size < 2:
        return []
    limit = gap_periods * 1000.0 / rate_hz
    dt = np.diff(t)
    idx = np.nonzero(dt > limit)[0]
    return [(int(t[i]), int(t[i + 1])) for i in idx]


def _rate_warnings(t: np.ndarray, s: IngestSettings) -> list[str]:
    if t.size < 2:
        return []
    period = 1000.0 / s.eda_rate_hz
    dt = np.diff(t).astype(np.float64)
    in_gap = dt > s.eda_gap_periods * period
    off = (np.abs(dt - period) > s.eda_rate_tolerance * period) & ~in_gap
    if not off.any():
        return []
    # longest run of consecutive off-rate spacings
    padded = np.concatenate(([0], off.astype(np.int8), [0]))
    edges = np.diff(padded)
    starts, ends = np.nonzero(edges == 1)[0], np.nonzero(edges == -1)[0]
    runs = ends - starts
    bad = runs > s.eda_rate_run
    if not bad.any():
        return []
    first = int(starts[bad][0])
    return [
        f"sampling rate deviates more than {s.eda_rate_tolerance:.0%} from {s.eda_rate_hz:g} Hz "
        f"for {int(runs[bad].max())} consecutive samples (first at t={int(t[first])})"
    ]


def parse_eda(path, participant_id: str, settings: IngestSettings | None = None) -> tuple[EdaSeries, ParseReport]:
    """Read a ``t_utc_ms,sc_us`` file, rejecting negative or non-finite conductance."""
    s = settings or IngestSettings()
    path = Path(path)
    report = ParseReport(str(path))
    t, sc = _read_two_column(path, EDA_HEADER, report)
    finite = np.isfinite(sc)
    if (~finite).any():
        report.reject("non_finite", int((~finite).sum()))
    neg = finite & (sc < 0)
    if neg.any():
        report.reject("negative", int(neg.sum()))
    ok = finite & ~neg
    t, sc = _sort_unique(t[ok], sc[ok], report=report)
    report.n_accepted = int(t.size)
    if report.n_rows and not t.size:
        raise EmptySeriesError(f"{path}: all {report.n_rows} EDA rows rejected")
    gaps = detect_gaps(t, s.eda_rate_hz, s.eda_gap_periods)
    report.warnings.extend(_rate_warnings(t, s))
    for w in report.warnings:
        log.warning("%s: %s", path, w)
    return EdaSeries(participant_id, t, sc, s.eda_rate_hz, gaps), report


def parse_gps(path, participant_id: str, settings: IngestSettings | None = None) -> tuple[GpsTrack, ParseReport]:
    """Read a ``t_utc_ms,lat,lon,speed_mps`` file. Duplicate timestamps are kept."""
    path = Path(path)
    report = ParseReport(str(path))
    _read_header(path, GPS_HEADER)
    ts, lats, lons, speeds = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            report.n_rows += 1
            if len(row) != 4:
                report.reject("bad_row")
                continue
            try:
                t = _parse_int_ms(row[0])
                lat, lon = float(row[1]), float(row[2])
                sp = float(row[3]) if row[3].strip() else math.nan
            except ValueError:
                report.reject("bad_value")
                continue
            if t < 0:
                report.reject("bad_timestamp")
                continue
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                report.reject("coordinate_range")
                continue
            if not math.isnan(sp) and (sp < 0 or not math.isfinite(sp)):
                report.reject("bad_speed")
                continue
            ts.append(t)
            lats.append(lat)
            lons.append(lon)
            speeds.append(sp)
    t = np.asarray(ts, dtype=np.int64)
    t, lat, lon, sp = _sort_unique(
        t, np.asarray(lats, float), np.asarray(lons, float), np.asarray(speeds, float),
        report=report, drop_duplicates=False,
    )
    report.n_accepted = int(t.size)
    if report.n_rows and not t.size:
        raise EmptySeriesError(f"{path}: all {report.n_rows} GPS rows rejected")
    return GpsTrack(participant_id, t, lat, lon, sp), report


def _opt_int(text: str) -> Optional[int]:
    text = text.strip()
    if not text:
        return None
    v = float(text)
    if not v.is_integer():
        raise ValueError(text)
    return int(v)


def _opt_bool(text: str) -> Optional[bool]:
    text = text.strip().lower()
    if not text:
        return None
    if text in ("1", "true", "yes", "y", "t"):
        return True
    if text in ("0", "false", "no", "n", "f"):
        return False
    raise ValueError(text)


def parse_esm(path, settings: IngestSettings | None = None) -> tuple[list[EsmResponse], ParseReport]:
    """Read the survey export.

    Out-of-bounds scale values are nulled and fields a survey type may not
    carry are dropped; both cases land in ``report.warnings``. Rows with an
    unknown ``survey_type`` or unusable timestamp are rejected.
    """
    s = settings or IngestSettings()
    path = Path(path)
    report = ParseReport(str(path))
    _read_header(path, ESM_HEADER)
    bounds = {
        "stress": s.stress_range,
        "valence": s.valence_range,
        "arousal": s.arousal_range,
        "sleep_quality": s.sleep_range,
    }
    out: list[EsmResponse] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            report.n_rows += 1
            pid = (row.get("participant_id") or "").strip()
            stype = (row.get("survey_type") or "").strip().lower()
            if stype not in SURVEY_TYPES:
                report.reject("unknown_survey_type")
                report.warnings.append(f"line {lineno}: unknown survey_type {stype!r}")
                continue
            if not pid:
                report.reject("missing_participant")
                continue
            try:
                t = _parse_int_ms(row.get("t_utc_ms") or "")
            except ValueError:
                report.reject("bad_timestamp")
                continue
            resp = EsmResponse(pid, stype, t)
            for name in ("stress", "valence", "arousal", "sleep_quality", "walk_minutes"):
                raw = row.get(name) or ""
                try:
                    val = _opt_int(raw)
                except ValueError:
                    report.warnings.append(f"line {lineno}: {name}={raw!r} is not an integer; nulled")
                    continue
                if val is None:
                    continue
                lo, hi = bounds.get(name, (0, math.inf))
                if not lo <= val <= hi:
                    report.warnings.append(f"line {lineno}: {name}={val} outside [{lo}, {hi}]; nulled")
                    continue
                setattr(resp, name, val)
            raw = row.get("walked_today") or ""
            try:
                resp.walked_today = _opt_bool(raw)
            except ValueError:
                report.warnings.append(f"line {lineno}: walked_today={raw!r} unreadable; nulled")
            text = (row.get("infra_text") or "").strip()
            resp.infra_text = text or None
            allowed = SURVEY_FIELDS[stype]
            for name in PAYLOAD_FIELDS:
                if name not in allowed and getattr(resp, name) is not None:
                    report.warnings.append(f"line {lineno}: {name} not collected by {stype} survey; dropped")
                    setattr(resp, name, None)
            out.append(resp)
    out.sort(key=lambda r: (r.participant_id, r.t, r.survey_type))
    report.n_accepted = len(out)
    return out, report


def _close_ring(ring) -> list[tuple[float, float]]:
    pts = [(float(p[0]), float(p[1])) for p in ring]
    if len(pts) < 3:
        raise ValueError("ring needs at least 3 vertices")
    for lon, lat in pts:
        if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
            raise ValueError("vertex out of range")
    if pts[0] != pts[-1]:
        pts.append(pts[0])
    if len(pts) < 4:
        raise ValueError("degenerate ring")
    return pts


def parse_walkability(path) -> tuple[list[WalkabilityCell], ParseReport]:
    """Read a GeoJSON FeatureCollection of block-group cells.

    Polygons (first ring of a MultiPolygon's polygons included) are closed if
    their last vertex does not repeat the first. Features missing any of the
    four rank properties, or with other geometry types, are rejected.
    """
    path = Path(path)
    report = ParseReport(str(path))
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise FormatError(f"{path}: expected a GeoJSON FeatureCollection")
    cells: list[WalkabilityCell] = []
    for i, feat in enumerate(doc.get("features") or []):
        report.n_rows += 1
        props = feat.get("properties") or {}
        geom = feat.get("geometry") or {}
        ranks = []
        for key in RANK_KEYS:
            v = props.get(key)
            try:
                v = float(v)
            except (TypeError, ValueError):
                v = math.nan
            ranks.append(v)
        if any(not math.isfinite(v) for v in ranks):
            report.reject("missing_rank")
            report.warnings.append(f"feature {i}: missing or non-numeric rank property")
            continue
        if any(v < 0 for v in ranks):
            report.reject("negative_rank")
            continue
        cell_id = str(props.get("cell_id", feat.get("id", i)))
        gtype = geom.get("type")
        coords = geom.get("coordinates")
        try:
            if gtype == "Polygon":
                rings = [_close_ring(r) for r in coords]
                point = None
            elif gtype == "MultiPolygon":
                rings = [_close_ring(r) for poly in coords for r in poly]
                point = None
            elif gtype == "Point":
                lon, lat = float(coords[0]), float(coords[1])
                if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
                    raise ValueError("point out of range")
                rings, point = [], (lon, lat)
            else:
                report.reject("unsupported_geometry")
                report.warnings.append(f"feature {i}: geometry type {gtype!r} not supported")
                continue
        except (TypeError, ValueError, IndexError):
            report.reject("bad_geometry")
            continue
        cells.append(WalkabilityCell(cell_id, rings, point, *ranks))
    report.n_accepted = len(cells)
    return cells, report


# ---------------------------------------------------------------- writers
# repr() of a Python float round-trips exactly, so these files re-parse bit-identically.


def _write_columns(path, header: list[str], columns) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    rows = zip(*[c.tolist() for c in columns])
    buf.writelines(",".join(_fmt_cell(v) for v in row) + "\n" for row in rows)
    path.write_text(buf.getvalue())


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_ibi(series: IbiSeries, path) -> None:
    _write_columns(path, IBI_HEADER, [series.t, series.ibi_ms.astype(float)])


def write_eda(series: EdaSeries, path) -> None:
    _write_columns(path, EDA_HEADER, [series.t, series.sc_us.astype(float)])


def write_gps(track: GpsTrack, path) -> None:
    _write_columns(path, GPS_HEADER, [track.t, track.lat, track.lon, track.speed_mps])


def write_esm(responses: list[EsmResponse], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ESM_HEADER)
        for r in responses:
            w.writerow([
                r.participant_id, r.survey_type, r.t,
                *("" if getattr(r, n) is None else getattr(r, n) for n in ("stress", "valence", "arousal", "sleep_quality")),
                "" if r.walked_today is None else ("true" if r.walked_today else "false"),
                "" if r.walk_minutes is None else r.walk_minutes,
                r.infra_text or "",
            ])


def cells_to_geojson(cells: list[WalkabilityCell]) -> dict:
    feats = []
    for c in cells:
        if c.point is not None:
            geom = {"type": "Point", "coordinates": list(c.point)}
        else:
            geom = {"type": "Polygon", "coordinates": [[list(p) for p in ring] for ring in c.rings]}
        feats.append({
            "type": "Feature",
            "geometry": geom,
            "properties": {"cell_id": c.cell_id, "rank_w": c.rank_w, "rank_x": c.rank_x,
                           "rank_y": c.rank_y, "rank_z": c.rank_z},
        })
    return {"type": "FeatureCollection", "features": feats}


def write_walkability(cells: list[WalkabilityCell], path) -> None:
    Path(path).write_text(json.dumps(cells_to_geojson(cells), indent=1))
