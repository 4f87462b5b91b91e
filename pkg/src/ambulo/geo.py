"""GPS cleaning, walking segments, walkability scores and the cell spatial join."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .ingest import GpsTrack, WalkabilityCell

EARTH_RADIUS_M = 6_371_000.0


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in metres (vectorized)."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlam = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def dedup(track: GpsTrack, horizon_ms: int = 1000) -> GpsTrack:
    """Keep the first point of every run whose successive timestamps differ by < horizon_ms."""
    if len(track) == 0:
        return track
    order = np.argsort(track.t, kind="stable")
    tr = track.take(order)
    keep = np.ones(len(tr), dtype=bool)
    keep[1:] = np.diff(tr.t) >= horizon_ms
    return tr.take(keep)


def derive_speed(track: GpsTrack) -> GpsTrack:
    """Fill absent speeds with haversine distance / elapsed time from the previous point.

    A missing first speed is copied from the second point. Recorded speeds are
    never touched.
    """
    sp = track.speed_mps.copy()
    n = len(track)
    if n >= 2:
        dist = haversine_m(track.lat[:-1], track.lon[:-1], track.lat[1:], track.lon[1:])
        dt = np.diff(track.t) / 1000.0
        with np.errstate(divide="ignore", invalid="ignore"):
            derived = np.where(dt > 0, dist / dt, np.nan)
        missing = np.isnan(sp)
        fill = missing.copy()
        fill[0] = False
        sp[1:][fill[1:]] = derived[fill[1:]]
        if missing[0]:
            sp[0] = sp[1]
    return GpsTrack(track.participant_id, track.t.copy(), track.lat.copy(), track.lon.copy(), sp)


@dataclass
class WalkingSegment:
    participant_id: str
    segment_id: str
    start: int
    end: int
    index: np.ndarray  # point indices into the cleaned track
    mean_speed_mps: float

    @property
    def duration_s(self) -> float:
        return (self.end - self.start) / 1000.0


def walking_runs(t, speed, v_min: float = 0.5, v_max: float = 2.0, max_gap_s: float = 750.0):
    """Maximal (first, last) index runs of in-band points joined by gaps <= max_gap_s."""
    speed = np.asarray(speed, dtype=np.float64)
    inband = (speed >= v_min) & (speed <= v_max)  # NaN compares False
    runs = []
    start = None
    gap_ms = max_gap_s * 1000.0
    for i in range(len(speed)):
        if inband[i]:
            if start is not None and t[i] - t[i - 1] > gap_ms:
                runs.append((start, i - 1))
                start = i
            elif start is None:
                start = i
        elif start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(speed) - 1))
    return runs


def walking_segments(track: GpsTrack, v_min: float = 0.5, v_max: float = 2.0, min_duration_s: float = 300.0,
                     max_gap_s: float = 750.0) -> list[WalkingSegment]:
    """Walking segments: in-band runs spanning at least ``min_duration_s`` (bounds inclusive).

    The default ``max_gap_s`` of 750 s bridges a single missed fix on a
    5-minute cadence (a 600 s hole) but not two.
    """
    out: list[WalkingSegment] = []
    for a, b in walking_runs(track.t, track.speed_mps, v_min, v_max, max_gap_s):
        span = (track.t[b] - track.t[a]) / 1000.0
        if span < min_duration_s:
            continue
        idx = np.arange(a, b + 1)
        out.append(WalkingSegment(
            track.participant_id, f"{track.participant_id}-seg{len(out):03d}",
            int(track.t[a]), int(track.t[b]), idx, float(np.mean(track.speed_mps[idx])),
        ))
    return out


WEIGHTS = (Fraction(1, 3), Fraction(1, 3), Fraction(1, 6), Fraction(1, 6))


def walkability_score(cell: WalkabilityCell) -> float:
    """W = w/3 + x/3 + y/6 + z/6, evaluated in exact rational arithmetic then rounded once."""
    ranks = (cell.rank_w, cell.rank_x, cell.rank_y, cell.rank_z)
    if any(r is None or not math.isfinite(r) for r in ranks):
        raise ValueError(f"cell {cell.cell_id}: all four ranks are required")
    return float(sum(wt * Fraction(r) for wt, r in zip(WEIGHTS, ranks)))


def score_cells(cells: list[WalkabilityCell]) -> list[WalkabilityCell]:
    for c in cells:
        c.score = walkability_score(c)
    return cells


# ------------------------------------------------------------------ point in polygon


def _on_segment(px, py, x1, y1, x2, y2, eps: float = 1e-12):
    cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    scale = max(abs(x2 - x1), abs(y2 - y1), 1.0)
    within = (np.minimum(x1, x2) - eps <= px) & (px <= np.maximum(x1, x2) + eps) & \
             (np.minimum(y1, y2) - eps <= py) & (py <= np.maximum(y1, y2) + eps)
    return within & (np.abs(cross) <= eps * scale)


def points_in_rings(px, py, rings) -> np.ndarray:
    """Even-odd rule over every ring (holes included); boundary points count as inside."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    inside = np.zeros(px.shape, dtype=bool)
    boundary = np.zeros(px.shape, dtype=bool)
    for ring in rings:
        r = np.asarray(ring, dtype=np.float64)
        for k in range(len(r) - 1):
            x1, y1 = r[k]
            x2, y2 = r[k + 1]
            boundary |= _on_segment(px, py, x1, y1, x2, y2)
            if y1 == y2:
                continue
            crosses = (y1 > py) != (y2 > py)
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (px < xint)
    return inside | boundary


def ring_centroid(ring) -> tuple[float, float]:
    """Area centroid (lon, lat) of a closed ring in planar coordinates."""
    r = np.asarray(ring, dtype=np.float64)
    x, y = r[:-1, 0], r[:-1, 1]
    x1, y1 = r[1:, 0], r[1:, 1]
    cross = x * y1 - x1 * y
    area = cross.sum() / 2.0
    if abs(area) < 1e-15:
        return float(x.mean()), float(y.mean())
    cx = ((x + x1) * cross).sum() / (6.0 * area)
    cy = ((y + y1) * cross).sum() / (6.0 * area)
    return float(cx), float(cy)


def cell_centroid(cell: WalkabilityCell) -> tuple[float, float]:
    if cell.point is not None:
        return cell.point
    return ring_centroid(cell.rings[0])


@dataclass
class ScoredPoints:
    """Columnar join result; ``cell_idx`` is -1 where no cell applies."""

    t: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    speed_mps: np.ndarray
    cell_id: list
    walkability: np.ndarray  # NaN where absent
    z_rmssd: np.ndarray = field(default=None)
    segment_id: list = field(default=None)

    def __len__(self) -> int:
        return int(self.t.size)


def spatial_join(track: GpsTrack, cells: list[WalkabilityCell], fallback_radius_m: float = 1000.0) -> ScoredPoints:
    """Attach each point to the first polygon cell containing it, else the nearest
    centroid within ``fallback_radius_m``, else nothing."""
    n = len(track)
    idx = np.full(n, -1, dtype=np.int64)
    for ci, cell in enumerate(cells):
        if not cell.rings:
            continue
        todo = np.nonzero(idx < 0)[0]
        if todo.size == 0:
            break
        ring = np.asarray(cell.rings[0])
        lo_x, lo_y = ring[:, 0].min(), ring[:, 1].min()
        hi_x, hi_y = ring[:, 0].max(), ring[:, 1].max()
        px, py = track.lon[todo], track.lat[todo]
        cand = todo[(px >= lo_x) & (px <= hi_x) & (py >= lo_y) & (py <= hi_y)]
        if cand.size == 0:
            continue
        hit = points_in_rings(track.lon[cand], track.lat[cand], cell.rings)
        idx[cand[hit]] = ci
    missing = np.nonzero(idx < 0)[0]
    if missing.size and cells:
        cents = np.array([cell_centroid(c) for c in cells])  # (lon, lat)
        for i in missing:
            dist = haversine_m(track.lat[i], track.lon[i], cents[:, 1], cents[:, 0])
            j = int(np.argmin(dist))
            if dist[j] <= fallback_radius_m:
                idx[i] = j
    walk = np.full(n, np.nan)
    ids = []
    for i in range(n):
        if idx[i] >= 0:
            c = cells[idx[i]]
            walk[i] = c.score if c.score is not None else walkability_score(c)
            ids.append(c.cell_id)
        else:
            ids.append(None)
    return ScoredPoints(track.t, track.lat, track.lon, track.speed_mps, ids, walk,
                        np.full(n, np.nan), [None] * n)


def segment_ids_for(track_t: np.ndarray, segments: list[WalkingSegment]) -> list:
    ids = [None] * len(track_t)
    for seg in segments:
        for i in seg.index:
            ids[int(i)] = seg.segment_id
    return ids


def scored_points_geojson(points: ScoredPoints, participant_id: str, fmt=repr) -> list[dict]:
    feats = []
    for i in range(len(points)):
        z = points.z_rmssd[i] if points.z_rmssd is not None else math.nan
        w = points.walkability[i]
        feats.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [float(fmt(points.lon[i])), float(fmt(points.lat[i]))]},
            "properties": {
                "participant_id": participant_id,
                "t_utc_ms": int(points.t[i]),
                "z_rmssd": None if math.isnan(z) else float(fmt(z)),
                "walkability": None if math.isnan(w) else float(fmt(w)),
                "cell_id": points.cell_id[i],
                "segment_id": points.segment_id[i] if points.segment_id else None,
            },
        })
    return feats


def write_segments_csv(segments: list[WalkingSegment], path, fmt=repr) -> None:
    lines = ["segment_id,start,end,mean_speed_mps,n_points"]
    for s in segments:
        lines.append(f"{s.segment_id},{s.start},{s.end},{fmt(s.mean_speed_mps)},{len(s.index)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def dump_geojson(features: list[dict], path) -> None:
    with open(path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh, sort_keys=True, indent=None,
                  separators=(",", ":"))
        fh.write("\n")
