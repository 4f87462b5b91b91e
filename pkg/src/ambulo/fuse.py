"""Alignment on a shared 1 s grid and per-day percentile arousal episodes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .eda import EdaWindowFeatures
from .geo import ScoredPoints, WalkingSegment
from .hrv import RmssdSeries
from .stats import percentile
from .timeutil import day_to_date, local_day_index

log = logging.getLogger(__name__)

PARASYMPATHETIC = "parasympathetic_low_rmssd"
SYMPATHETIC = "sympathetic_high_scr"


def nearest_index(src_t: np.ndarray, query_t: np.ndarray, tol_ms: int) -> np.ndarray:
    """Index of the nearest source timestamp for every query, -1 beyond ``tol_ms``.

    Ties go to the earlier sample.
    """
    src_t = np.asarray(src_t, dtype=np.int64)
    query_t = np.asarray(query_t, dtype=np.int64)
    out = np.full(query_t.size, -1, dtype=np.int64)
    if src_t.size == 0 or query_t.size == 0:
        return out
    right = np.searchsorted(src_t, query_t, side="left")
    left = np.clip(right - 1, 0, src_t.size - 1)
    right_c = np.clip(right, 0, src_t.size - 1)
    dl = np.abs(query_t - src_t[left])
    dr = np.abs(src_t[right_c] - query_t)
    pick = np.where(dr < dl, right_c, left)
    dist = np.minimum(dl, dr)
    ok = dist <= tol_ms
    out[ok] = pick[ok]
    return out


@dataclass
class AlignedSeries:
    """Columnar aligned samples on a uniform grid; NaN / -1 mark absent modalities."""

    participant_id: str
    t: np.ndarray
    rmssd_ms: np.ndarray
    eda: dict  # feature name -> array (NaN where absent)
    loc_idx: np.ndarray  # index into the scored points, -1 if absent
    walking: np.ndarray
    segment_idx: np.ndarray  # index into the segment list, -1 when not walking
    step_ms: int = 1000
    segment_ids: list = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.t.size)

    @property
    def scr_freq(self) -> np.ndarray:
        return self.eda["scr_freq_per_min"]


def walking_mask(t: np.ndarray, segments: list[WalkingSegment]) -> tuple[np.ndarray, np.ndarray]:
    """(walking, segment index) for each timestamp; segments are closed [start, end]."""
    walking = np.zeros(t.size, dtype=bool)
    seg_idx = np.full(t.size, -1, dtype=np.int64)
    for k, seg in enumerate(segments):
        a = np.searchsorted(t, seg.start, side="left")
        b = np.searchsorted(t, seg.end, side="right")
        walking[a:b] = True
        seg_idx[a:b] = k
    return walking, seg_idx


def align(rmssd: RmssdSeries, eda_feats: Optional[EdaWindowFeatures], segments: list[WalkingSegment],
          scored: Optional[ScoredPoints], step_s: float = 1.0, physio_tol_s: float = 1.0,
          location_tol_s: float = 300.0) -> AlignedSeries:
    """Put every modality on one grid spanning the union of their coverage.

    Grid times are multiples of ``step_s``. Each modality attaches its nearest
    sample within its tolerance.
    """
    step_ms = int(round(step_s * 1000))
    pid = rmssd.participant_id
    starts, stops = [], []
    for arr in (rmssd.t, None if eda_feats is None else eda_feats.t, None if scored is None else scored.t):
        if arr is not None and arr.size:
            starts.append(int(arr[0]))
            stops.append(int(arr[-1]))
    for seg in segments:
        starts.append(seg.start)
        stops.append(seg.end)
    if not starts:
        t = np.zeros(0, dtype=np.int64)
    else:
        lo = -(-min(starts) // step_ms) * step_ms
        hi = (max(stops) // step_ms) * step_ms
        t = np.arange(lo, hi + 1, step_ms, dtype=np.int64) if hi >= lo else np.zeros(0, np.int64)
    tol = int(round(physio_tol_s * 1000))
    ri = nearest_index(rmssd.t, t, tol)
    rm = np.where(ri >= 0, rmssd.rmssd_ms[np.maximum(ri, 0)] if rmssd.t.size else np.nan, np.nan)
    eda: dict = {}
    if eda_feats is None:
        eda_feats = EdaWindowFeatures.empty()
    ei = nearest_index(eda_feats.t, t, tol)
    for name in EdaWindowFeatures.FIELDS:
        col = np.asarray(getattr(eda_feats, name), dtype=np.float64)
        eda[name] = np.where(ei >= 0, col[np.maximum(ei, 0)] if col.size else np.nan, np.nan)
    if scored is not None and len(scored):
        li = nearest_index(scored.t, t, int(round(location_tol_s * 1000)))
    else:
        li = np.full(t.size, -1, dtype=np.int64)
    walking, seg_idx = walking_mask(t, segments)
    return AlignedSeries(pid, t, rm, eda, li, walking, seg_idx, step_ms, [s.segment_id for s in segments])


# ------------------------------------------------------------------ episodes


@dataclass
class EpisodeSettings:
    rmssd_percentile: float = 5.0
    scr_percentile: float = 95.0
    min_episode_s: float = 10.0
    min_daily_points: int = 600
    rmssd_pool: str = "full_day"  # or "walking"
    scr_walking_gate: bool = True


@dataclass
class ArousalEpisode:
    participant_id: str
    kind: str
    start: int
    end: int  # exclusive: last flagged sample + grid step
    threshold: float
    extremum: float
    segment_id: Optional[str]
    local_date: str

    @property
    def duration_s(self) -> float:
        return (self.end - self.start) / 1000.0


@dataclass
class DailyFlags:
    """Per-sample flags before run extraction; thresholds keyed by local day index."""

    flagged: np.ndarray
    day: np.ndarray
    thresholds: dict
    warnings: list


def daily_flags(values: np.ndarray, t: np.ndarray, tz_offset_min: int, p: float, below: bool,
                gate: Optional[np.ndarray] = None, pool: Optional[np.ndarray] = None,
                min_daily_points: int = 600) -> DailyFlags:
    """Flag samples strictly beyond the day's ``p``-th percentile.

    ``pool`` selects which samples define the day's distribution (all present
    values by default); ``gate`` restricts which samples may be flagged.
    """
    values = np.asarray(values, dtype=np.float64)
    present = ~np.isnan(values)
    day = local_day_index(t, tz_offset_min)
    flagged = np.zeros(values.size, dtype=bool)
    thresholds: dict = {}
    warnings: list = []
    pool_mask = present if pool is None else present & pool
    for d in np.unique(day[present]) if present.any() else []:
        in_day = day == d
        vals = values[in_day & pool_mask]
        if vals.size < min_daily_points:
            msg = f"{day_to_date(d)}: {vals.size} points < {min_daily_points}; no episodes"
            warnings.append(msg)
            log.warning(msg)
            continue
        thr = percentile(vals, p)
        thresholds[int(d)] = thr
        sel = in_day & present
        hit = values < thr if below else values > thr
        flagged |= sel & hit
    if gate is not None:
        flagged &= gate
    return DailyFlags(flagged, day, thresholds, warnings)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive (first, last) index pairs of True runs."""
    if not mask.any():
        return []
    edges = np.diff(np.concatenate(([0], mask.astype(np.int8), [0])))
    starts = np.nonzero(edges == 1)[0]
    ends = np.nonzero(edges == -1)[0] - 1
    return list(zip(starts.tolist(), ends.tolist()))


def _episodes(aligned: AlignedSeries, values: np.ndarray, flags: DailyFlags, kind: str, below: bool,
              min_episode_s: float) -> list[ArousalEpisode]:
    out = []
    step = aligned.step_ms
    # a run never spans two local days: thresholds are per day
    breaks = np.concatenate(([False], np.diff(flags.day) != 0))
    mask = flags.flagged.copy()
    for a, b in _runs(mask):
        cut = [a] + [i for i in range(a + 1, b + 1) if breaks[i]] + [b + 1]
        for s, e in zip(cut[:-1], cut[1:]):
            start, end = int(aligned.t[s]), int(aligned.t[e - 1]) + step
            if (end - start) / 1000.0 < min_episode_s:
                continue
            seg = aligned.segment_idx[s]
            seg_id = aligned.segment_ids[seg] if seg >= 0 and aligned.segment_idx[e - 1] == seg else None
            chunk = values[s:e]
            d = int(flags.day[s])
            out.append(ArousalEpisode(
                aligned.participant_id, kind, start, end, float(flags.thresholds[d]),
                float(chunk.min() if below else chunk.max()), seg_id, day_to_date(d).isoformat(),
            ))
    return out


def detect_rmssd_episodes(aligned: AlignedSeries, tz_offset_min: int = 0,
                          settings: EpisodeSettings = EpisodeSettings()) -> tuple[list[ArousalEpisode], DailyFlags]:
    """Walking runs with RMSSD strictly below the day's low percentile."""
    if settings.rmssd_pool not in ("full_day", "walking"):
        raise ValueError(f"unknown rmssd_pool {settings.rmssd_pool!r}")
    pool = aligned.walking if settings.rmssd_pool == "walking" else None
    flags = daily_flags(aligned.rmssd_ms, aligned.t, tz_offset_min, settings.rmssd_percentile, True,
                        gate=aligned.walking, pool=pool, min_daily_points=settings.min_daily_points)
    return _episodes(aligned, aligned.rmssd_ms, flags, PARASYMPATHETIC, True, settings.min_episode_s), flags


def detect_scr_episodes(aligned: AlignedSeries, tz_offset_min: int = 0,
                        settings: EpisodeSettings = EpisodeSettings()) -> tuple[list[ArousalEpisode], DailyFlags]:
    """Runs with SCR frequency strictly above the day's high percentile (walking-gated by default)."""
    gate = aligned.walking if settings.scr_walking_gate else None
    flags = daily_flags(aligned.scr_freq, aligned.t, tz_offset_min, settings.scr_percentile, False,
                        gate=gate, min_daily_points=settings.min_daily_points)
    return _episodes(aligned, aligned.scr_freq, flags, SYMPATHETIC, False, settings.min_episode_s), flags


def daily_threshold_column(t: np.ndarray, tz_offset_min: int, thresholds: dict) -> np.ndarray:
    """Threshold value for each timestamp's local day (NaN for days without one)."""
    day = local_day_index(t, tz_offset_min)
    out = np.full(t.size, np.nan)
    for d, thr in thresholds.items():
        out[day == d] = thr
    return out


def interval_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union if union > 0 else 0.0


EPISODE_HEADER = "participant_id,kind,start,end,threshold,extremum,segment_id,local_date"


def episode_rows(episodes: list[ArousalEpisode], fmt=repr) -> list[str]:
    return [
        f"{e.participant_id},{e.kind},{e.start},{e.end},{fmt(e.threshold)},{fmt(e.extremum)},"
        f"{e.segment_id or ''},{e.local_date}"
        for e in episodes
    ]
