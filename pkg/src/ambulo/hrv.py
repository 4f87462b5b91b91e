"""Rolling RMSSD, sleep-window baselines and standardization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import stats
from ._deconv import rolling_rmssd_pass
from .ingest import IbiSeries
from .timeutil import day_to_date, local_day_index, local_ms_of_day, parse_clock

log = logging.getLogger(__name__)


@dataclass
class RmssdSeries:
    participant_id: str
    t: np.ndarray  # window end, UTC ms
    rmssd_ms: np.ndarray
    n_intervals: np.ndarray
    window_s: float = 300.0
    step_s: float = 1.0

    def __len__(self) -> int:
        return int(self.t.size)


def window_ends(t_first: int, t_last: int, step_ms: int) -> np.ndarray:
    """Grid of window end times: multiples of ``step_ms`` covering [t_first, t_last]."""
    start = -(-t_first // step_ms) * step_ms
    stop = (t_last // step_ms) * step_ms
    if stop < start:
        return np.zeros(0, dtype=np.int64)
    return np.arange(start, stop + 1, step_ms, dtype=np.int64)


def rolling_rmssd(series: IbiSeries, window_s: float = 300.0, step_s: float = 1.0,
                  min_intervals: int = 10) -> RmssdSeries:
    """RMSSD over right-anchored windows (t - window_s, t].

    Window ends fall on absolute multiples of ``step_s``. A successive-difference
    pair enters a window only when both of its beats do. One compiled pass keeps
    a compensated running sum of squared differences, so the cost is linear in
    beats plus window ends.
    """
    if window_s <= 0 or step_s <= 0:
        raise ValueError("window_s and step_s must be positive")
    pid = series.participant_id
    t = series.t
    if t.size < 2:
        return RmssdSeries(pid, np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64), window_s, step_s)
    win_ms = int(round(window_s * 1000))
    step_ms = int(round(step_s * 1000))
    # the same grid as window_ends(t[0], t[-1] + step - 1), without materializing it
    first = -(-int(t[0]) // step_ms) * step_ms
    n_ends = (int(t[-1]) + step_ms - 1) // step_ms * step_ms // step_ms - first // step_ms + 1
    ends, rmssd, n_pairs = rolling_rmssd_pass(t, np.ascontiguousarray(series.ibi_ms, dtype=np.float64),
                                              first, step_ms, max(n_ends, 0), win_ms, max(int(min_intervals), 1))
    return RmssdSeries(pid, ends, rmssd, n_pairs.astype(np.int64), window_s, step_s)


@dataclass
class BaselineSummary:
    participant_id: str
    sleep_window: tuple[str, str]
    baselines: dict = field(default_factory=dict)  # date -> median RMSSD (ms)
    coverage_s: dict = field(default_factory=dict)  # date -> seconds of IBI inside the window


def _in_clock_window(t_ms, offset_min: int, start_ms: int, end_ms: int) -> np.ndarray:
    tod = local_ms_of_day(t_ms, offset_min)
    if start_ms <= end_ms:
        return (tod >= start_ms) & (tod < end_ms)
    return (tod >= start_ms) | (tod < end_ms)


def _sleep_day(t_ms, offset_min: int, start_ms: int, end_ms: int) -> np.ndarray:
    """Local day a sleep-window sample belongs to; windows crossing midnight count for the morning."""
    day = local_day_index(t_ms, offset_min)
    if start_ms > end_ms:
        tod = local_ms_of_day(t_ms, offset_min)
        day = day + (tod >= start_ms)
    return day


def sleep_baseline(series: IbiSeries, sleep_window=("01:00", "06:00"), tz_offset_min: int = 0,
                   rmssd: Optional[RmssdSeries] = None, min_coverage_s: float = 1800.0,
                   **rmssd_kwargs) -> BaselineSummary:
    """Per local day, the median rolling RMSSD whose window end lies in the sleep window.

    Days with less than ``min_coverage_s`` of beats (summed IBIs) inside the
    window get no baseline.
    """
    start_ms, end_ms = parse_clock(sleep_window[0]), parse_clock(sleep_window[1])
    out = BaselineSummary(series.participant_id, (sleep_window[0], sleep_window[1]))
    if len(series) == 0:
        return out
    beat_in = _in_clock_window(series.t, tz_offset_min, start_ms, end_ms)
    if not beat_in.any():
        return out
    beat_day = _sleep_day(series.t[beat_in], tz_offset_min, start_ms, end_ms)
    cov_days, inv = np.unique(beat_day, return_inverse=True)
    cov = np.bincount(inv, weights=series.ibi_ms[beat_in]) / 1000.0
    if rmssd is None:
        rmssd = rolling_rmssd(series, **rmssd_kwargs)
    pt_in = _in_clock_window(rmssd.t, tz_offset_min, start_ms, end_ms)
    pt_day = _sleep_day(rmssd.t[pt_in], tz_offset_min, start_ms, end_ms)
    vals = rmssd.rmssd_ms[pt_in]
    for day, c in zip(cov_days.tolist(), cov.tolist()):
        date = day_to_date(day)
        out.coverage_s[date] = c
        if c < min_coverage_s:
            continue
        sel = vals[pt_day == day]
        if sel.size:
            out.baselines[date] = float(np.median(sel))
    return out


@dataclass
class Standardized:
    z: np.ndarray
    mean: float
    sd: float
    zero_variance: bool = False


def standardize(values, scope_mask=None, ddof: int = 1) -> Standardized:
    """z-scores of ``values`` using the mean and sd of the points selected by ``scope_mask``.

    ``scope_mask=None`` is the per-participant-all scope; passing the walking
    mask gives the walking-only scope. Every value is transformed, in or out
    of scope. Zero variance returns zeros and sets ``zero_variance``.
    """
    x = np.asarray(values, dtype=np.float64)
    ref = x if scope_mask is None else x[np.asarray(scope_mask, dtype=bool)]
    if ref.size < ddof + 1:
        log.warning("standardize: too few points in scope (%d)", ref.size)
        return Standardized(np.zeros_like(x), float(ref.mean()) if ref.size else 0.0, 0.0, True)
    mean = float(ref.mean())
    sd = float(ref.std(ddof=ddof))
    if not sd > 0:
        log.warning("standardize: zero variance in scope")
        return Standardized(np.zeros_like(x), mean, 0.0, True)
    return Standardized((x - mean) / sd, mean, sd)


def summarize_distribution(series: RmssdSeries | np.ndarray, n_grid: int = 256,
                           bandwidth="silverman") -> stats.DistributionSummary:
    values = series.rmssd_ms if isinstance(series, RmssdSeries) else np.asarray(series, float)
    return stats.five_number(values, with_kde=True, n_grid=n_grid, bandwidth=bandwidth)


def write_rmssd(series: RmssdSeries, path, z: Optional[np.ndarray] = None) -> None:
    from .report import fmt  # local import: report depends on most modules

    lines = ["t_utc_ms,rmssd_ms,n_intervals" + (",z" if z is not None else "")]
    for i in range(len(series)):
        row = f"{int(series.t[i])},{fmt(series.rmssd_ms[i])},{int(series.n_intervals[i])}"
        if z is not None:
            row += "," + fmt(z[i])
        lines.append(row)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

