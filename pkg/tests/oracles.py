"""Deliberately naive reference implementations used as test oracles.

Each one recomputes a quantity straight from its definition with plain
Python loops, independently of the vectorized code under test.
"""

from __future__ import annotations

import math
import re
from collections import Counter


def rmssd_window(t, ibi, end_ms, window_ms):
    """RMSSD over successive pairs with both beats in (end - window, end]."""
    lo = end_ms - window_ms
    sq, n = 0.0, 0
    for i in range(len(t) - 1):
        if lo < t[i] <= end_ms and lo < t[i + 1] <= end_ms:
            d = float(ibi[i + 1]) - float(ibi[i])
            sq += d * d
            n += 1
    return (math.sqrt(sq / n) if n else math.nan), n


def dedup_scan(t, horizon_ms):
    """Indices kept by walking the sorted times and opening a new cluster on a big enough step."""
    order = sorted(range(len(t)), key=lambda i: (t[i], i))
    kept = []
    prev = None
    for i in order:
        if prev is None or t[i] - prev >= horizon_ms:
            kept.append(i)
        prev = t[i]
    return kept


def walking_scan(t_ms, speed, v_min, v_max, min_duration_s, max_gap_s):
    """(first, last) index pairs of qualifying runs, by a single left-to-right scan."""
    out = []
    start = None
    for i in range(len(t_ms)):
        ok = v_min <= speed[i] <= v_max
        if ok and start is not None and (t_ms[i] - t_ms[i - 1]) > max_gap_s * 1000:
            if (t_ms[i - 1] - t_ms[start]) >= min_duration_s * 1000:
                out.append((start, i - 1))
            start = i
            continue
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            if (t_ms[i - 1] - t_ms[start]) >= min_duration_s * 1000:
                out.append((start, i - 1))
            start = None
    if start is not None and (t_ms[-1] - t_ms[start]) >= min_duration_s * 1000:
        out.append((start, len(t_ms) - 1))
    return out


def _is_left(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (px - ax) * (by - ay)


def winding_number(px, py, ring):
    """Nonzero winding number test; the ring is closed (first == last)."""
    wn = 0
    for (ax, ay), (bx, by) in zip(ring[:-1], ring[1:]):
        if ay <= py:
            if by > py and _is_left(ax, ay, bx, by, px, py) > 0:
                wn += 1
        elif by <= py and _is_left(ax, ay, bx, by, px, py) < 0:
            wn -= 1
    return wn != 0


def token_counts(texts, stopwords):
    counts = Counter()
    for text in texts:
        text = re.sub(r"['’`]", "", text.lower())
        for tok in re.split(r"[^0-9a-z]+", text):
            if len(tok) >= 2 and tok not in stopwords:
                counts[tok] += 1
    return counts


def percentile_linear(values, p):
    v = sorted(values)
    r = p / 100.0 * (len(v) - 1)
    lo = math.floor(r)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (r - lo) * (v[hi] - v[lo])


def window_features(t, driver, tonic, ev_peak, ev_amp, ev_sig, end_ms, window_ms):
    """Features for the window (end - window, end] by direct recomputation.

    The driver integral uses the closed window [end - window, end].
    """
    lo = end_ms - window_ms
    idx = [i for i in range(len(t)) if lo < t[i] <= end_ms]
    d = [float(driver[i]) for i in idx]
    n = len(d)
    mean = sum(d) / n
    sd = math.sqrt(sum((x - mean) ** 2 for x in d) / (n - 1)) if n > 1 else 0.0
    closed = [i for i in range(len(t)) if lo <= t[i] <= end_ms]
    iscr = sum((float(driver[a]) + float(driver[b])) * (t[b] - t[a]) / 2000.0 for a, b in zip(closed[:-1], closed[1:]))
    amps = [float(a) for p, a, s in zip(ev_peak, ev_amp, ev_sig) if s and lo < p <= end_ms]
    scl = sum(float(tonic[i]) for i in idx) / n
    return {
        "sd_phasic_driver": sd,
        "iscr_us_s": iscr,
        "n_scr": len(amps),
        "scr_freq_per_min": len(amps) / (window_ms / 60000.0),
        "max_scr_amp_us": max(amps) if amps else 0.0,
        "sum_scr_amp_us": sum(amps),
        "mean_scl_us": scl,
    }
