"""Compiled beat-by-beat loop for the synthetic IBI generator."""

from __future__ import annotations

import math

import numba as nb
import numpy as np


@nb.njit(cache=True)
def ibi_walk(mean_ms, jitter, scale, table, horizon_ms, u, coin):
    """Mean-reverting IBI walk; ``table[s]`` is the difference RMS for beats in (s, s+1] seconds.

    Returns (beat times relative to start in ms, IBIs, count).
    """
    n_max = u.size
    t = np.empty(n_max)
    ibi = np.empty(n_max)
    ibi[0] = mean_ms
    t[0] = mean_ms
    k = 1
    while k < n_max and t[k - 1] < horizon_ms:
        s = table[min(int(t[k - 1] / 1000.0), table.size - 1)]
        v = 1.0 + jitter * u[k]
        mag = s * math.sqrt(v if v > 0.0 else 0.0)
        p_up = 1.0 / (1.0 + math.exp((ibi[k - 1] - mean_ms) / scale))
        step = mag if coin[k] < p_up else -mag
        ibi[k] = ibi[k - 1] + step
        t[k] = t[k - 1] + ibi[k]
        k += 1
    m = 0
    while m < k and t[m] < horizon_ms:
        m += 1
    return t, ibi, m
