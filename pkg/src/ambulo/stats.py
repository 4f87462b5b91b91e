"""Order statistics and Gaussian kernel density estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


def percentile(values, p: float) -> float:
    """Linear interpolation between closest ranks, rank = p/100 * (n - 1).

    >>> percentile(range(1, 101), 5)
    5.95
    """
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if x.size == 0:
        raise ValueError("percentile of an empty sequence")
    if not 0.0 <= p <= 100.0:
        raise ValueError(f"p must lie in [0, 100], got {p}")
    rank = p / 100.0 * (x.size - 1)
    lo = int(math.floor(rank))
    hi = min(lo + 1, x.size - 1)
    frac = rank - lo
    if frac == 0.0 or hi == lo:
        return float(x[lo])
    return float(x[lo] + frac * (x[hi] - x[lo]))


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    sd = float(np.std(x, ddof=1))
    iqr = percentile(x, 75) - percentile(x, 25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * x.size ** -0.2


def scott_bandwidth(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return 1.06 * float(np.std(x, ddof=1)) * x.size ** -0.2


BANDWIDTHS = {"silverman": silverman_bandwidth, "scott": scott_bandwidth}


def kde_curve(values, n_grid: int = 256, bandwidth: str | float = "silverman") -> tuple[np.ndarray, np.ndarray]:
    """Gaussian KDE on an ``n_grid`` grid spanning [min, max].

    The curve is rescaled so its trapezoid area over the grid is exactly one;
    otherwise the mass outside [min, max] would be lost.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("KDE needs at least two points")
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        raise ValueError("KDE of a constant sample is undefined")
    h = float(bandwidth) if not isinstance(bandwidth, str) else BANDWIDTHS[bandwidth](x)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    grid = np.linspace(lo, hi, n_grid)
    dens = np.zeros(n_grid)
    # chunk over samples to bound memory at n x 256
    for start in range(0, x.size, 4096):
        chunk = x[start:start + 4096]
        u = (grid[None, :] - chunk[:, None]) / h
        dens += np.exp(-0.5 * u * u).sum(axis=0)
    dens /= x.size * h * math.sqrt(2.0 * math.pi)
    area = float(np.trapezoid(dens, grid))
    if area > 0:
        dens /= area
    return grid, dens


@dataclass
class DistributionSummary:
    n: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    iqr: float
    mean: float
    kde_x: Optional[np.ndarray] = None
    kde_y: Optional[np.ndarray] = None

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("n", "minimum", "q1", "median", "q3", "maximum", "iqr", "mean")}
        if self.kde_x is not None:
            d["kde_x"] = self.kde_x.tolist()
            d["kde_y"] = self.kde_y.tolist()
        return d


def five_number(values, with_kde: bool = True, n_grid: int = 256, bandwidth="silverman") -> DistributionSummary:
    """Quartiles, median, IQR and (when possible) a KDE curve.

    A single value yields a degenerate summary without a KDE; use
    :func:`kde_curve` directly to get the error.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot summarize an empty sample")
    q1, med, q3 = (percentile(x, p) for p in (25, 50, 75))
    s = DistributionSummary(int(x.size), float(x.min()), q1, med, q3, float(x.max()), q3 - q1, float(x.mean()))
    if with_kde and x.size >= 2 and s.maximum > s.minimum:
        s.kde_x, s.kde_y = kde_curve(x, n_grid, bandwidth)
    return s
