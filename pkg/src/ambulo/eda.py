"""Electrodermal activity: Bateman IRF, continuous decomposition, SCR events, window features.

The skin conductance signal ``y`` is modelled as

    y = tonic + K d + noise,    d >= 0

where ``K`` convolves a sparse phasic driver ``d`` (uS/s) with the Bateman
impulse response. The tonic level is estimated first from inter-response
minima; the driver is then recovered by L1-regularized nonnegative least
squares on the remainder.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
from scipy.ndimage import uniform_filter1d

from . import _deconv
from .errors import ConvergenceError, ParameterError
from .ingest import EdaSeries

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IrfParams:
    tau1_s: float = 0.7
    tau2_s: float = 2.0

    def __post_init__(self):
        if not (self.tau1_s > 0 and self.tau2_s > 0):
            raise ParameterError(f"time constants must be positive: {self}")
        if not self.tau1_s < self.tau2_s:
            raise ParameterError(f"rise constant must be below recovery constant: {self}")

    @property
    def peak_time_s(self) -> float:
        t1, t2 = self.tau1_s, self.tau2_s
        return t1 * t2 / (t2 - t1) * math.log(t2 / t1)


def bateman(t, params: IrfParams) -> np.ndarray:
    """Continuous-time Bateman function, unit integral over [0, inf)."""
    t = np.asarray(t, dtype=np.float64)
    t1, t2 = params.tau1_s, params.tau2_s
    out = (np.exp(-t / t2) - np.exp(-t / t1)) / (t2 - t1)
    return np.where(t >= 0, out, 0.0)


def _discrete_norm(params: IrfParams, rate_hz: float) -> float:
    """Riemann sum dt * sum_k IRF(k dt) over the infinite tail, in closed form."""
    dt = 1.0 / rate_hz
    a = math.exp(-dt / params.tau2_s)
    b = math.exp(-dt / params.tau1_s)
    return dt / (params.tau2_s - params.tau1_s) * (1.0 / (1.0 - a) - 1.0 / (1.0 - b))


def bateman_irf(params: IrfParams = IrfParams(), duration_s: Optional[float] = None,
                rate_hz: float = 4.0) -> np.ndarray:
    """Sampled Bateman kernel (1/s) on k/rate_hz, k = 0 .. duration*rate.

    Samples follow the continuous formula up to one constant factor that gives
    the infinite sampled sequence unit area. At 4 Hz the raw samples sum to
    about 0.996, a bias that would otherwise leak into every driver area.
    """
    if rate_hz <= 0:
        raise ParameterError("rate_hz must be positive")
    if duration_s is None:
        duration_s = 10.0 * params.tau2_s
    if duration_s < 10.0 * params.tau2_s - 1e-12:
        raise ParameterError("duration_s must cover at least 10 * tau2 of the tail")
    n = int(math.floor(duration_s * rate_hz + 1e-9)) + 1
    t = np.arange(n) / rate_hz
    return bateman(t, params) / _discrete_norm(params, rate_hz)


def filter_coefficients(params: IrfParams, rate_hz: float) -> tuple[float, float, float]:
    """(g0, a1, a2) of the recursive form of ``dt * conv(d, bateman_irf)``."""
    dt = 1.0 / rate_hz
    a = math.exp(-dt / params.tau2_s)
    b = math.exp(-dt / params.tau1_s)
    c = dt / (params.tau2_s - params.tau1_s) / _discrete_norm(params, rate_hz)
    return c * (a - b), a + b, a * b


def convolve_irf(driver, params: IrfParams = IrfParams(), rate_hz: float = 4.0) -> np.ndarray:
    """Phasic conductance (uS) produced by a driver (uS/s) sampled at ``rate_hz``."""
    d = np.ascontiguousarray(driver, dtype=np.float64)
    out = np.empty_like(d)
    _deconv.irf_forward(d, out, *filter_coefficients(params, rate_hz))
    return out


# ------------------------------------------------------------------ tonic


def estimate_noise_sd(y) -> float:
    """Robust white-noise sd from first differences (MAD / sqrt 2)."""
    y = np.asarray(y, dtype=np.float64)
    if y.size < 3:
        return 0.0
    d = np.diff(y)
    mad = float(np.median(np.abs(d - np.median(d))))
    return 1.4826 * mad / math.sqrt(2.0)


def estimate_tonic(y, rate_hz: float = 4.0, smooth_s: float = 1.0, min_win_s: float = 10.0,
                   avg_win_s: float = 30.0, noise_sd: Optional[float] = None) -> np.ndarray:
    """Slow baseline under the phasic responses.

    Per ``min_win_s`` block, the minimum of the ``smooth_s``-smoothed signal
    is an anchor; anchors are joined linearly and averaged over ``avg_win_s``.
    Minima of noisy data sit below the true level, so the curve is lifted by
    the median gap to the smoothed signal. The result is clamped to
    ``y + 3 * noise_sd``.
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if n == 0:
        return y.copy()
    sm = uniform_filter1d(y, size=max(1, int(round(smooth_s * rate_hz))), mode="nearest")
    blk = max(1, int(round(min_win_s * rate_hz)))
    nblk = -(-n // blk)
    padded = np.full(nblk * blk, np.inf)
    padded[:n] = sm
    grid = padded.reshape(nblk, blk)
    arg = np.argmin(grid, axis=1)
    anchor_idx = np.arange(nblk) * blk + arg
    anchor_val = grid[np.arange(nblk), arg]
    base = np.interp(np.arange(n), anchor_idx, anchor_val)
    base = uniform_filter1d(base, size=max(1, int(round(avg_win_s * rate_hz))), mode="nearest")
    base = base + max(0.0, float(np.median(sm - base)))
    if noise_sd is None:
        noise_sd = estimate_noise_sd(y)
    return np.minimum(base, y + 3.0 * noise_sd)


# ------------------------------------------------------------------ decomposition


@dataclass
class ScrEvent:
    onset: int
    peak: int
    amplitude_us: float
    significant: bool


@dataclass
class ScrEvents:
    """Columnar event table; iterating yields :class:`ScrEvent` records."""

    onset: np.ndarray
    peak: np.ndarray
    amplitude_us: np.ndarray
    significant: np.ndarray

    @classmethod
    def empty(cls) -> "ScrEvents":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), np.zeros(0, bool))

    def __len__(self) -> int:
        return int(self.onset.size)

    def __iter__(self) -> Iterator[ScrEvent]:
        for i in range(len(self)):
            yield ScrEvent(int(self.onset[i]), int(self.peak[i]), float(self.amplitude_us[i]),
                           bool(self.significant[i]))

    @property
    def n_significant(self) -> int:
        return int(self.significant.sum())

    def only_significant(self) -> "ScrEvents":
        m = self.significant
        return ScrEvents(self.onset[m], self.peak[m], self.amplitude_us[m], self.significant[m])

    @staticmethod
    def concat(parts: list["ScrEvents"]) -> "ScrEvents":
        if not parts:
            return ScrEvents.empty()
        return ScrEvents(*(np.concatenate([getattr(p, f) for p in parts])
                           for f in ("onset", "peak", "amplitude_us", "significant")))


@dataclass
class DecompositionSettings:
    lambda_sparsity: float = 0.005
    max_iter: int = 5000
    tol: float = 1e-6
    min_segment_s: float = 60.0
    block_s: float = 600.0
    margin_s: float = 30.0
    region_eps: float = 0.001
    amp_threshold: float = 0.02


@dataclass
class EdaDecomposition:
    participant_id: str
    t: np.ndarray
    y: np.ndarray
    tonic: np.ndarray  # NaN on skipped samples
    driver: np.ndarray
    phasic_sc: np.ndarray
    residual_rms: float
    irf: IrfParams
    rate_hz: float
    events: ScrEvents = field(default_factory=ScrEvents.empty)
    segments: list = field(default_factory=list)  # processed index slices
    noise_sd: float = 0.0
    warnings: list = field(default_factory=list)

    @property
    def residual(self) -> np.ndarray:
        return self.y - self.tonic - self.phasic_sc


def _solve_segment(r: np.ndarray, params: IrfParams, rate_hz: float, s: DecompositionSettings) -> np.ndarray:
    """Deconvolve one gap-free segment block by block.

    Each block keeps ``margin_s`` of neighbouring data on both sides so the
    tails of earlier responses and the onsets of later ones are explained
    inside the block; only the core samples are kept.
    """
    g0, a1, a2 = filter_coefficients(params, rate_hz)
    n = r.size
    core = max(1, int(round(s.block_s * rate_hz)))
    margin = int(round(s.margin_s * rate_hz))
    out = np.zeros(n)
    worst = None
    for start in range(0, n, core):
        stop = min(n, start + core)
        a = max(0, start - margin)
        b = min(n, stop + margin)
        d, f, it, ok = _deconv.solve_nonneg_l1(np.ascontiguousarray(r[a:b]), s.lambda_sparsity,
                                                g0, a1, a2, s.max_iter, s.tol)
        if not ok:
            kd = np.empty(b - a)
            _deconv.irf_forward(d, kd, g0, a1, a2)
            worst = float(np.sqrt(np.mean((kd - r[a:b]) ** 2)))
            raise ConvergenceError(
                f"deconvolution did not converge within {s.max_iter} iterations", worst)
        out[start:stop] = d[start - a:stop - a]
    return out


def decompose(series: EdaSeries, irf: IrfParams = IrfParams(), lambda_sparsity: Optional[float] = None,
              settings: Optional[DecompositionSettings] = None, detect: bool = True) -> EdaDecomposition:
    """Tonic/phasic decomposition of every gap-free segment of ``series``.

    Segments shorter than ``min_segment_s`` are skipped (NaN output) with a
    warning. The reconstruction identity ``y = tonic + phasic_sc + residual``
    holds samplewise on processed samples.
    """
    s = settings or DecompositionSettings()
    if lambda_sparsity is not None:
        s = DecompositionSettings(**{**s.__dict__, "lambda_sparsity": lambda_sparsity})
    rate = series.nominal_rate_hz
    y = np.asarray(series.sc_us, dtype=np.float64)
    n = y.size
    tonic = np.full(n, np.nan)
    driver = np.full(n, np.nan)
    phasic = np.full(n, np.nan)
    processed, warnings = [], []
    min_len_ms = s.min_segment_s * 1000.0
    for seg in series.segments():
        ts = series.t[seg]
        if ts[-1] - ts[0] + 1000.0 / rate < min_len_ms:
            msg = f"segment at t={int(ts[0])} shorter than {s.min_segment_s:g} s; skipped"
            warnings.append(msg)
            log.warning("%s: %s", series.participant_id, msg)
            continue
        ys = y[seg]
        noise = estimate_noise_sd(ys)
        tn = estimate_tonic(ys, rate, noise_sd=noise)
        d = _solve_segment(ys - tn, irf, rate, s)
        tonic[seg] = tn
        driver[seg] = d
        phasic[seg] = convolve_irf(d, irf, rate)
        processed.append(seg)
    mask = ~np.isnan(tonic)
    resid = y[mask] - tonic[mask] - phasic[mask]
    rms = float(np.sqrt(np.mean(resid * resid))) if resid.size else 0.0
    noise_all = estimate_noise_sd(y[mask]) if mask.any() else 0.0
    dec = EdaDecomposition(series.participant_id, series.t, y, tonic, driver, phasic, rms, irf, rate,
                           segments=processed, noise_sd=noise_all, warnings=warnings)
    if detect:
        dec.events = detect_scrs(dec, s.region_eps, s.amp_threshold)
    return dec


def detect_scrs(decomp: EdaDecomposition, region_eps: float = 0.001,
                amp_threshold: float = 0.02) -> ScrEvents:
    """Candidate SCRs: contiguous runs of driver > ``region_eps``.

    Each run's driver, isolated from the rest, is passed through the IRF; its
    peak gives the amplitude and peak time. Significance is amplitude >=
    ``amp_threshold``.
    """
    g0, a1, a2 = filter_coefficients(decomp.irf, decomp.rate_hz)
    tail = int(math.ceil(10.0 * decomp.irf.tau2_s * decomp.rate_hz))
    parts = []
    for seg in decomp.segments:
        d = np.ascontiguousarray(decomp.driver[seg])
        above = d > region_eps
        if not above.any():
            continue
        edges = np.diff(np.concatenate(([0], above.astype(np.int8), [0])))
        starts = np.nonzero(edges == 1)[0].astype(np.int64)
        ends = (np.nonzero(edges == -1)[0] - 1).astype(np.int64)
        amp, peak = _deconv.region_amplitudes(d, starts, ends, tail, g0, a1, a2)
        t = decomp.t[seg]
        parts.append(ScrEvents(t[starts].astype(np.int64), t[peak].astype(np.int64), amp,
                               amp >= amp_threshold))
    return ScrEvents.concat(parts)


# ------------------------------------------------------------------ parameter search


@dataclass
class IrfSearch:
    tau1_range: tuple = (0.2, 2.0)
    tau2_range: tuple = (1.0, 8.0)
    grid: int = 8
    refine: int = 5
    beta: float = 0.1


def irf_objective(series: EdaSeries, params: IrfParams, settings: Optional[DecompositionSettings] = None,
                  beta: float = 0.1) -> float:
    """residual RMS + beta * mean driver: small for compact, well-fitting drivers."""
    dec = decompose(series, params, settings=settings, detect=False)
    d = dec.driver[~np.isnan(dec.driver)]
    return dec.residual_rms + beta * (float(d.mean()) if d.size else 0.0)


def optimize_irf(series: EdaSeries, search: IrfSearch = IrfSearch(),
                 settings: Optional[DecompositionSettings] = None,
                 default: IrfParams = IrfParams()) -> tuple[IrfParams, float]:
    """Grid search (log-spaced) for the IRF time constants, then one local refinement.

    Candidates must beat the default parameters by more than 1e-6 to be
    chosen, so inputs that carry no phasic information keep the defaults.
    """
    (l1, h1), (l2, h2) = search.tau1_range, search.tau2_range
    if not (0 < l1 < h1 and 0 < l2 < h2) or l1 >= h2:
        raise ParameterError(f"degenerate search box {search.tau1_range} x {search.tau2_range}")
    cache: dict = {}

    def J(t1: float, t2: float) -> float:
        key = (round(t1, 12), round(t2, 12))
        if key not in cache:
            cache[key] = irf_objective(series, IrfParams(t1, t2), settings, search.beta)
        return cache[key]

    best_p, best_j = default, J(default.tau1_s, default.tau2_s)
    g1 = np.geomspace(l1, h1, search.grid)
    g2 = np.geomspace(l2, h2, search.grid)

    def consider(t1: float, t2: float):
        nonlocal best_p, best_j
        if not t1 < t2:
            return
        j = J(t1, t2)
        if j < best_j - 1e-6:
            best_p, best_j = IrfParams(float(t1), float(t2)), j

    for t1 in g1:
        for t2 in g2:
            consider(t1, t2)
    if best_p != default:
        r1 = (h1 / l1) ** (1.0 / (search.grid - 1))
        r2 = (h2 / l2) ** (1.0 / (search.grid - 1))
        c1, c2 = best_p.tau1_s, best_p.tau2_s
        for t1 in np.geomspace(c1 / r1, c1 * r1, search.refine):
            for t2 in np.geomspace(c2 / r2, c2 * r2, search.refine):
                if l1 <= t1 <= h1 and l2 <= t2 <= h2:
                    consider(t1, t2)
    return best_p, best_j


def select_excerpt(series: EdaSeries, length_s: float) -> EdaSeries:
    """The gap-free stretch of ``length_s`` with the most upward conductance movement."""
    rate = series.nominal_rate_hz
    n_win = int(round(length_s * rate))
    best = None
    for seg in series.segments():
        y = series.sc_us[seg]
        if y.size <= n_win:
            score = float(np.clip(np.diff(y), 0, None).sum()) if y.size > 1 else 0.0
            cand = (score, seg.start, seg.stop)
        else:
            rise = np.concatenate(([0.0], np.cumsum(np.clip(np.diff(y), 0, None))))
            gain = rise[n_win:] - rise[:-n_win]
            k = int(np.argmax(gain))
            cand = (float(gain[k]), seg.start + k, seg.start + k + n_win)
        if best is None or cand[0] > best[0]:
            best = cand
    if best is None:
        return series
    _, a, b = best
    return EdaSeries(series.participant_id, series.t[a:b], series.sc_us[a:b], rate, [])


# ------------------------------------------------------------------ window features


@dataclass
class EdaWindowFeatures:
    t: np.ndarray
    sd_phasic_driver: np.ndarray
    iscr_us_s: np.ndarray
    n_scr: np.ndarray
    scr_freq_per_min: np.ndarray
    max_scr_amp_us: np.ndarray
    sum_scr_amp_us: np.ndarray
    mean_scl_us: np.ndarray
    window_s: float = 300.0
    step_s: float = 1.0

    FIELDS = ("sd_phasic_driver", "iscr_us_s", "n_scr", "scr_freq_per_min", "max_scr_amp_us",
              "sum_scr_amp_us", "mean_scl_us")

    def __len__(self) -> int:
        return int(self.t.size)

    @classmethod
    def empty(cls, window_s: float = 300.0, step_s: float = 1.0) -> "EdaWindowFeatures":
        z = np.zeros(0)
        return cls(np.zeros(0, np.int64), z, z, np.zeros(0, np.int64), z, z, z, z, window_s, step_s)

    @staticmethod
    def concat(parts: list["EdaWindowFeatures"], window_s: float, step_s: float) -> "EdaWindowFeatures":
        if not parts:
            return EdaWindowFeatures.empty(window_s, step_s)
        cols = [np.concatenate([getattr(p, f) for p in parts]) for f in ("t",) + EdaWindowFeatures.FIELDS]
        return EdaWindowFeatures(*cols, window_s=window_s, step_s=step_s)


def window_features(decomp: EdaDecomposition, window_s: float = 300.0, step_s: float = 1.0) -> EdaWindowFeatures:
    """Seven features over right-anchored windows (t - window_s, t].

    Windows never straddle a gap: only end times whose whole window lies inside
    one processed segment are emitted. ISCR integrates the driver with the
    trapezoid rule over the closed window [t - window_s, t]. Window sums are
    updated incrementally, so the cost is linear in samples plus windows.
    """
    win_ms = int(round(window_s * 1000))
    step_ms = int(round(step_s * 1000))
    sig = decomp.events.only_significant()
    order = np.argsort(sig.peak, kind="stable")
    ev_t = sig.peak[order]
    ev_amp = np.ascontiguousarray(sig.amplitude_us[order])
    ev_csum = np.concatenate(([0.0], np.cumsum(ev_amp)))
    parts = []
    for seg in decomp.segments:
        t = decomp.t[seg]
        d = decomp.driver[seg]
        tonic = decomp.tonic[seg]
        # the grid of window_ends(t[0] + win, t[-1]) without materializing it first
        first = -(-(int(t[0]) + win_ms) // step_ms) * step_ms
        n_ends = (int(t[-1]) // step_ms * step_ms - first) // step_ms + 1
        if n_ends <= 0:
            continue
        sd, iscr, n_scr, max_amp, sum_amp, mean_scl = _deconv.eda_feature_pass(
            t, d, tonic, first, step_ms, n_ends, win_ms, ev_t, ev_amp, ev_csum)
        ends = first + step_ms * np.arange(n_ends, dtype=np.int64)
        parts.append(EdaWindowFeatures(ends, sd, iscr, n_scr, n_scr / (window_s / 60.0), max_amp, sum_amp,
                                       mean_scl, window_s, step_s))
    return EdaWindowFeatures.concat(parts, window_s, step_s)
