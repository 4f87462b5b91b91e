"""Seeded synthetic sessions with ground truth.

Signal models:

* IBI: successive differences have squared magnitude
  ``s(t)^2 (1 + j*u_i)`` with ``u_i ~ U(-1, 1)``, so the rolling RMSSD tracks
  the planned level ``s(t)`` to within a fraction of a percent while staying
  tie-free. Signs are random with a pull toward the mean IBI,
  so the heart rate wanders but never drifts away.
* EDA: tonic (monotone cubic through knots) + Bateman response to impulses
  + white Gaussian noise.
* GPS: noise-free track moving north at the planned speed, sampled on a
  fixed interval; walks start and end on sample times.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import ingest
from .eda import IrfParams, convolve_irf
from .errors import ParameterError
from .geo import EARTH_RADIUS_M
from .ingest import EdaSeries, EsmResponse, GpsTrack, IbiSeries, WalkabilityCell

# 2024-05-06T12:00:00Z
DEFAULT_T0_MS = 1_714_996_800_000


@dataclass
class IbiDip:
    """Rolling RMSSD held at ``target_ms`` for window ends in [start_s, end_s]."""

    start_s: float
    end_s: float
    target_ms: float


@dataclass
class IbiPlan:
    mean_ms: float = 800.0
    rmssd_ms: float = 45.0
    jitter: float = 0.2
    dips: list = field(default_factory=list)
    window_s: float = 300.0


@dataclass
class Impulse:
    t_s: float
    amplitude_us: float  # peak of the resulting response


@dataclass
class EdaPlan:
    tonic_knots: list = field(default_factory=lambda: [(0.0, 2.0)])  # (t_s, level_us)
    impulses: list = field(default_factory=list)
    noise_sd: float = 0.0
    gaps: list = field(default_factory=list)  # (start_s, end_s) without samples
    rate_hz: float = 4.0
    tau1_s: float = 0.7
    tau2_s: float = 2.0
    bursts: list = field(default_factory=list)  # lists of Impulse forming one burst each
    window_s: float = 300.0  # feature window, used for the burst ground truth

    def all_impulses(self) -> list:
        return list(self.impulses) + [imp for b in self.bursts for imp in b]


@dataclass
class Walk:
    start_s: float
    end_s: float
    speed_mps: float = 1.2


@dataclass
class GpsPlan:
    origin: tuple = (40.4406, -79.9959)  # (lat, lon)
    interval_s: float = 300.0
    walks: list = field(default_factory=list)
    rest_speed_mps: float = 0.0
    drives: list = field(default_factory=list)  # Walk records with out-of-band speed
    duplicate_bursts: list = field(default_factory=list)  # (t_s, n_copies)
    missed_samples_s: list = field(default_factory=list)  # sample times to drop
    record_speed: bool = True
    jitter_m: float = 0.0


@dataclass
class ScenarioSpec:
    name: str
    seed: int = 0
    duration_s: float = 3600.0
    participant_id: str = "P01"
    t0_ms: int = DEFAULT_T0_MS
    tz_offset_min: int = 0
    ibi: Optional[IbiPlan] = None
    eda: Optional[EdaPlan] = None
    gps: Optional[GpsPlan] = None
    esm: list = field(default_factory=list)  # EsmResponse records
    study_days: int = 1

    def validate(self) -> None:
        d = self.duration_s
        if d <= 0:
            raise ParameterError("duration_s must be positive")

        def inside(a, b, what):
            if not (0 <= a < b <= d):
                raise ParameterError(f"{self.name}: {what} [{a}, {b}] outside [0, {d}]")

        if self.ibi is not None:
            for dip in self.ibi.dips:
                inside(dip.start_s, dip.end_s, "IBI dip")
                if not 0 < dip.target_ms:
                    raise ParameterError("dip target must be positive")
        if self.eda is not None:
            for imp in self.eda.all_impulses():
                inside(imp.t_s, imp.t_s + 1e-9, "impulse")
                if imp.amplitude_us <= 0:
                    raise ParameterError("impulse amplitude must be positive")
            for a, b in self.eda.gaps:
                inside(a, b, "EDA gap")
            if self.eda.noise_sd < 0:
                raise ParameterError("noise_sd must be >= 0")
        if self.gps is not None:
            for w in self.gps.walks + self.gps.drives:
                inside(w.start_s, w.end_s, "GPS movement")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        if d.get("ibi") is not None:
            ibi = dict(d["ibi"])
            ibi["dips"] = [IbiDip(**x) for x in ibi.get("dips", [])]
            d["ibi"] = IbiPlan(**ibi)
        if d.get("eda") is not None:
            eda = dict(d["eda"])
            eda["impulses"] = [Impulse(**x) for x in eda.get("impulses", [])]
            eda["tonic_knots"] = [tuple(k) for k in eda.get("tonic_knots", [(0.0, 2.0)])]
            eda["gaps"] = [tuple(g) for g in eda.get("gaps", [])]
            eda["bursts"] = [[Impulse(**x) for x in b] for b in eda.get("bursts", [])]
            d["eda"] = EdaPlan(**eda)
        if d.get("gps") is not None:
            gps = dict(d["gps"])
            gps["walks"] = [Walk(**x) for x in gps.get("walks", [])]
            gps["drives"] = [Walk(**x) for x in gps.get("drives", [])]
            gps["origin"] = tuple(gps.get("origin", (40.4406, -79.9959)))
            gps["duplicate_bursts"] = [tuple(b) for b in gps.get("duplicate_bursts", [])]
            d["gps"] = GpsPlan(**gps)
        d["esm"] = [EsmResponse(**x) for x in d.get("esm", [])]
        return cls(**d)


@dataclass
class GroundTruth:
    scr_events: list = field(default_factory=list)  # (peak_ms, amplitude_us)
    low_rmssd: list = field(default_factory=list)  # (start_ms, end_ms)
    scr_bursts: list = field(default_factory=list)  # (start_ms, end_ms)
    walking: list = field(default_factory=list)  # (start_ms, end_ms)
    eda_gaps: list = field(default_factory=list)  # (start_ms, end_ms)
    report_categories: list = field(default_factory=list)  # (text, category or None)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SessionBundle:
    participant_id: str
    tz_offset_min: int
    ibi: Optional[IbiSeries] = None
    eda: Optional[EdaSeries] = None
    gps: Optional[GpsTrack] = None
    esm: list = field(default_factory=list)
    cells: list = field(default_factory=list)
    study_days: int = 1


# ------------------------------------------------------------------ IBI


def _rmssd_level(t_s: np.ndarray, plan: IbiPlan) -> np.ndarray:
    """Planned successive-difference RMS at each beat time."""
    level = np.full(t_s.size, float(plan.rmssd_ms))
    for dip in plan.dips:
        # every window ending in [start, end] must hold only depressed pairs
        m = (t_s > dip.start_s - plan.window_s) & (t_s <= dip.end_s)
        level[m] = dip.target_ms
    return level


def generate_ibi(plan: IbiPlan, duration_s: float, t0_ms: int, pid: str, rng: np.random.Generator) -> IbiSeries:
    """Beat stream whose successive-difference RMS follows the plan second by second."""
    sec = np.arange(int(math.ceil(duration_s)) + 2, dtype=np.float64)
    table = _rmssd_level(sec + 1.0, plan)  # level for beats in (sec, sec+1]
    return _ibi_loop(plan.mean_ms, plan.jitter, 3.0 * plan.rmssd_ms, table, duration_s, t0_ms, pid, rng)


def _ibi_loop(mean_ms, jitter, scale, table, duration_s, t0_ms, pid, rng) -> IbiSeries:
    from ._synthloop import ibi_walk

    n_max = int(duration_s * 1000.0 / (mean_ms * 0.5)) + 16
    u = rng.uniform(-1.0, 1.0, n_max)
    coin = rng.uniform(0.0, 1.0, n_max)
    t, ibi, k = ibi_walk(mean_ms, jitter, scale, table, duration_s * 1000.0, u, coin)
    return IbiSeries(pid, t0_ms + np.round(t[:k]).astype(np.int64), ibi[:k].copy())


def low_rmssd_truth(plan: IbiPlan, t0_ms: int) -> list[tuple[int, int]]:
    """Half-depth extent of each dip in the rolling RMSSD.

    Depressed beats span [start - W, end]; the rolling value ramps over one
    window length on each side of the plateau and crosses half depth (in
    squared RMSSD) at the ramp midpoints, giving [start - W/2, end + W/2].
    """
    half = plan.window_s / 2.0
    return [(t0_ms + int(round((d.start_s - half) * 1000)), t0_ms + int(round((d.end_s + half) * 1000)))
            for d in plan.dips]


# ------------------------------------------------------------------ EDA


def unit_peak(params: IrfParams, rate_hz: float) -> tuple[float, int]:
    """Peak height and peak sample offset of the response to a unit-area impulse."""
    n = int(math.ceil(10 * params.tau2_s * rate_hz)) + 2
    x = np.zeros(n)
    x[0] = rate_hz
    y = convolve_irf(x, params, rate_hz)
    k = int(np.argmax(y))
    return float(y[k]), k


def snr_noise_sd(amplitudes, snr_db: float = 20.0) -> float:
    """Noise sd giving the weakest response an amplitude ratio of ``snr_db``."""
    return float(min(amplitudes)) / 10 ** (snr_db / 20.0)


def generate_eda(plan: EdaPlan, duration_s: float, t0_ms: int, pid: str,
                 rng: np.random.Generator) -> tuple[EdaSeries, list, list]:
    rate = plan.rate_hz
    params = IrfParams(plan.tau1_s, plan.tau2_s)
    n = int(round(duration_s * rate))
    k = np.arange(n)
    t_s = k / rate
    knots = sorted(plan.tonic_knots)
    if len(knots) == 1:
        tonic = np.full(n, float(knots[0][1]))
    else:
        kx = np.array([p[0] for p in knots], dtype=float)
        ky = np.array([p[1] for p in knots], dtype=float)
        tonic = PchipInterpolator(kx, ky, extrapolate=False)(np.clip(t_s, kx[0], kx[-1]))
    peak_h, peak_k = unit_peak(params, rate)
    driver = np.zeros(n)
    events = []
    impulses = plan.all_impulses()
    for imp in impulses:
        i = int(round(imp.t_s * rate))
        if i >= n:
            continue
        driver[i] += imp.amplitude_us / peak_h * rate
        events.append((int(t0_ms + round((i + peak_k) * 1000.0 / rate)), float(imp.amplitude_us)))
    phasic = convolve_irf(driver, params, rate) if impulses else np.zeros(n)
    y = tonic + phasic
    if plan.noise_sd > 0:
        y = y + rng.normal(0.0, plan.noise_sd, n)
    t = t0_ms + np.round(k * 1000.0 / rate).astype(np.int64)
    keep = np.ones(n, dtype=bool)
    gaps = []
    for a, b in plan.gaps:
        m = (t_s >= a) & (t_s < b)
        keep &= ~m
        gaps.append((t0_ms + int(round(a * 1000)), t0_ms + int(round(b * 1000))))
    t, y = t[keep], y[keep]
    declared = ingest.detect_gaps(t, rate)
    # events whose peak fell into a hole are not observable
    events = [e for e in events if not any(g0 <= e[0] < g1 for g0, g1 in gaps)]
    return EdaSeries(pid, t, y, rate, declared), events, gaps


def periodic_impulses(start_s: float, end_s: float, every_s: float, amplitude_us: float) -> list[Impulse]:
    return [Impulse(float(x), amplitude_us) for x in np.arange(start_s, end_s, every_s)]


def burst_truth(burst: list[Impulse], t0_ms: int, window_s: float, params: IrfParams, rate_hz: float):
    """Interval where the rolling SCR count exceeds its background level.

    The count rises when the first burst response peaks and returns once the
    last one leaves the window.
    """
    _, pk = unit_peak(params, rate_hz)
    peaks = sorted(round(b.t_s * rate_hz) + pk for b in burst)
    a = t0_ms + int(round(peaks[0] * 1000.0 / rate_hz))
    z = t0_ms + int(round(peaks[-1] * 1000.0 / rate_hz)) + int(round(window_s * 1000))
    return (a, z)


# ------------------------------------------------------------------ GPS


def generate_gps(plan: GpsPlan, duration_s: float, t0_ms: int, pid: str,
                 rng: np.random.Generator) -> tuple[GpsTrack, list]:
    step = plan.interval_s
    ts = np.arange(0.0, duration_s, step)
    speed = np.full(ts.size, plan.rest_speed_mps)
    for w in plan.drives + plan.walks:
        speed[(ts >= w.start_s) & (ts <= w.end_s)] = w.speed_mps
    lat0, lon0 = plan.origin
    # point i is reached from point i-1 at speed[i]: backward differences recover it
    dist = np.concatenate(([0.0], speed[1:] * np.diff(ts)))
    lat = lat0 + np.degrees(np.cumsum(dist) / EARTH_RADIUS_M)
    lon = np.full(ts.size, lon0)
    if plan.jitter_m > 0:
        lat = lat + np.degrees(rng.normal(0.0, plan.jitter_m, ts.size) / EARTH_RADIUS_M)
    keep = np.ones(ts.size, dtype=bool)
    for m in plan.missed_samples_s:
        keep &= ~np.isclose(ts, m)
    t = t0_ms + np.round(ts * 1000).astype(np.int64)
    t, lat, lon, speed = t[keep], lat[keep], lon[keep], speed[keep]
    if plan.duplicate_bursts:
        extra_t, extra_lat, extra_lon, extra_sp = [], [], [], []
        for at_s, copies in plan.duplicate_bursts:
            i = int(np.argmin(np.abs(t - (t0_ms + at_s * 1000))))
            offs = np.sort(rng.choice(np.arange(1, 1000), size=int(copies), replace=False))
            for o in offs:
                extra_t.append(t[i] + int(o))
                extra_lat.append(lat[i] + 1e-7)
                extra_lon.append(lon[i])
                extra_sp.append(speed[i])
        t = np.concatenate((t, extra_t)).astype(np.int64)
        order = np.argsort(t, kind="stable")
        t = t[order]
        lat = np.concatenate((lat, extra_lat))[order]
        lon = np.concatenate((lon, extra_lon))[order]
        speed = np.concatenate((speed, extra_sp))[order]
    sp = speed.astype(float) if plan.record_speed else np.full(t.size, np.nan)
    walks = [(t0_ms + int(round(w.start_s * 1000)), t0_ms + int(round(w.end_s * 1000))) for w in plan.walks]
    return GpsTrack(pid, t, lat, lon, sp), walks


def grid_cells(track: GpsTrack, rng: np.random.Generator, size_deg: float = 0.01, pad: int = 1) -> list[WalkabilityCell]:
    """Square cells covering the track's bounding box with random national ranks."""
    if len(track) == 0:
        return []
    lat_lo = math.floor(track.lat.min() / size_deg) - pad
    lat_hi = math.floor(track.lat.max() / size_deg) + pad
    lon_lo = math.floor(track.lon.min() / size_deg) - pad
    lon_hi = math.floor(track.lon.max() / size_deg) + pad
    cells = []
    for i in range(lat_lo, lat_hi + 1):
        for j in range(lon_lo, lon_hi + 1):
            x0, y0 = j * size_deg, i * size_deg
            ring = [(x0, y0), (x0 + size_deg, y0), (x0 + size_deg, y0 + size_deg), (x0, y0 + size_deg), (x0, y0)]
            ranks = rng.integers(1, 21, 4).astype(float)
            cells.append(WalkabilityCell(f"c{i}_{j}", [ring], None, *ranks.tolist()))
    return cells


# ------------------------------------------------------------------ ESM


INFRA_TEXTS = [
    ("Sometimes there are poles in the sidewalk", "sidewalk"),
    ("Cars typically don't stop at a crosswalk", "crosswalk"),
    ("water on the ground constantly", "other"),
    ("big pothole near the bus stop", "uneven_surface"),
    ("trash everywhere on the corner", "trash_debris"),
    ("No.", None),
    ("nothing", None),
    ("I didn't see any issue", None),
]


def esm_schedule(pid: str, t0_ms: int, study_days: int, rng: np.random.Generator,
                 answer_prob: dict | None = None) -> tuple[list[EsmResponse], list]:
    """Four daily surveys; each answered with the given probability."""
    probs = answer_prob or {"morning": 0.5, "afternoon": 0.7, "evening": 0.6, "end_of_day": 0.8}
    hours = {"morning": 8, "afternoon": 13, "evening": 18, "end_of_day": 21}
    out, cats = [], []
    day0 = t0_ms - t0_ms % 86_400_000
    for day in range(study_days):
        for st in ingest.SURVEY_TYPES:
            if rng.uniform() >= probs[st]:
                continue
            t = day0 + day * 86_400_000 + hours[st] * 3_600_000
            r = EsmResponse(pid, st, int(t), stress=int(rng.integers(0, 11)), valence=int(rng.integers(-3, 4)),
                            arousal=int(rng.integers(0, 5)))
            if st == "morning":
                r.sleep_quality = int(rng.integers(1, 6))
            if st == "end_of_day":
                r.walked_today = bool(rng.uniform() < 0.7)
                r.walk_minutes = int(rng.integers(0, 90))
                text, cat = INFRA_TEXTS[int(rng.integers(0, len(INFRA_TEXTS)))]
                r.infra_text = text
                cats.append((text, cat))
            out.append(r)
    return out, cats


# ------------------------------------------------------------------ generate


def generate(spec: ScenarioSpec) -> tuple[SessionBundle, GroundTruth]:
    spec.validate()
    # independent streams per modality so adding one never perturbs another
    r_ibi, r_eda, r_gps, r_cells = (np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(4))
    pid = spec.participant_id
    bundle = SessionBundle(pid, spec.tz_offset_min, study_days=spec.study_days)
    truth = GroundTruth()
    if spec.ibi is not None:
        bundle.ibi = generate_ibi(spec.ibi, spec.duration_s, spec.t0_ms, pid, r_ibi)
        truth.low_rmssd = low_rmssd_truth(spec.ibi, spec.t0_ms)
    if spec.eda is not None:
        bundle.eda, truth.scr_events, truth.eda_gaps = generate_eda(spec.eda, spec.duration_s, spec.t0_ms, pid, r_eda)
        params = IrfParams(spec.eda.tau1_s, spec.eda.tau2_s)
        truth.scr_bursts = [burst_truth(b, spec.t0_ms, spec.eda.window_s, params, spec.eda.rate_hz)
                            for b in spec.eda.bursts if b]
    if spec.gps is not None:
        bundle.gps, truth.walking = generate_gps(spec.gps, spec.duration_s, spec.t0_ms, pid, r_gps)
        bundle.cells = grid_cells(bundle.gps, r_cells)
    if spec.esm:
        bundle.esm = list(spec.esm)
        from .esm import build_reports, merge_surveys

        ds, _ = merge_surveys(bundle.esm)
        truth.report_categories = [(r.raw_text, r.category) for r in build_reports(ds)]
    return bundle, truth


# ------------------------------------------------------------------ fixtures


def _composite(seed: int = 7) -> ScenarioSpec:
    """Three hours: a dip during the first walk, an SCR burst during the second."""
    burst = [Impulse(7230.0 + k, 0.3) for k in (12.0, 24.0, 36.0, 48.0)]
    # background responses every 60 s keep the rolling count flat at 5 outside the burst
    return ScenarioSpec(
        "composite_3h", seed=seed, duration_s=10800.0,
        ibi=IbiPlan(dips=[IbiDip(2700.0, 2820.0, 12.0)]),
        eda=EdaPlan(tonic_knots=[(0, 2.0), (3600, 2.6), (7200, 2.3), (10800, 2.5)],
                    impulses=periodic_impulses(30.0, 10800.0, 60.0, 0.15), bursts=[burst], noise_sd=0.005),
        gps=GpsPlan(walks=[Walk(1800.0, 4200.0, 1.3), Walk(6600.0, 9000.0, 1.1)],
                    drives=[Walk(5100.0, 5700.0, 9.0)]),
    )


def fixture_suite() -> dict:
    """Named canonical scenarios; values are (spec, truth) pairs."""
    walk = [Walk(900.0, 2700.0, 1.2)]
    specs = [
        ScenarioSpec("pure_tonic", seed=1, duration_s=600.0,
                     eda=EdaPlan(tonic_knots=[(0, 2.0), (300, 2.2), (600, 2.1)])),
        ScenarioSpec("single_scr", seed=2, duration_s=600.0,
                     eda=EdaPlan(impulses=[Impulse(200.0, 0.5)], noise_sd=0.0)),
        ScenarioSpec("scr_burst", seed=3, duration_s=1800.0,
                     eda=EdaPlan(bursts=[[Impulse(600.0 + 12 * k, 0.3) for k in range(5)]], noise_sd=0.003)),
        ScenarioSpec("eda_gap_mid_walk", seed=4, duration_s=3600.0,
                     eda=EdaPlan(impulses=periodic_impulses(60.0, 3600.0, 120.0, 0.2), noise_sd=0.005,
                                 gaps=[(1500.0, 1800.0)]),
                     gps=GpsPlan(walks=walk)),
        ScenarioSpec("dip_during_walk", seed=5, duration_s=3600.0,
                     ibi=IbiPlan(dips=[IbiDip(1500.0, 1620.0, 12.0)]), gps=GpsPlan(walks=walk)),
        ScenarioSpec("dip_outside_walk", seed=6, duration_s=3600.0,
                     ibi=IbiPlan(dips=[IbiDip(3150.0, 3270.0, 12.0)]), gps=GpsPlan(walks=walk)),
        ScenarioSpec("duplicate_burst_gps", seed=8, duration_s=3600.0,
                     gps=GpsPlan(walks=walk, duplicate_bursts=[(600.0, 3), (1200.0, 2), (3000.0, 4)])),
        _composite(),
    ]
    return {s.name: (s, generate(s)[1]) for s in specs}


def round_trip_fixture(k: int, seed: int = 11, amplitude_us: float = 0.1, separation_s: float = 10.0,
                       snr_db: float = 20.0) -> ScenarioSpec:
    """K impulses of ``amplitude_us`` ``separation_s`` apart at the given SNR."""
    amps = [amplitude_us * (1.0 + 0.5 * (i % 3)) for i in range(k)]
    imps = [Impulse(120.0 + i * separation_s, a) for i, a in enumerate(amps)]
    return ScenarioSpec(f"round_trip_k{k}", seed=seed + k, duration_s=300.0,
                        eda=EdaPlan(tonic_knots=[(0, 1.5), (300, 1.6)], impulses=imps,
                                    noise_sd=snr_noise_sd(amps, snr_db)))


def multi_day_spec(days: int = 14, seed: int = 99, participant_id: str = "P01") -> ScenarioSpec:
    """Long bundle at full rates: 4 Hz EDA, ~1 s IBIs, GPS every 5 min."""
    dur = days * 86400.0
    rng = np.random.default_rng(seed)
    walks, dips, imps = [], [], []
    for d in range(days):
        base = d * 86400.0
        for h in (8.5, 12.5, 17.5):
            s = base + h * 3600.0
            walks.append(Walk(s, s + 2400.0, float(rng.uniform(0.9, 1.6))))
        dips.append(IbiDip(base + 8.5 * 3600 + 900.0, base + 8.5 * 3600 + 1020.0, 15.0))
    gaps = rng.uniform(60, dur - 60, size=int(rng.poisson(0.7 * days)))
    t_imp = np.sort(rng.uniform(10.0, dur - 10.0, size=int(dur / 90.0)))
    imps = [Impulse(float(x), float(a)) for x, a in zip(t_imp, rng.uniform(0.05, 0.6, t_imp.size))]
    knots = [(float(x), float(v)) for x, v in zip(np.arange(0, dur + 1, 1800.0),
                                                  2.0 + 0.5 * np.sin(np.arange(0, dur + 1, 1800.0) / 20000.0))]
    return ScenarioSpec(
        "multi_day", seed=seed, duration_s=dur, participant_id=participant_id, t0_ms=DEFAULT_T0_MS - 43_200_000,
        ibi=IbiPlan(mean_ms=1000.0, dips=dips),
        eda=EdaPlan(tonic_knots=knots, impulses=imps, noise_sd=0.01,
                    gaps=[(float(g), float(g) + 600.0) for g in np.sort(gaps)]),
        gps=GpsPlan(walks=walks), study_days=days,
    )


# ------------------------------------------------------------------ serialization


def write_bundles(bundles: list[SessionBundle], out_dir, truths: Optional[dict] = None,
                  config_extra: Optional[dict] = None) -> Path:
    """Write bundles in the ingest formats plus a runnable ``config.yaml``.

    ESM responses of all bundles share one file; walkability cells are
    merged by cell id.
    """
    import yaml

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries, esm, cells = [], [], {}
    study_days = max((b.study_days for b in bundles), default=1)
    for bundle in bundles:
        pid = bundle.participant_id
        entry: dict = {"id": pid, "tz_offset": bundle.tz_offset_min}
        if bundle.ibi is not None:
            ingest.write_ibi(bundle.ibi, out / f"{pid}_ibi.csv")
            entry["ibi"] = f"{pid}_ibi.csv"
        if bundle.eda is not None:
            ingest.write_eda(bundle.eda, out / f"{pid}_eda.csv")
            entry["eda"] = f"{pid}_eda.csv"
        if bundle.gps is not None:
            ingest.write_gps(bundle.gps, out / f"{pid}_gps.csv")
            entry["gps"] = f"{pid}_gps.csv"
        entries.append(entry)
        esm.extend(bundle.esm)
        for c in bundle.cells:
            cells.setdefault(c.cell_id, c)
    cfg: dict = {"participants": entries, "study_days": study_days, "output_dir": "out"}
    if esm:
        ingest.write_esm(sorted(esm, key=lambda r: (r.participant_id, r.t, r.survey_type)), out / "esm.csv")
        cfg["esm_file"] = "esm.csv"
    if cells:
        ingest.write_walkability([cells[k] for k in sorted(cells)], out / "walkability.geojson")
        cfg["walkability_file"] = "walkability.geojson"
    if config_extra:
        cfg.update(config_extra)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))
    if truths:
        payload = {k: v.to_dict() for k, v in sorted(truths.items())}
        (out / "truth.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return out


def write_bundle(bundle: SessionBundle, out_dir, truth: Optional[GroundTruth] = None,
                 config_extra: Optional[dict] = None) -> Path:
    truths = {bundle.participant_id: truth} if truth is not None else None
    return write_bundles([bundle], out_dir, truths, config_extra)
