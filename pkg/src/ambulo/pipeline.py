"""Per-participant processing and the whole-study run."""

from __future__ import annotations

import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import eda as eda_mod
from . import esm as esm_mod
from . import fuse, geo, hrv, ingest
from .config import PipelineConfig
from .errors import AmbuloError

log = logging.getLogger(__name__)


@dataclass
class ParticipantResult:
    participant_id: str
    tz_offset_min: int = 0
    status: str = "ok"
    error: Optional[dict] = None
    reports: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    rmssd: Optional[hrv.RmssdSeries] = None
    z: Optional[hrv.Standardized] = None
    rmssd_summary: object = None
    baseline: Optional[hrv.BaselineSummary] = None
    decomposition: Optional[eda_mod.EdaDecomposition] = None
    irf: eda_mod.IrfParams = field(default_factory=eda_mod.IrfParams)
    irf_objective: Optional[float] = None
    features: Optional[eda_mod.EdaWindowFeatures] = None
    track: Optional[ingest.GpsTrack] = None
    segments: Optional[list] = None
    scored: Optional[geo.ScoredPoints] = None
    aligned: Optional[fuse.AlignedSeries] = None
    episodes: list = field(default_factory=list)
    rmssd_flags: Optional[fuse.DailyFlags] = None
    scr_flags: Optional[fuse.DailyFlags] = None


def ingest_settings(cfg: PipelineConfig) -> ingest.IngestSettings:
    c = cfg.ingest
    return ingest.IngestSettings(
        ibi_min_ms=c.ibi_min_ms, ibi_max_ms=c.ibi_max_ms, eda_rate_hz=c.eda_rate_hz,
        eda_gap_periods=c.eda_gap_periods, stress_range=tuple(c.stress_range),
        valence_range=tuple(c.valence_range), arousal_range=tuple(c.arousal_range),
        sleep_range=tuple(c.sleep_range),
    )


def decomposition_settings(cfg: PipelineConfig) -> eda_mod.DecompositionSettings:
    e = cfg.eda
    return eda_mod.DecompositionSettings(
        lambda_sparsity=e.lambda_sparsity, max_iter=e.max_iter, tol=e.tol, min_segment_s=e.min_segment_s,
        block_s=e.block_s, margin_s=e.margin_s, region_eps=e.region_eps, amp_threshold=e.amp_threshold,
    )


def episode_settings(cfg: PipelineConfig) -> fuse.EpisodeSettings:
    f = cfg.fuse
    return fuse.EpisodeSettings(f.rmssd_percentile, f.scr_percentile, f.min_episode_s, f.min_daily_points,
                                f.rmssd_pool, f.scr_walking_gate)


def process_participant(cfg: PipelineConfig, entry, cells: Optional[list]) -> ParticipantResult:
    """Run every per-participant stage; any failure marks the result as failed."""
    res = ParticipantResult(entry.id, entry.tz_offset)
    try:
        _process(cfg, entry, cells, res)
    except (AmbuloError, OSError, ValueError) as exc:
        res.status = "failed"
        res.error = {"type": type(exc).__name__, "message": str(exc)}
        if hasattr(exc, "last_residual"):
            res.error["last_residual"] = exc.last_residual
        log.error("%s failed: %s", entry.id, exc)
        log.debug("%s", traceback.format_exc())
    return res


def _process(cfg: PipelineConfig, entry, cells, res: ParticipantResult) -> None:
    settings = ingest_settings(cfg)
    pid = entry.id
    ibi = eda = track = None
    if entry.ibi:
        ibi, rep = ingest.parse_ibi(cfg.resolve(entry.ibi), pid, settings)
        res.reports["ibi"] = rep.to_dict()
    if entry.eda:
        eda, rep = ingest.parse_eda(cfg.resolve(entry.eda), pid, settings)
        res.reports["eda"] = rep.to_dict()
    if entry.gps:
        track, rep = ingest.parse_gps(cfg.resolve(entry.gps), pid, settings)
        res.reports["gps"] = rep.to_dict()
    for rep in res.reports.values():
        res.warnings.extend(rep["warnings"])

    # geo first: the walking mask feeds standardization scope and episodes
    segments: list = []
    if track is not None:
        g = cfg.gps
        track = geo.derive_speed(geo.dedup(track, g.dedup_horizon_ms))
        segments = geo.walking_segments(track, g.v_min, g.v_max, g.min_duration_s, g.max_gap_s)
        res.track, res.segments = track, segments
        res.scored = geo.spatial_join(track, cells or [], g.fallback_radius_m)
        res.scored.segment_id = geo.segment_ids_for(track.t, segments)

    h = cfg.hrv
    if ibi is not None:
        res.rmssd = hrv.rolling_rmssd(ibi, h.window_s, h.step_s, h.min_intervals)
        scope = None
        if h.standardize_scope == "per_participant_walking":
            scope, _ = fuse.walking_mask(res.rmssd.t, segments)
        if len(res.rmssd):
            res.z = hrv.standardize(res.rmssd.rmssd_ms, scope, ddof=h.ddof)
            if res.z.zero_variance:
                res.warnings.append("RMSSD has zero variance in the standardization scope")
            res.rmssd_summary = hrv.summarize_distribution(res.rmssd, cfg.report.kde_grid, cfg.report.bandwidth)
        res.baseline = hrv.sleep_baseline(ibi, tuple(h.sleep_window), entry.tz_offset, rmssd=res.rmssd,
                                          min_coverage_s=h.min_sleep_coverage_s)
        if res.scored is not None and res.z is not None:
            tol = int(max(cfg.fuse.physio_tol_s * 1000, h.step_s * 500))
            k = fuse.nearest_index(res.rmssd.t, res.scored.t, tol)
            res.scored.z_rmssd = np.where(k >= 0, res.z.z[np.maximum(k, 0)], np.nan)

    e = cfg.eda
    if eda is not None:
        ds = decomposition_settings(cfg)
        params = eda_mod.IrfParams(e.tau1_s, e.tau2_s)
        if e.optimize_irf:
            s = e.search
            search = eda_mod.IrfSearch(tuple(s.tau1_range), tuple(s.tau2_range), s.grid, s.refine, s.beta)
            excerpt = eda_mod.select_excerpt(eda, e.optimize_excerpt_s)
            params, res.irf_objective = eda_mod.optimize_irf(excerpt, search, ds, params)
        res.irf = params
        dec = eda_mod.decompose(eda, params, settings=ds)
        res.decomposition = dec
        res.warnings.extend(dec.warnings)
        res.features = eda_mod.window_features(dec, e.window_s, e.step_s)

    f = cfg.fuse
    rm = res.rmssd if res.rmssd is not None else hrv.RmssdSeries(pid, np.zeros(0, np.int64), np.zeros(0),
                                                                np.zeros(0, np.int64))
    res.aligned = fuse.align(rm, res.features, segments, res.scored, f.step_s, f.physio_tol_s, f.location_tol_s)
    es = episode_settings(cfg)
    eps = []
    if res.rmssd is not None:
        found, res.rmssd_flags = fuse.detect_rmssd_episodes(res.aligned, entry.tz_offset, es)
        eps.extend(found)
        res.warnings.extend(res.rmssd_flags.warnings)
    if res.features is not None:
        found, res.scr_flags = fuse.detect_scr_episodes(res.aligned, entry.tz_offset, es)
        eps.extend(found)
        res.warnings.extend(res.scr_flags.warnings)
    res.episodes = sorted(eps, key=lambda ep: (ep.start, ep.kind))


@dataclass
class RunResult:
    config: PipelineConfig
    results: list = field(default_factory=list)
    esm_dataset: Optional[dict] = None
    excluded: dict = field(default_factory=dict)
    rates: Optional[list] = None
    reports: Optional[list] = None
    word_freq: list = field(default_factory=list)
    problem_days: Optional[dict] = None
    global_warnings: list = field(default_factory=list)
    global_errors: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        failed = any(r.status != "ok" for r in self.results) or self.global_errors
        return 2 if failed else 0


def _worker(args):
    cfg, entry, cells = args
    return process_participant(cfg, entry, cells)


def run(cfg: PipelineConfig, participant: Optional[str] = None, jobs: Optional[int] = None) -> RunResult:
    """Process the roster (optionally one participant), then the surveys."""
    out = RunResult(cfg)
    roster = [p for p in cfg.participants if participant is None or p.id == participant]
    cells = None
    if cfg.walkability_file:
        try:
            cells, rep = ingest.parse_walkability(cfg.resolve(cfg.walkability_file))
            geo.score_cells(cells)
            out.global_warnings.extend(rep.warnings)
        except (AmbuloError, OSError, ValueError) as exc:
            out.global_errors.append({"stage": "walkability", "type": type(exc).__name__, "message": str(exc)})
            cells = None
    n_jobs = jobs or cfg.jobs or os.cpu_count() or 1
    tasks = [(cfg, entry, cells) for entry in roster]
    if n_jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, len(tasks))) as pool:
            out.results = list(pool.map(_worker, tasks))
    else:
        out.results = [_worker(t) for t in tasks]

    if cfg.esm_file:
        try:
            responses, rep = ingest.parse_esm(cfg.resolve(cfg.esm_file), ingest_settings(cfg))
            out.global_warnings.extend(rep.warnings)
        except (AmbuloError, OSError, ValueError) as exc:
            out.global_errors.append({"stage": "esm", "type": type(exc).__name__, "message": str(exc)})
            responses = None
        if responses is not None:
            ids = {p.id for p in roster}
            responses = [r for r in responses if r.participant_id in ids]
            s = cfg.surveys
            out.esm_dataset, out.excluded = esm_mod.merge_surveys(responses)
            for pid in sorted(ids):
                out.esm_dataset.setdefault(pid, [])
            out.rates = esm_mod.response_rates(out.esm_dataset, cfg.study_days)
            out.reports = esm_mod.build_reports(out.esm_dataset, s.stoplist, s.keywords)
            stop = esm_mod.load_stopwords(cfg.resolve(s.stopwords_file) if s.stopwords_file else None)
            texts = [r.raw_text for r in out.reports if r.category is not None]
            out.word_freq = esm_mod.word_frequencies(texts, stop, s.top_n)
            tz = {p.id: p.tz_offset for p in roster}
            out.problem_days = esm_mod.problem_day_counts(out.reports, tz)
            for pid in sorted(ids):
                out.problem_days.setdefault(pid, 0)
    return out


def write_outputs(run_result: RunResult, out_dir) -> list[Path]:
    """Per-participant tables, survey tables, the report tree and the config echo."""
    import yaml

    from . import report

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = run_result.config
    files = []
    p = out / "effective_config.yaml"
    p.write_text(yaml.safe_dump(cfg.echo(), sort_keys=True))
    files.append(p)
    status = {"participants": {}, "errors": run_result.global_errors}
    for res in run_result.results:
        status["participants"][res.participant_id] = {"status": res.status, "error": res.error}
        if res.status != "ok":
            continue
        d = out / "participants" / res.participant_id
        d.mkdir(parents=True, exist_ok=True)
        files.extend(_participant_files(res, d, cfg))
    p = out / "run_status.json"
    report.dump_json(status, p)
    files.append(p)
    if run_result.reports is not None:
        sd = out / "surveys"
        sd.mkdir(parents=True, exist_ok=True)
        esm_mod.write_reports(run_result.reports, sd / "reports.csv")
        esm_mod.write_frequencies(run_result.word_freq, sd / "word_frequencies.csv")
        esm_mod.write_rates(run_result.rates, sd / "response_rates.csv", report.fmt)
        files.extend([sd / "reports.csv", sd / "word_frequencies.csv", sd / "response_rates.csv"])
    files.extend(report.build_report(run_result, out).files)
    return files


def _participant_files(res: ParticipantResult, d: Path, cfg: PipelineConfig) -> list[Path]:
    from .report import fmt, write_table

    files = []
    if res.rmssd is not None:
        z = res.z.z if res.z is not None else np.full(len(res.rmssd), np.nan)
        p = d / "rmssd.csv"
        write_table(p, ["t_utc_ms", "rmssd_ms", "n_intervals", "z"],
                    [res.rmssd.t, res.rmssd.rmssd_ms, res.rmssd.n_intervals, z])
        files.append(p)
    if res.baseline is not None:
        p = d / "baseline.csv"
        dates = sorted(res.baseline.coverage_s)
        write_table(p, ["local_date", "coverage_s", "baseline_rmssd_ms"], [
            np.array([x.isoformat() for x in dates], dtype=object),
            np.array([res.baseline.coverage_s[x] for x in dates], dtype=float),
            np.array([res.baseline.baselines.get(x, np.nan) for x in dates], dtype=float)])
        files.append(p)
    if res.features is not None:
        f = res.features
        p = d / "eda_features.csv"
        write_table(p, ["t_utc_ms", "sd_phasic", "iscr", "n_scr", "scr_freq_per_min", "max_amp", "sum_amp",
                        "mean_scl"], [f.t, *(getattr(f, k) for k in eda_mod.EdaWindowFeatures.FIELDS)])
        files.append(p)
    if res.decomposition is not None:
        dec = res.decomposition
        if cfg.report.series_dumps:
            p = d / "eda_decomposition.csv"
            write_table(p, ["t_utc_ms", "tonic", "driver", "phasic_sc"], [dec.t, dec.tonic, dec.driver, dec.phasic_sc])
            files.append(p)
        ev = dec.events
        p = d / "scr_events.csv"
        write_table(p, ["onset_ms", "peak_ms", "amplitude_us", "significant"],
                    [ev.onset, ev.peak, ev.amplitude_us, ev.significant])
        files.append(p)
    if res.segments is not None:
        p = d / "segments.csv"
        geo.write_segments_csv(res.segments, p, fmt)
        files.append(p)
    p = d / "episodes.csv"
    p.write_text("\n".join([fuse.EPISODE_HEADER, *fuse.episode_rows(res.episodes, fmt)]) + "\n")
    files.append(p)
    if res.aligned is not None and cfg.report.series_dumps:
        a = res.aligned
        seg = np.array([a.segment_ids[k] if k >= 0 else "" for k in a.segment_idx.tolist()], dtype=object)
        p = d / "aligned.csv"
        write_table(p, ["t_utc_ms", "rmssd_ms", "scr_freq_per_min", "mean_scl_us", "walking", "segment_id",
                        "gps_t_utc_ms"],
                    [a.t, a.rmssd_ms, a.scr_freq, a.eda["mean_scl_us"], a.walking, seg,
                     np.where(a.loc_idx >= 0, res.scored.t[np.maximum(a.loc_idx, 0)], -1)
                     if res.scored is not None and len(res.scored) else np.full(len(a), -1, dtype=np.int64)])
        files.append(p)
    return files
