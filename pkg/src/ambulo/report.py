"""Study report: JSON summary, CSV tables, GeoJSON map layer, SVG charts, composite panels.

Everything written here is byte-deterministic for fixed inputs: rows are
sorted, floats are printed with six significant digits and no wall-clock
information is recorded.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional
from xml.sax.saxutils import escape

import numpy as np

from . import stats
from .errors import AmbuloError, CoverageError
from .fuse import EPISODE_HEADER, daily_threshold_column, episode_rows
from .geo import scored_points_geojson
from .timeutil import day_to_date

SIG_DIGITS = 6


def fmt(x) -> str:
    """Six significant digits; NaN/None become an empty field."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    v = float(x)
    if math.isnan(v):
        return ""
    if v == 0.0:
        return "0"
    return f"{v:.{SIG_DIGITS}g}"


def round_sig(x):
    """Float rounded to six significant digits (for JSON), None for NaN."""
    if x is None:
        return None
    v = float(x)
    if math.isnan(v) or math.isinf(v):
        return None
    return float(f"{v:.{SIG_DIGITS}g}")


def _clean(obj):
    """Recursively round floats and convert numpy scalars for JSON output."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return round_sig(obj)
    return obj


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n")


def _col_strings(col: np.ndarray) -> list[str]:
    col = np.asarray(col)
    if col.dtype.kind in "iu":
        return [str(v) for v in col.tolist()]
    if col.dtype.kind == "b":
        return ["1" if v else "0" for v in col.tolist()]
    if col.dtype.kind == "f":
        spec = f"%.{SIG_DIGITS}g"
        # NaN -> empty field; signed zero prints as "0"
        return ["" if v != v else ("0" if v == 0.0 else spec % v) for v in col.tolist()]
    return ["" if v is None else str(v) for v in col.tolist()]


def write_table(path, header: list[str], columns) -> None:
    """CSV with formatted columns; cheap enough for multi-million-row dumps."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [_col_strings(c) for c in columns]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        if cols and len(cols[0]):
            fh.writelines(",".join(row) + "\n" for row in zip(*cols))


# ------------------------------------------------------------------ SVG charts


_W, _H, _PAD = 640, 360, 48


def _svg(body: list[str], title: str, w: int = _W, h: int = _H) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" '
            f'font-family="sans-serif" font-size="11">')
    return "\n".join([head, f'<title>{escape(title)}</title>',
                      f'<rect width="{w}" height="{h}" fill="white"/>',
                      f'<text x="{w / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
                      *body, "</svg>"]) + "\n"


def _scale(lo: float, hi: float, a: float, b: float):
    span = hi - lo if hi > lo else 1.0
    return lambda v: a + (v - lo) / span * (b - a)


def _axis_labels(lo: float, hi: float, y_of, x: float) -> list[str]:
    out = []
    for v in np.linspace(lo, hi, 5):
        y = y_of(v)
        out.append(f'<line x1="{x - 4:.1f}" y1="{y:.1f}" x2="{x:.1f}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{x - 6:.1f}" y="{y + 4:.1f}" text-anchor="end">{fmt(round_sig(v))}</text>')
    return out


def boxplot_svg(title: str, groups: list[tuple[str, stats.DistributionSummary]]) -> str:
    """One box (quartiles, median line, min/max whiskers) per group."""
    body = []
    if not groups:
        return _svg(['<text x="50%" y="50%" text-anchor="middle">no data</text>'], title)
    lo = min(s.minimum for _, s in groups)
    hi = max(s.maximum for _, s in groups)
    if hi <= lo:
        lo, hi = lo - 1.0, hi + 1.0
    y = _scale(lo, hi, _H - _PAD, _PAD)
    body.append(f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>')
    body.extend(_axis_labels(lo, hi, y, _PAD))
    slot = (_W - 2 * _PAD) / len(groups)
    for i, (name, s) in enumerate(groups):
        cx = _PAD + slot * (i + 0.5)
        bw = min(40.0, slot * 0.6)
        body.append(f'<line x1="{cx:.1f}" y1="{y(s.minimum):.1f}" x2="{cx:.1f}" y2="{y(s.maximum):.1f}" stroke="black"/>')
        body.append(f'<rect x="{cx - bw / 2:.1f}" y="{y(s.q3):.1f}" width="{bw:.1f}" '
                    f'height="{max(y(s.q1) - y(s.q3), 0.5):.1f}" fill="#9ecae1" stroke="black"/>')
        body.append(f'<line x1="{cx - bw / 2:.1f}" y1="{y(s.median):.1f}" x2="{cx + bw / 2:.1f}" '
                    f'y2="{y(s.median):.1f}" stroke="black" stroke-width="2"/>')
        body.append(f'<text x="{cx:.1f}" y="{_H - _PAD + 16}" text-anchor="middle">{escape(name)}</text>')
    return _svg(body, title)


def kde_svg(title: str, curves: list[tuple[str, np.ndarray, np.ndarray]]) -> str:
    palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
    body = []
    curves = [c for c in curves if c[1] is not None]
    if not curves:
        return _svg(['<text x="50%" y="50%" text-anchor="middle">no data</text>'], title)
    xlo = min(float(c[1][0]) for c in curves)
    xhi = max(float(c[1][-1]) for c in curves)
    yhi = max(float(c[2].max()) for c in curves)
    x = _scale(xlo, xhi, _PAD, _W - _PAD)
    y = _scale(0.0, yhi, _H - _PAD, _PAD)
    body.append(f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>')
    for i, (name, gx, gy) in enumerate(curves):
        pts = " ".join(f"{x(a):.1f},{y(b):.1f}" for a, b in zip(gx.tolist(), gy.tolist()))
        color = palette[i % len(palette)]
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}"/>')
        body.append(f'<text x="{_W - _PAD}" y="{_PAD + 14 * i}" text-anchor="end" fill="{color}">{escape(name)}</text>')
    for v in np.linspace(xlo, xhi, 5):
        body.append(f'<text x="{x(v):.1f}" y="{_H - _PAD + 16}" text-anchor="middle">{fmt(round_sig(v))}</text>')
    return _svg(body, title)


def bar_svg(title: str, items: list[tuple[str, float]], horizontal: bool = False) -> str:
    body = []
    if not items:
        return _svg(['<text x="50%" y="50%" text-anchor="middle">no data</text>'], title)
    vmax = max(v for _, v in items) or 1.0
    if horizontal:
        h = max(_H, _PAD * 2 + 18 * len(items))
        x = _scale(0.0, vmax, 140, _W - _PAD)
        for i, (name, v) in enumerate(items):
            yy = _PAD + 18 * i
            body.append(f'<rect x="140" y="{yy}" width="{max(x(v) - 140, 0.5):.1f}" height="14" fill="#6baed6"/>')
            body.append(f'<text x="134" y="{yy + 11}" text-anchor="end">{escape(name)}</text>')
            body.append(f'<text x="{x(v) + 4:.1f}" y="{yy + 11}">{fmt(v)}</text>')
        return _svg(body, title, h=h)
    slot = (_W - 2 * _PAD) / len(items)
    y = _scale(0.0, vmax, _H - _PAD, _PAD)
    for i, (name, v) in enumerate(items):
        x0 = _PAD + slot * i + slot * 0.15
        body.append(f'<rect x="{x0:.1f}" y="{y(v):.1f}" width="{slot * 0.7:.1f}" '
                    f'height="{max(_H - _PAD - y(v), 0.0):.1f}" fill="#6baed6"/>')
        body.append(f'<text x="{x0 + slot * 0.35:.1f}" y="{_H - _PAD + 16}" text-anchor="middle">{escape(name)}</text>')
        body.append(f'<text x="{x0 + slot * 0.35:.1f}" y="{y(v) - 4:.1f}" text-anchor="middle">{fmt(v)}</text>')
    return _svg(body, title)


# ------------------------------------------------------------------ composite panels


PANELS = ("rmssd", "walking", "eda", "scr_freq", "events")


def composite_export(result, start_ms: int, end_ms: int, out_dir) -> list[Path]:
    """Aligned CSVs for one participant over [start_ms, end_ms)."""
    aligned = result.aligned
    if aligned is None or len(aligned) == 0:
        raise CoverageError(f"{result.participant_id}: no aligned data")
    if start_ms >= end_ms or start_ms < int(aligned.t[0]) or end_ms > int(aligned.t[-1]) + aligned.step_ms:
        raise CoverageError(f"{result.participant_id}: window [{start_ms}, {end_ms}) outside coverage "
                            f"[{int(aligned.t[0])}, {int(aligned.t[-1]) + aligned.step_ms})")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    a = np.searchsorted(aligned.t, start_ms, side="left")
    b = np.searchsorted(aligned.t, end_ms, side="left")
    t = aligned.t[a:b]
    tz = result.tz_offset_min
    paths = []

    def thr(flags):
        return daily_threshold_column(t, tz, flags.thresholds if flags is not None else {})

    p = out / "rmssd.csv"
    write_table(p, ["t_utc_ms", "rmssd_ms", "threshold"], [t, aligned.rmssd_ms[a:b], thr(result.rmssd_flags)])
    paths.append(p)
    seg = aligned.segment_idx[a:b]
    seg_ids = np.array([aligned.segment_ids[k] if k >= 0 else "" for k in seg.tolist()], dtype=object)
    p = out / "walking.csv"
    write_table(p, ["t_utc_ms", "walking", "segment_id"], [t, aligned.walking[a:b], seg_ids])
    paths.append(p)
    p = out / "eda.csv"
    dec = result.decomposition
    if dec is not None:
        ea = np.searchsorted(dec.t, start_ms, side="left")
        eb = np.searchsorted(dec.t, end_ms, side="left")
        write_table(p, ["t_utc_ms", "sc_us", "tonic_us", "phasic_us", "driver_us_per_s"],
                    [dec.t[ea:eb], dec.y[ea:eb], dec.tonic[ea:eb], dec.phasic_sc[ea:eb], dec.driver[ea:eb]])
    else:
        write_table(p, ["t_utc_ms", "sc_us", "tonic_us", "phasic_us", "driver_us_per_s"], [])
    paths.append(p)
    p = out / "scr_freq.csv"
    write_table(p, ["t_utc_ms", "scr_freq_per_min", "threshold"], [t, aligned.scr_freq[a:b], thr(result.scr_flags)])
    paths.append(p)
    rows = []
    if dec is not None:
        for ev in dec.events:
            if start_ms <= ev.peak < end_ms:
                rows.append((ev.onset, ev.peak, "scr_significant" if ev.significant else "scr", ev.amplitude_us))
    for ep in result.episodes:
        if ep.start < end_ms and ep.end > start_ms:
            rows.append((ep.start, ep.end, ep.kind, ep.extremum))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    p = out / "events.csv"
    cols = list(zip(*rows)) if rows else [[], [], [], []]
    write_table(p, ["start_ms", "end_ms", "kind", "value"],
                [np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.int64),
                 np.array(cols[2], dtype=object), np.array(cols[3], dtype=float)])
    paths.append(p)
    return paths


def default_composite_window(result, hours: float = 3.0) -> Optional[tuple[int, int]]:
    """A window of ``hours`` around the first episode, else at the start of coverage."""
    aligned = result.aligned
    if aligned is None or len(aligned) == 0:
        return None
    span = int(round(hours * 3_600_000))
    lo, hi = int(aligned.t[0]), int(aligned.t[-1]) + aligned.step_ms
    if result.episodes:
        first = min(e.start for e in result.episodes)
        start = first - span // 3
    else:
        start = lo
    start = max(lo, min(start, hi - span))
    return start, min(hi, start + span)


# ------------------------------------------------------------------ study report


@dataclass
class StudyReport:
    summary: dict
    files: list = field(default_factory=list)


ESM_VARIABLES = ("stress", "valence", "arousal", "sleep_quality")


def _participant_block(res, dataset, rates, problem_days, cfg) -> dict:
    block: dict = {"status": res.status, "tz_offset_min": res.tz_offset_min, "warnings": list(res.warnings),
                   "inputs": res.reports}
    if res.error is not None:
        block["error"] = res.error
    if res.rmssd is not None and len(res.rmssd):
        summ = res.rmssd_summary
        block["rmssd"] = {"n_points": len(res.rmssd), "summary": summ.as_dict() if summ else None,
                          "standardize": {"scope": cfg.hrv.standardize_scope, "mean": res.z.mean, "sd": res.z.sd,
                                          "zero_variance": res.z.zero_variance}}
    if res.baseline is not None:
        base = {d.isoformat(): v for d, v in sorted(res.baseline.baselines.items())}
        entry = {"sleep_window": list(res.baseline.sleep_window), "daily": base}
        if base:
            entry["summary"] = stats.five_number(list(base.values()), with_kde=False).as_dict()
        block["baseline_rmssd"] = entry
    if res.decomposition is not None:
        dec = res.decomposition
        block["eda"] = {"irf": {"tau1_s": res.irf.tau1_s, "tau2_s": res.irf.tau2_s, "objective": res.irf_objective},
                        "residual_rms": dec.residual_rms, "noise_sd": dec.noise_sd,
                        "n_events": len(dec.events), "n_significant": dec.events.n_significant,
                        "n_feature_windows": len(res.features) if res.features is not None else 0}
    if res.segments is not None:
        block["walking"] = {"n_segments": len(res.segments),
                            "total_s": sum(s.duration_s for s in res.segments),
                            "n_points": len(res.track) if res.track is not None else 0}
    block["episodes"] = {
        "parasympathetic_low_rmssd": sum(e.kind == "parasympathetic_low_rmssd" for e in res.episodes),
        "sympathetic_high_scr": sum(e.kind == "sympathetic_high_scr" for e in res.episodes),
    }
    for key, flags in (("rmssd_thresholds", res.rmssd_flags), ("scr_thresholds", res.scr_flags)):
        if flags is not None:
            block[key] = {day_to_date(d).isoformat(): v for d, v in sorted(flags.thresholds.items())}
    answers = dataset.get(res.participant_id, []) if dataset else []
    esm_stats = {}
    for var in ESM_VARIABLES:
        vals = [getattr(r, var) for r in answers if getattr(r, var) is not None]
        if vals:
            esm_stats[var] = stats.five_number(vals, with_kde=False).as_dict()
    if esm_stats:
        block["esm"] = esm_stats
    if rates:
        block["response_rates"] = {r.survey_type: {"answered": r.answered, "expected": r.expected, "rate": r.rate}
                                   for r in rates if r.participant_id == res.participant_id}
    if problem_days is not None:
        block["problem_days"] = problem_days.get(res.participant_id, 0)
    return block


def build_report(run, out_dir) -> StudyReport:
    """Assemble the report tree from a finished pipeline run."""
    from . import esm as esm_mod
    from .geo import dump_geojson

    results = [r for r in run.results if r.status == "ok"]
    if not run.results:
        raise AmbuloError("nothing to report: no participants")
    cfg = run.config
    root = Path(out_dir) / "report"
    charts = root / "charts"
    charts.mkdir(parents=True, exist_ok=True)
    files = []

    summary: dict = {"participants": {}, "n_participants": len(run.results),
                     "n_ok": len(results), "n_failed": len(run.results) - len(results)}
    for res in run.results:
        summary["participants"][res.participant_id] = _participant_block(
            res, run.esm_dataset, run.rates, run.problem_days, cfg)
    if run.reports is not None:
        counts = esm_mod.category_counts(run.reports)
        summary["surveys"] = {
            "category_counts": counts,
            "n_non_neutral": sum(r.category is not None for r in run.reports),
            "n_neutral": sum(r.category is None for r in run.reports),
            "top_words": [[w, n] for w, n in run.word_freq],
            "excluded_empty_payload": {f"{p}/{t}": n for (p, t), n in sorted(run.excluded.items())},
        }
    if run.global_warnings:
        summary["warnings"] = list(run.global_warnings)

    path = root / "summary.json"
    dump_json(summary, path)
    files.append(path)

    episodes = sorted((e for r in results for e in r.episodes),
                      key=lambda e: (e.participant_id, e.start, e.kind))
    path = root / "episodes.csv"
    path.write_text("\n".join([EPISODE_HEADER, *episode_rows(episodes, fmt)]) + "\n")
    files.append(path)

    feats = []
    for r in results:
        if r.scored is not None:
            feats.extend(scored_points_geojson(r.scored, r.participant_id, fmt))
    path = root / "map.geojson"
    dump_geojson(feats, path)
    files.append(path)

    # charts
    groups = [(r.participant_id, r.rmssd_summary) for r in results if r.rmssd_summary is not None]
    files.append(_write(charts / "rmssd_boxplot.svg", boxplot_svg("RMSSD (ms) per participant", groups)))
    files.append(_write(charts / "rmssd_kde.svg", kde_svg(
        "RMSSD density per participant", [(n, s.kde_x, s.kde_y) for n, s in groups])))
    base_groups = []
    for r in results:
        if r.baseline is not None and r.baseline.baselines:
            base_groups.append((r.participant_id, stats.five_number(list(r.baseline.baselines.values()),
                                                                     with_kde=False)))
    files.append(_write(charts / "baseline_rmssd_boxplot.svg", boxplot_svg("Sleep baseline RMSSD (ms)", base_groups)))
    if run.esm_dataset:
        for var in ESM_VARIABLES:
            g = []
            for pid in sorted(run.esm_dataset):
                vals = [getattr(x, var) for x in run.esm_dataset[pid] if getattr(x, var) is not None]
                if vals:
                    g.append((pid, stats.five_number(vals, with_kde=False)))
            files.append(_write(charts / f"esm_{var}_boxplot.svg", boxplot_svg(f"Self-reported {var}", g)))
    if run.reports is not None:
        counts = esm_mod.category_counts(run.reports)
        files.append(_write(charts / "problem_categories.svg",
                            bar_svg("Infrastructure problem categories", list(counts.items()))))
        files.append(_write(charts / "top_words.svg",
                            bar_svg("Most frequent words", [(w, float(n)) for w, n in run.word_freq], True)))
        if run.problem_days:
            files.append(_write(charts / "problem_days.svg", bar_svg(
                "Days with a reported problem", [(k, float(v)) for k, v in sorted(run.problem_days.items())])))

    # composites
    requested = {w["participant"]: (int(w["start_ms"]), int(w["end_ms"])) for w in cfg.report.composite_windows}
    for r in results:
        window = requested.get(r.participant_id) or default_composite_window(r, cfg.report.composite_hours)
        if window is None:
            continue
        files.extend(composite_export(r, window[0], window[1], root / "composite" / r.participant_id))
    return StudyReport(summary, files)


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path
