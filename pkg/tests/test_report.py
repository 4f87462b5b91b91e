from __future__ import annotations

import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

import oracles
from ambulo import esm, hrv, pipeline, report
from ambulo.errors import AmbuloError, CoverageError

HOUR = 3_600_000


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_fmt_six_significant_digits():
    assert report.fmt(1 / 3) == "0.333333"
    assert report.fmt(123456789.0) == "1.23457e+08"
    assert report.fmt(float("nan")) == "" and report.fmt(None) == ""
    assert report.fmt(-0.0) == "0" and report.fmt(7) == "7" and report.fmt(True) == "true"


def test_write_table_formats(tmp_path):
    p = tmp_path / "t.csv"
    report.write_table(p, ["a", "b", "c"], [np.array([1, 2]), np.array([0.5, np.nan]), np.array([True, False])])
    assert p.read_text() == "a,b,c\n1,0.5,1\n2,,0\n"


# ---------------------------------------------------------------- composite panels


@pytest.fixture(scope="module")
def composite_panels(composite_run, tmp_path_factory):
    res = composite_run.results[0]
    t0 = int(res.aligned.t[0])
    out = tmp_path_factory.mktemp("panels")
    paths = report.composite_export(res, t0, t0 + 3 * HOUR, out)
    return res, out, paths


def test_five_panel_files(composite_panels):
    _, out, paths = composite_panels
    assert sorted(p.name for p in paths) == sorted(f"{n}.csv" for n in report.PANELS)
    assert len(paths) == 5


def test_threshold_column_matches_percentile(composite_panels):
    res, out, _ = composite_panels
    rows = _read_csv(out / "rmssd.csv")
    a = res.aligned
    vals = a.rmssd_ms[~np.isnan(a.rmssd_ms)]
    expected = oracles.percentile_linear(vals.tolist(), 5)
    (day,) = res.rmssd_flags.thresholds
    assert res.rmssd_flags.thresholds[day] == pytest.approx(expected, rel=1e-12)
    assert {r["threshold"] for r in rows} == {report.fmt(expected)}
    rows = _read_csv(out / "scr_freq.csv")
    vals = a.scr_freq[~np.isnan(a.scr_freq)]
    assert {r["threshold"] for r in rows} == {report.fmt(oracles.percentile_linear(vals.tolist(), 95))}


def test_walking_mask_matches_segments(composite_panels):
    res, out, _ = composite_panels
    rows = _read_csv(out / "walking.csv")
    assert len(rows) == 3 * 3600
    for r in rows:
        t = int(r["t_utc_ms"])
        hit = [s for s in res.segments if s.start <= t <= s.end]
        assert (r["walking"] == "1") == bool(hit)
        assert r["segment_id"] == (hit[0].segment_id if hit else "")


def test_events_panel_lists_episodes(composite_panels):
    res, out, _ = composite_panels
    rows = _read_csv(out / "events.csv")
    kinds = [r["kind"] for r in rows]
    assert kinds.count("parasympathetic_low_rmssd") == 1 and kinds.count("sympathetic_high_scr") == 1
    assert kinds.count("scr_significant") == res.decomposition.events.n_significant
    starts = [int(r["start_ms"]) for r in rows]
    assert starts == sorted(starts)


def test_window_outside_coverage(composite_run, tmp_path):
    res = composite_run.results[0]
    t0 = int(res.aligned.t[0])
    with pytest.raises(CoverageError):
        report.composite_export(res, t0 - HOUR, t0 + HOUR, tmp_path)
    with pytest.raises(CoverageError):
        report.composite_export(res, t0 + HOUR, t0 + HOUR, tmp_path)


# ---------------------------------------------------------------- study report


@pytest.fixture(scope="module")
def study_tree(study_run, tmp_path_factory):
    out = tmp_path_factory.mktemp("study_out")
    pipeline.write_outputs(study_run, out)
    return out


@pytest.fixture(scope="module")
def composite_tree(composite_run, tmp_path_factory):
    out = tmp_path_factory.mktemp("composite_out")
    pipeline.write_outputs(composite_run, out)
    return out


def test_single_participant_block(composite_tree):
    summary = json.loads((composite_tree / "report" / "summary.json").read_text())
    assert list(summary["participants"]) == ["P01"]
    assert summary["n_ok"] == 1 and summary["n_failed"] == 0
    assert summary["participants"]["P01"]["episodes"] == {"parasympathetic_low_rmssd": 1, "sympathetic_high_scr": 1}


def test_boxplot_stats_equal_distribution_summary(study_run, study_tree):
    summary = json.loads((study_tree / "report" / "summary.json").read_text())
    for res in study_run.results:
        expected = hrv.summarize_distribution(res.rmssd).as_dict()
        got = summary["participants"][res.participant_id]["rmssd"]["summary"]
        for key in ("n", "minimum", "q1", "median", "q3", "maximum", "iqr", "mean"):
            assert got[key] == report.round_sig(expected[key])
        assert got["kde_x"] == [report.round_sig(v) for v in expected["kde_x"]]


def test_category_histogram_partition(study_run, study_tree):
    summary = json.loads((study_tree / "report" / "summary.json").read_text())["surveys"]
    counts = summary["category_counts"]
    assert set(counts) == set(esm.CATEGORIES)
    assert sum(counts.values()) == summary["n_non_neutral"]
    assert summary["n_non_neutral"] == sum(r.category is not None for r in study_run.reports)


def test_esm_boxplots_match_module(study_run, study_tree):
    summary = json.loads((study_tree / "report" / "summary.json").read_text())
    for pid, answers in study_run.esm_dataset.items():
        vals = [r.stress for r in answers if r.stress is not None]
        med = float(np.median(vals))
        assert summary["participants"][pid]["esm"]["stress"]["median"] == med


def test_report_tree_layout(study_tree):
    root = study_tree / "report"
    for name in ("summary.json", "episodes.csv", "map.geojson"):
        assert (root / name).is_file()
    svgs = sorted((root / "charts").glob("*.svg"))
    assert {"rmssd_boxplot.svg", "rmssd_kde.svg", "problem_categories.svg", "top_words.svg"} <= {p.name for p in svgs}
    for p in svgs:
        assert ET.parse(p).getroot().tag.endswith("svg")
    for pid in ("P01", "P02", "P03"):
        assert len(list((root / "composite" / pid).glob("*.csv"))) == 5


def test_map_layer_points(study_run, study_tree):
    fc = json.loads((study_tree / "report" / "map.geojson").read_text())
    assert fc["type"] == "FeatureCollection"
    assert len(fc["features"]) == sum(len(r.scored) for r in study_run.results)
    walking = [f for f in fc["features"] if f["properties"]["segment_id"]]
    assert walking and all(f["properties"]["z_rmssd"] is not None for f in walking)


def test_episode_table_rows(study_run, study_tree):
    rows = _read_csv(study_tree / "report" / "episodes.csv")
    assert len(rows) == sum(len(r.episodes) for r in study_run.results)


def test_write_outputs_deterministic(study_run, study_tree, tmp_path):
    pipeline.write_outputs(study_run, tmp_path)
    a = sorted(p.relative_to(study_tree) for p in study_tree.rglob("*") if p.is_file())
    b = sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*") if p.is_file())
    assert a == b
    for rel in a:
        assert (study_tree / rel).read_bytes() == (tmp_path / rel).read_bytes(), rel


def test_empty_run_refused(study_run, tmp_path):
    empty = pipeline.RunResult(study_run.config)
    with pytest.raises(AmbuloError):
        report.build_report(empty, tmp_path)
