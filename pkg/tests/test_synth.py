from __future__ import annotations

import filecmp
import json

import numpy as np
import pytest

from ambulo import config, eda, fuse, geo, hrv, ingest, pipeline, synth
from ambulo.errors import ParameterError


def test_suite_has_canonical_scenarios(suite):
    assert len(suite) >= 8
    assert {"pure_tonic", "single_scr", "scr_burst", "eda_gap_mid_walk", "dip_during_walk", "dip_outside_walk",
            "duplicate_burst_gps", "composite_3h"} <= set(suite)


def test_composite_spans_three_hours(suite):
    spec, _ = suite["composite_3h"]
    bundle, _ = synth.generate(spec)
    assert spec.duration_s == 3 * 3600
    span = (bundle.eda.t[-1] - bundle.eda.t[0]) / 1000
    assert 3 * 3600 - 1 <= span < 3 * 3600


def test_same_seed_same_bytes(tmp_path, suite):
    spec, _ = suite["composite_3h"]
    for name in ("a", "b"):
        b, t = synth.generate(spec)
        synth.write_bundle(b, tmp_path / name, t)
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert cmp.left_list == cmp.right_list and not cmp.diff_files
    assert all(filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False) for f in cmp.common_files)


def test_different_seed_different_data(suite):
    spec, _ = suite["composite_3h"]
    other = synth.ScenarioSpec.from_dict({**spec.to_dict(), "seed": spec.seed + 1})
    assert not np.array_equal(synth.generate(spec)[0].eda.sc_us, synth.generate(other)[0].eda.sc_us)


def test_spec_dict_round_trip(suite):
    for spec, _ in suite.values():
        again = synth.ScenarioSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
        assert again == spec


def test_zero_impulses_zero_noise_is_tonic():
    plan = synth.EdaPlan(tonic_knots=[(0, 2.0), (300, 2.4), (600, 2.1)])
    s, events, gaps = synth.generate_eda(plan, 600.0, 0, "P", np.random.default_rng(0))
    from scipy.interpolate import PchipInterpolator

    knots = np.array(plan.tonic_knots, float)
    tonic = PchipInterpolator(knots[:, 0], knots[:, 1])(s.t / 1000.0)
    assert np.array_equal(s.sc_us, tonic)
    assert events == [] and gaps == []


def test_eda_is_tonic_plus_convolved_impulses():
    plan = synth.EdaPlan(tonic_knots=[(0, 1.0)], impulses=[synth.Impulse(100.0, 0.4), synth.Impulse(250.0, 0.2)])
    s, events, _ = synth.generate_eda(plan, 400.0, 0, "P", np.random.default_rng(0))
    params = eda.IrfParams(plan.tau1_s, plan.tau2_s)
    phasic = s.sc_us - 1.0
    for peak_ms, amp in events:
        k = int(np.searchsorted(s.t, peak_ms))
        assert phasic[k] == pytest.approx(amp, rel=1e-6)
    assert len(events) == 2
    # the response shape is the Bateman curve scaled to the requested peak
    k0 = int(np.searchsorted(s.t, 100_000))
    tt = np.arange(0, 40, 0.25)
    shape = eda.bateman(tt, params)
    seg = phasic[k0:k0 + tt.size]
    assert np.allclose(seg / seg.max(), shape / shape.max(), atol=1e-3)


def test_three_impulses_three_events():
    plan = synth.EdaPlan(impulses=[synth.Impulse(t, 0.2) for t in (50.0, 150.0, 250.0)], noise_sd=0.01)
    _, events, _ = synth.generate_eda(plan, 300.0, 0, "P", np.random.default_rng(1))
    assert len(events) == 3


def test_gap_declared(suite):
    spec, truth = suite["eda_gap_mid_walk"]
    bundle, _ = synth.generate(spec)
    assert len(bundle.eda.gaps) == 1 and len(truth.eda_gaps) == 1
    (a, b), (ta, tb) = bundle.eda.gaps[0], truth.eda_gaps[0]
    assert a <= ta and b == tb
    inside = (bundle.eda.t >= ta) & (bundle.eda.t < tb)
    assert not inside.any()


def test_gap_survives_file_round_trip(tmp_path, suite):
    bundle, truth = synth.generate(suite["eda_gap_mid_walk"][0])
    synth.write_bundle(bundle, tmp_path, truth)
    cfg = config.load(tmp_path / "config.yaml")
    entry = cfg.participants[0]
    series, _ = ingest.parse_eda(cfg.resolve(entry.eda), entry.id)
    assert len(series.gaps) == 1
    assert series.gaps[0][1] == truth.eda_gaps[0][1]


@pytest.mark.parametrize("target", [8.0, 15.0, 25.0])
def test_dip_targets_within_15_percent(target):
    plan = synth.IbiPlan(dips=[synth.IbiDip(1200.0, 1500.0, target)])
    s = synth.generate_ibi(plan, 2400.0, 0, "P", np.random.default_rng(int(target)))
    r = hrv.rolling_rmssd(s)
    sel = (r.t >= 1_200_000) & (r.t <= 1_500_000)
    assert np.all(np.abs(r.rmssd_ms[sel] / target - 1) <= 0.15)
    # beats feeding windows that end inside the dip start W seconds earlier
    base = (r.t >= 600_000) & (r.t <= 900_000)
    assert np.all(np.abs(r.rmssd_ms[base] / plan.rmssd_ms - 1) <= 0.15)


def test_gps_speeds_realized():
    plan = synth.GpsPlan(walks=[synth.Walk(600.0, 2400.0, 1.37)], drives=[synth.Walk(3000.0, 3600.0, 8.0)],
                         record_speed=False)
    track, _ = synth.generate_gps(plan, 4200.0, 0, "P", np.random.default_rng(0))
    d = geo.derive_speed(track)
    ts = (d.t / 1000.0)
    for w in plan.walks + plan.drives:
        # speed[i] is realized between fix i-1 and fix i
        sel = (ts > w.start_s) & (ts <= w.end_s)
        assert sel.any()
        assert np.all(np.abs(d.speed_mps[sel] / w.speed_mps - 1) <= 0.05)


def test_duplicate_bursts_injected(suite):
    spec, _ = suite["duplicate_burst_gps"]
    bundle, _ = synth.generate(spec)
    injected = sum(c for _, c in spec.gps.duplicate_bursts)
    assert len(bundle.gps) == int(spec.duration_s // spec.gps.interval_s) + injected
    assert len(geo.dedup(bundle.gps)) == len(bundle.gps) - injected


def test_invalid_spec_rejected():
    spec = synth.ScenarioSpec("bad", duration_s=100.0, ibi=synth.IbiPlan(dips=[synth.IbiDip(50.0, 150.0, 10.0)]))
    with pytest.raises(ParameterError):
        synth.generate(spec)
    spec = synth.ScenarioSpec("bad", duration_s=100.0, eda=synth.EdaPlan(impulses=[synth.Impulse(10.0, -1.0)]))
    with pytest.raises(ParameterError):
        synth.generate(spec)


def test_report_truth_matches_texts():
    rs, cats = synth.esm_schedule("P", 0, 10, np.random.default_rng(2))
    spec = synth.ScenarioSpec("esm_only", duration_s=10 * 86400.0, esm=rs, study_days=10)
    _, truth = synth.generate(spec)
    assert truth.report_categories == cats
    assert {c for _, c in synth.INFRA_TEXTS} == {"sidewalk", "crosswalk", "other", "uneven_surface",
                                                 "trash_debris", None}


# ---------------------------------------------------------------- oracle closure


def _run_fixture(tmp_path, suite, name):
    bundle, truth = synth.generate(suite[name][0])
    synth.write_bundle(bundle, tmp_path, truth)
    run = pipeline.run(config.load(tmp_path / "config.yaml"), jobs=1)
    assert run.exit_code == 0
    return run.results[0], truth


@pytest.mark.parametrize("name", ["eda_gap_mid_walk", "dip_during_walk", "dip_outside_walk",
                                  "duplicate_burst_gps", "composite_3h"])
def test_pipeline_recovers_walking_exactly(tmp_path, suite, name):
    res, truth = _run_fixture(tmp_path, suite, name)
    assert [(s.start, s.end) for s in res.segments] == truth.walking


@pytest.mark.parametrize("name", ["single_scr", "scr_burst", "eda_gap_mid_walk", "composite_3h"])
def test_pipeline_recovers_scr_events(tmp_path, suite, name):
    res, truth = _run_fixture(tmp_path, suite, name)
    ev = res.decomposition.events.only_significant()
    assert len(ev.peak) == len(truth.scr_events)
    true_peaks = np.sort([p for p, _ in truth.scr_events])
    assert np.all(np.abs(np.sort(ev.peak) - true_peaks) <= 500)


def test_pipeline_dip_during_walk_found(tmp_path, suite):
    res, truth = _run_fixture(tmp_path, suite, "dip_during_walk")
    eps = [e for e in res.episodes if e.kind == fuse.PARASYMPATHETIC]
    assert len(eps) == 1
    (ts, te), = truth.low_rmssd
    assert ts <= eps[0].start < eps[0].end <= te


def test_pipeline_dip_outside_walk_ignored(tmp_path, suite):
    res, _ = _run_fixture(tmp_path, suite, "dip_outside_walk")
    assert [e for e in res.episodes if e.kind == fuse.PARASYMPATHETIC] == []
