from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ambulo import config, pipeline, synth  # noqa: E402


@pytest.fixture(scope="session")
def suite():
    return synth.fixture_suite()


@pytest.fixture(scope="session")
def composite_dir(tmp_path_factory, suite):
    spec, _ = suite["composite_3h"]
    bundle, truth = synth.generate(spec)
    out = tmp_path_factory.mktemp("composite")
    synth.write_bundle(bundle, out, truth)
    return out


@pytest.fixture(scope="session")
def composite_run(composite_dir):
    cfg = config.load(composite_dir / "config.yaml")
    return pipeline.run(cfg, jobs=1)


@pytest.fixture(scope="session")
def composite_truth(suite):
    return synth.generate(suite["composite_3h"][0])[1]


def study_bundles(n=3, seed=20):
    """Small multi-participant study: one hour of every modality plus three days of surveys."""
    bundles, truths = [], {}
    for i in range(n):
        pid = f"P{i + 1:02d}"
        rs, _ = synth.esm_schedule(pid, synth.DEFAULT_T0_MS, 3, np.random.default_rng(seed + i))
        spec = synth.ScenarioSpec(
            f"study_{pid}", seed=seed + i, duration_s=3600.0, participant_id=pid,
            ibi=synth.IbiPlan(dips=[synth.IbiDip(1500.0, 1620.0, 12.0)]),
            eda=synth.EdaPlan(impulses=synth.periodic_impulses(30.0, 3600.0, 90.0, 0.2), noise_sd=0.005),
            gps=synth.GpsPlan(walks=[synth.Walk(900.0, 2700.0, 1.2)]), esm=rs, study_days=3)
        b, t = synth.generate(spec)
        bundles.append(b)
        truths[pid] = t
    return bundles, truths


@pytest.fixture(scope="session")
def study_dir(tmp_path_factory):
    bundles, truths = study_bundles()
    out = tmp_path_factory.mktemp("study")
    synth.write_bundles(bundles, out, truths)
    return out


@pytest.fixture(scope="session")
def study_run(study_dir):
    return pipeline.run(config.load(study_dir / "config.yaml"), jobs=1)


# ---------------------------------------------------------------- acceptance reporting

_CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(n, title, ok, detail); fails the test when not ok."""

    def record(n: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d} {title}" + (f": {detail}" if detail else "")
        _CRITERIA[(n, title)] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[key])
