"""``ambulo`` command line: run, synth, validate."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from . import config as config_mod
from .errors import AmbuloError, ConfigError

log = logging.getLogger("ambulo")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


def _error(kind: str, message: str, **extra) -> None:
    payload = {"error": kind, "message": message, **extra}
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")


def _setup_logging() -> None:
    level = os.environ.get("AMBULO_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _load(args) -> config_mod.PipelineConfig:
    cfg = config_mod.load(args.config)
    return config_mod.apply_overrides(cfg, getattr(args, "step_s", None), getattr(args, "window_s", None),
                                      getattr(args, "jobs", None))


def cmd_run(args) -> int:
    from . import pipeline

    try:
        cfg = _load(args)
    except ConfigError as exc:
        _error("config", str(exc))
        return EXIT_CONFIG
    if args.participant and args.participant not in {p.id for p in cfg.participants}:
        _error("config", f"unknown participant {args.participant!r}")
        return EXIT_CONFIG
    out_dir = Path(args.out) if args.out else cfg.resolve(cfg.output_dir)
    result = pipeline.run(cfg, participant=args.participant, jobs=args.jobs)
    try:
        pipeline.write_outputs(result, out_dir)
    except AmbuloError as exc:
        _error("report", str(exc))
        return EXIT_PARTIAL
    failed = {r.participant_id: r.error for r in result.results if r.status != "ok"}
    if result.exit_code != EXIT_OK:
        _error("partial_failure", f"{len(failed)} of {len(result.results)} participants failed",
               participants=failed, errors=result.global_errors)
    return result.exit_code


def cmd_validate(args) -> int:
    """Check the config and that every input parses; write nothing."""
    from . import ingest
    from .pipeline import ingest_settings

    try:
        cfg = _load(args)
    except ConfigError as exc:
        _error("config", str(exc))
        return EXIT_CONFIG
    problems = {}
    settings = ingest_settings(cfg)
    parsers = {"ibi": ingest.parse_ibi, "eda": ingest.parse_eda, "gps": ingest.parse_gps}
    checked = []
    for p in cfg.participants:
        if args.participant and p.id != args.participant:
            continue
        for kind, fn in parsers.items():
            rel = getattr(p, kind)
            if not rel:
                continue
            try:
                _, rep = fn(cfg.resolve(rel), p.id, settings)
                checked.append({"participant": p.id, "kind": kind, **rep.to_dict()})
            except (AmbuloError, OSError, ValueError) as exc:
                problems[f"{p.id}/{kind}"] = f"{type(exc).__name__}: {exc}"
    for kind, rel, fn in (("esm", cfg.esm_file, lambda path: ingest.parse_esm(path, settings)),
                          ("walkability", cfg.walkability_file, ingest.parse_walkability)):
        if not rel:
            continue
        try:
            _, rep = fn(cfg.resolve(rel))
            checked.append({"kind": kind, **rep.to_dict()})
        except (AmbuloError, OSError, ValueError) as exc:
            problems[kind] = f"{type(exc).__name__}: {exc}"
    sys.stdout.write(json.dumps({"inputs": checked, "problems": problems}, indent=1, sort_keys=True) + "\n")
    if problems:
        _error("validation", f"{len(problems)} input(s) failed", problems=problems)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_synth(args) -> int:
    """Materialize fixtures (or a scenario file) in the ingest formats."""
    import yaml

    from . import synth

    out = Path(args.out)
    try:
        if args.spec:
            data = yaml.safe_load(Path(args.spec).read_text())
            items = data if isinstance(data, list) else [data]
            specs = [synth.ScenarioSpec.from_dict(d) for d in items]
        else:
            suite = synth.fixture_suite()
            names = args.fixture or sorted(suite)
            unknown = [n for n in names if n not in suite]
            if unknown:
                raise ConfigError(f"unknown fixture(s) {unknown}; available: {sorted(suite)}")
            specs = [suite[n][0] for n in names]
        for spec in specs:
            bundle, truth = synth.generate(spec)
            synth.write_bundle(bundle, out / spec.name, truth)
    except (ConfigError, TypeError, ValueError, OSError, yaml.YAMLError) as exc:
        _error("synth", f"{type(exc).__name__}: {exc}")
        return EXIT_CONFIG
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ambulo", description="Multimodal pedestrian well-being pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", required=True, help="pipeline YAML file")
        p.add_argument("--participant", help="process only this participant id")
        p.add_argument("--step-s", type=float, dest="step_s", help="override the rolling-window step")
        p.add_argument("--window-s", type=float, dest="window_s", help="override the rolling-window length")
        p.add_argument("--jobs", type=int, help="parallel participants (default: available cores)")

    p = sub.add_parser("run", help="run the full pipeline")
    common(p)
    p.add_argument("--out", help="output directory (default: output_dir from the config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check config and input files only")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="write synthetic fixtures")
    p.add_argument("--out", required=True, help="directory for the fixtures")
    p.add_argument("--spec", help="YAML scenario (or list of scenarios) instead of the built-in suite")
    p.add_argument("--fixture", action="append", help="built-in fixture name (repeatable)")
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
