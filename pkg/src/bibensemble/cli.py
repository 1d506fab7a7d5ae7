"""Command-line entry point: run, record, resume, metrics, inspect."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .errors import BibEnsembleError, ConfigError, CorruptManifest, StageFailed
from .judging import ratings_from_jsonl
from .pipeline import (
    BACKEND_MODES,
    CANDIDATES_FILE,
    DEDUP_LOG_FILE,
    MANIFEST_FILE,
    METRICS_FILE,
    RATINGS_FILE,
    REPORT_FILE,
    SELECTION_FILE,
    load_config,
    load_manifest,
    recompute_metrics,
    resume,
    run_pipeline,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_STAGE = 2

INSPECT_STAGES = ("manifest", "generate", "judge", "select", "refine", "metrics", "report")

log = logging.getLogger("bibensemble")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bibensemble", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute the full pipeline")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--backend", choices=BACKEND_MODES, help="override backend_mode from the config")
    run.add_argument("--replay-file", type=Path, help="replay store to read (replay) or write (record)")
    run.add_argument("--out", type=Path, help="run directory (default: output_dir from config, else runs/<run-id>)")

    record = sub.add_parser("record", help="live run that also writes a replay file")
    record.add_argument("--config", required=True, type=Path)
    record.add_argument("--replay-file", required=True, type=Path)
    record.add_argument("--out", type=Path)

    res = sub.add_parser("resume", help="continue a run from its first unfinished stage")
    res.add_argument("run_dir", type=Path)

    met = sub.add_parser("metrics", help="recompute metrics and report from persisted texts")
    met.add_argument("run_dir", type=Path)

    ins = sub.add_parser("inspect", help="pretty-print a run's artifacts")
    ins.add_argument("run_dir", type=Path)
    ins.add_argument("--stage", choices=INSPECT_STAGES, action="append", help="repeatable; default: all")
    return parser


def _run(args: argparse.Namespace, backend: str | None) -> int:
    config = load_config(args.config)
    overrides = {}
    if backend:
        overrides["backend_mode"] = backend
    if args.replay_file:
        overrides["replay_file"] = args.replay_file.resolve()
    if overrides:
        try:
            config = replace(config, **overrides)
        except BibEnsembleError as exc:
            raise ConfigError(str(exc)) from exc
    manifest = run_pipeline(config, args.out)
    print(f"run {manifest.run_id} complete")
    return EXIT_OK


def _inspect(run_dir: Path, stages: Sequence[str]) -> None:
    def section(title: str) -> None:
        print(f"== {title} ==")

    if "manifest" in stages:
        section("manifest")
        manifest = load_manifest(run_dir)
        print(f"run_id: {manifest.run_id}")
        for stage, status in manifest.stage_status.items():
            print(f"  {stage:<8} {status}")
        if manifest.error:
            print(f"error: {manifest.error}")
        for w in manifest.warnings:
            print(f"warning: {w}")
    if "generate" in stages and (run_dir / CANDIDATES_FILE).is_file():
        section("candidates")
        for line in (run_dir / CANDIDATES_FILE).read_text(encoding="utf-8").splitlines():
            c = json.loads(line)
            print(f"  {c['id']}  T={c['temperature']} k={c['top_k']} p={c['top_p']} r={c['repeat_index']}"
                  f"  {len(c['text'])} chars")
    if "judge" in stages and (run_dir / RATINGS_FILE).is_file():
        section("ratings")
        for r in ratings_from_jsonl((run_dir / RATINGS_FILE).read_text(encoding="utf-8")):
            scores = ", ".join(f"{k}={v:g}" for k, v in r.scores.items())
            print(f"  {r.candidate_id}  overall={r.overall:g}  ({scores})")
    if "select" in stages and (run_dir / SELECTION_FILE).is_file():
        section("selection")
        for sel in json.loads((run_dir / SELECTION_FILE).read_text(encoding="utf-8")):
            print(f"  {sel['strategy']}: parameter={sel['parameter']} chosen={', '.join(sel['chosen'])}")
        for t in sel["per_temperature_stats"]:
            print(f"    T={t['temperature']}: mean={t['mean_overall']} n={t['count']}")
    if "refine" in stages and (run_dir / DEDUP_LOG_FILE).is_file():
        section("dedup log")
        for strategy, removed in json.loads((run_dir / DEDUP_LOG_FILE).read_text(encoding="utf-8")).items():
            print(f"  {strategy}: {len(removed)} removed")
            for r in removed:
                print(f"    - ({r['similarity']:.2f}) {r['removed_sentence']}")
    if "metrics" in stages and (run_dir / METRICS_FILE).is_file():
        section("metrics")
        print(json.dumps(json.loads((run_dir / METRICS_FILE).read_text(encoding="utf-8"))["rows"], indent=2))
    if "report" in stages and (run_dir / REPORT_FILE).is_file():
        section("report")
        print((run_dir / REPORT_FILE).read_text(encoding="utf-8"), end="")


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _run(args, args.backend)
        if args.command == "record":
            return _run(args, "record")
        if args.command == "resume":
            manifest = resume(args.run_dir)
            print(f"run {manifest.run_id}: " + ", ".join(f"{k}={v}" for k, v in manifest.stage_status.items()))
            return EXIT_OK
        if args.command == "metrics":
            recompute_metrics(args.run_dir)
            print((args.run_dir / REPORT_FILE).read_text(encoding="utf-8"), end="")
            return EXIT_OK
        if args.command == "inspect":
            if not (args.run_dir / MANIFEST_FILE).is_file():
                raise CorruptManifest(f"no manifest in {args.run_dir}")
            _inspect(args.run_dir, args.stage or INSPECT_STAGES)
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (CorruptManifest, BibEnsembleError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
