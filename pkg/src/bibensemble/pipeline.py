"""Run configuration, stage orchestration, run directory persistence and resume."""

from __future__ import annotations

import hashlib
import json
import logging
import secrets
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping

import httpx

from .errors import BibEnsembleError, ConfigError, CorruptManifest, StageFailed
from .generation import (
    DEFAULT_GRID,
    BibliographyTask,
    GenerationConfig,
    SweepGrid,
    candidates_from_jsonl,
    candidates_to_jsonl,
    generate_candidates,
)
from .judging import DEFAULT_RUBRIC, JudgeRubric, judge_candidates, ratings_from_jsonl, ratings_to_jsonl
from .metrics import (
    BASELINE_LABEL,
    MEAN_INDIVIDUAL_LABEL,
    TOP_M_LABEL,
    TOP_TEMPERATURE_LABEL,
    ComparisonTable,
    Delta,
    Direction,
    MetricsReport,
    build_comparison,
    mean_report,
    render_comparison,
)
from .provider import HTTPBackend, Provider, ProviderProfile, ReplayBackend, ReplayStore, ResponseCache, atomic_write_text
from .refinement import DEFAULT_THRESHOLD, annotation_body, refine
from .selection import DEFAULT_M, SelectionResult, Strategy, select_all

log = logging.getLogger(__name__)

STAGES = ("generate", "judge", "select", "refine", "metrics", "report")
BACKEND_MODES = ("live", "replay", "record")
MAX_PARALLELISM = 32
DEFAULT_MAX_TOKENS = {"generation": 1024, "judging": 256, "summarization": 1024}
DEFAULT_SUMMARIZER_TEMPERATURE = 0.3

CONFIG_FILE = "config.json"
CANDIDATES_FILE = "candidates.jsonl"
RATINGS_FILE = "ratings.jsonl"
SELECTION_FILE = "selection.json"
REFINED_FILES = {
    Strategy.TOP_M: "refined_top_m.txt",
    Strategy.TOP_TEMPERATURE: "refined_top_temperature.txt",
}
DEDUP_LOG_FILE = "dedup_log.json"
METRICS_FILE = "metrics.json"
REPORT_FILE = "report.txt"
MANIFEST_FILE = "manifest.json"

STAGE_ARTIFACTS = {
    "generate": [CANDIDATES_FILE],
    "judge": [RATINGS_FILE],
    "select": [SELECTION_FILE],
    "refine": [REFINED_FILES[Strategy.TOP_M], REFINED_FILES[Strategy.TOP_TEMPERATURE], DEDUP_LOG_FILE],
    "metrics": [METRICS_FILE],
    "report": [REPORT_FILE],
}

_STRATEGY_LABELS = {Strategy.TOP_M: TOP_M_LABEL, Strategy.TOP_TEMPERATURE: TOP_TEMPERATURE_LABEL}


# -- configuration -----------------------------------------------------------


@dataclass
class RunConfig:
    task: BibliographyTask
    profiles: dict[str, ProviderProfile]
    generator: str
    judge: str
    summarizer: str
    grid: SweepGrid = DEFAULT_GRID
    rubric: JudgeRubric = DEFAULT_RUBRIC
    m: int = DEFAULT_M
    similarity_threshold: float = DEFAULT_THRESHOLD
    parallelism: int = 4
    cache_dir: Path | None = None
    output_dir: Path | None = None
    backend_mode: str = "live"
    replay_file: Path | None = None
    max_tokens: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_MAX_TOKENS))
    summarizer_temperature: float = DEFAULT_SUMMARIZER_TEMPERATURE

    def __post_init__(self) -> None:
        for role in ("generator", "judge", "summarizer"):
            ref = getattr(self, role)
            if not ref:
                raise ConfigError(f"{role}: missing profile reference")
            if ref not in self.profiles:
                raise ConfigError(f"{role}: profile {ref!r} is not defined under 'profiles'")
        if self.m < 1:
            raise ConfigError("m must be at least 1")
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ConfigError("similarity_threshold must be in (0, 1]")
        if not 1 <= self.parallelism <= MAX_PARALLELISM:
            raise ConfigError(f"parallelism must be in [1, {MAX_PARALLELISM}]")
        if self.backend_mode not in BACKEND_MODES:
            raise ConfigError(f"backend_mode must be one of {BACKEND_MODES}")
        if self.backend_mode in ("replay", "record") and self.replay_file is None:
            raise ConfigError(f"replay_file is required in {self.backend_mode} mode")
        unknown = set(self.max_tokens) - set(DEFAULT_MAX_TOKENS)
        if unknown:
            raise ConfigError(f"max_tokens: unknown keys {sorted(unknown)}")
        self.max_tokens = {**DEFAULT_MAX_TOKENS, **self.max_tokens}
        if any(v < 1 for v in self.max_tokens.values()):
            raise ConfigError("max_tokens values must be positive")
        # Validates the summarizer sampling settings.
        self.summarizer_config

    @property
    def summarizer_config(self) -> GenerationConfig:
        try:
            return GenerationConfig(temperature=self.summarizer_temperature, top_p=1.0)
        except BibEnsembleError as exc:
            raise ConfigError(f"summarizer_temperature: {exc}") from exc

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Path | None = None) -> "RunConfig":
        def path(key: str) -> Path | None:
            value = data.get(key)
            if value is None:
                return None
            p = Path(value).expanduser()
            return (base_dir / p).resolve() if base_dir is not None and not p.is_absolute() else p

        for key in ("task", "profiles"):
            if key not in data:
                raise ConfigError(f"{key}: required field missing")
        try:
            profiles = {name: ProviderProfile.from_dict(name, p) for name, p in data["profiles"].items()}
            return cls(
                task=BibliographyTask.from_dict(data["task"]),
                profiles=profiles,
                generator=data.get("generator", ""),
                judge=data.get("judge", ""),
                summarizer=data.get("summarizer", ""),
                grid=SweepGrid.from_dict(data["grid"]) if "grid" in data else DEFAULT_GRID,
                rubric=JudgeRubric.from_dict(data["rubric"]) if "rubric" in data else DEFAULT_RUBRIC,
                m=int(data.get("m", DEFAULT_M)),
                similarity_threshold=float(data.get("similarity_threshold", DEFAULT_THRESHOLD)),
                parallelism=int(data.get("parallelism", 4)),
                cache_dir=path("cache_dir"),
                output_dir=path("output_dir"),
                backend_mode=data.get("backend_mode", "live"),
                replay_file=path("replay_file"),
                max_tokens=dict(data.get("max_tokens", {})),
                summarizer_temperature=float(data.get("summarizer_temperature", DEFAULT_SUMMARIZER_TEMPERATURE)),
            )
        except ConfigError:
            raise
        except BibEnsembleError as exc:
            raise ConfigError(str(exc)) from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc!r}") from exc

    def to_dict(self) -> dict[str, Any]:
        """Serializable form; ``output_dir`` is left out so run directories compare equal."""
        return {
            "task": self.task.to_dict(),
            "grid": self.grid.to_dict(),
            "profiles": {name: p.to_dict() for name, p in sorted(self.profiles.items())},
            "generator": self.generator,
            "judge": self.judge,
            "summarizer": self.summarizer,
            "rubric": self.rubric.to_dict(),
            "m": self.m,
            "similarity_threshold": self.similarity_threshold,
            "parallelism": self.parallelism,
            "cache_dir": str(self.cache_dir) if self.cache_dir else None,
            "backend_mode": self.backend_mode,
            "replay_file": str(self.replay_file) if self.replay_file else None,
            "max_tokens": dict(sorted(self.max_tokens.items())),
            "summarizer_temperature": self.summarizer_temperature,
        }

    def digest(self) -> str:
        return config_digest(self.to_dict())


def config_digest(data: Mapping[str, Any]) -> str:
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig.from_dict(data, base_dir=path.parent.resolve())


# -- manifest ----------------------------------------------------------------


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def new_run_id() -> str:
    return datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ") + "-" + secrets.token_hex(3)


@dataclass
class RunManifest:
    run_id: str
    config_digest: str
    stage_status: dict[str, str] = field(default_factory=lambda: {s: "pending" for s in STAGES})
    artifact_paths: dict[str, str] = field(default_factory=dict)
    error: str | None = None
    warnings: list[str] = field(default_factory=list)
    created_at: str = field(default_factory=_utc_now)
    updated_at: str = field(default_factory=_utc_now)

    def next_stage(self) -> str | None:
        return next((s for s in STAGES if self.stage_status.get(s) != "done"), None)

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "config_digest": self.config_digest,
            "stage_status": {s: self.stage_status[s] for s in STAGES},
            "artifact_paths": dict(self.artifact_paths),
            "error": self.error,
            "warnings": list(self.warnings),
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunManifest":
        status = dict(data["stage_status"])
        if set(status) != set(STAGES) or not set(status.values()) <= {"pending", "done", "failed"}:
            raise CorruptManifest("stage_status does not list the expected stages")
        return cls(
            run_id=data["run_id"],
            config_digest=data["config_digest"],
            stage_status=status,
            artifact_paths=dict(data.get("artifact_paths", {})),
            error=data.get("error"),
            warnings=list(data.get("warnings", [])),
            created_at=data.get("created_at", ""),
            updated_at=data.get("updated_at", ""),
        )

    def save(self, run_dir: Path) -> None:
        self.updated_at = _utc_now()
        atomic_write_text(run_dir / MANIFEST_FILE, json.dumps(self.to_dict(), indent=2) + "\n")


def load_manifest(run_dir: str | Path) -> RunManifest:
    path = Path(run_dir) / MANIFEST_FILE
    try:
        return RunManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except FileNotFoundError as exc:
        raise CorruptManifest(f"no manifest at {path}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptManifest(f"{path}: {exc}") from exc


# -- the run -----------------------------------------------------------------


def _write_json(path: Path, payload: Any) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, ensure_ascii=False) + "\n")


class Run:
    """One pipeline execution bound to a run directory."""

    def __init__(
        self,
        config: RunConfig,
        run_dir: Path,
        manifest: RunManifest,
        *,
        http_client: httpx.Client | None = None,
    ) -> None:
        self.config = config
        self.run_dir = run_dir
        self.manifest = manifest
        self._http_client = http_client
        self._backend: HTTPBackend | ReplayBackend | None = None
        self.recorder: ReplayStore | None = None

    # providers

    def _setup_backend(self) -> None:
        mode = self.config.backend_mode
        if mode == "replay":
            path = self.config.replay_file
            if path is None or not Path(path).is_file():
                raise ConfigError(f"replay_file not found: {path}")
            self._backend = ReplayBackend(ReplayStore.load(path))
            return
        self._backend = HTTPBackend(self._http_client)
        if mode == "record":
            path = Path(self.config.replay_file)
            self.recorder = ReplayStore.load(path) if path.is_file() else ReplayStore()

    def provider(self, role: str) -> Provider:
        profile = self.config.profiles[getattr(self.config, role)]
        cache = None
        if self.config.backend_mode != "replay" and self.config.cache_dir is not None:
            cache = ResponseCache(self.config.cache_dir)
        return Provider(profile, self._backend, cache, self.recorder)

    def close(self) -> None:
        if isinstance(self._backend, HTTPBackend):
            self._backend.close()

    # stage bodies

    def _read(self, name: str) -> str:
        return (self.run_dir / name).read_text(encoding="utf-8")

    def _candidates(self):
        return candidates_from_jsonl(self._read(CANDIDATES_FILE))

    def _selections(self) -> list[SelectionResult]:
        return [SelectionResult.from_dict(d) for d in json.loads(self._read(SELECTION_FILE))]

    def stage_generate(self) -> None:
        cfg = self.config
        candidates = generate_candidates(
            cfg.task,
            cfg.grid,
            self.provider("generator"),
            max_tokens=cfg.max_tokens["generation"],
            parallelism=cfg.parallelism,
        )
        atomic_write_text(self.run_dir / CANDIDATES_FILE, candidates_to_jsonl(candidates))

    def stage_judge(self) -> None:
        cfg = self.config
        reports, failures = judge_candidates(
            cfg.task,
            self._candidates(),
            cfg.rubric,
            self.provider("judge"),
            max_tokens=cfg.max_tokens["judging"],
            parallelism=cfg.parallelism,
        )
        self.manifest.warnings = [str(f) for f in failures]
        atomic_write_text(self.run_dir / RATINGS_FILE, ratings_to_jsonl(reports))

    def stage_select(self) -> None:
        candidates = self._candidates()
        reports = ratings_from_jsonl(self._read(RATINGS_FILE))
        stats, selections = select_all(candidates, reports, self.config.m)
        _write_json(self.run_dir / SELECTION_FILE, [s.to_dict(stats) for s in selections])

    def stage_refine(self) -> None:
        cfg = self.config
        candidates = self._candidates()
        provider = self.provider("summarizer")
        dedup: dict[str, Any] = {}
        for selection in self._selections():
            refined = refine(
                cfg.task,
                selection,
                candidates,
                provider,
                cfg.similarity_threshold,
                config=cfg.summarizer_config,
                max_tokens=cfg.max_tokens["summarization"],
            )
            atomic_write_text(self.run_dir / REFINED_FILES[selection.strategy], refined.final_text)
            dedup[selection.strategy.value] = [r.to_dict() for r in refined.dedup_log]
        _write_json(self.run_dir / DEDUP_LOG_FILE, dedup)

    def stage_metrics(self) -> None:
        table = compute_metrics(self.run_dir)
        _write_json(self.run_dir / METRICS_FILE, table.to_dict())

    def stage_report(self) -> None:
        atomic_write_text(self.run_dir / REPORT_FILE, render_report(self.run_dir))

    # driver

    def execute(self, start: str | None = None) -> RunManifest:
        first = STAGES.index(start) if start else 0
        self.manifest.error = None
        try:
            self._setup_backend()
        except BaseException:
            self.close()
            raise
        try:
            for stage in STAGES[first:]:
                log.info("stage %s", stage)
                try:
                    getattr(self, f"stage_{stage}")()
                except Exception as exc:
                    self.manifest.stage_status[stage] = "failed"
                    self.manifest.error = f"{stage}: {exc}"
                    self.manifest.save(self.run_dir)
                    raise StageFailed(stage, exc) from exc
                finally:
                    self._flush_recording()
                self.manifest.stage_status[stage] = "done"
                for name in STAGE_ARTIFACTS[stage]:
                    self.manifest.artifact_paths[name] = name
                self.manifest.save(self.run_dir)
        finally:
            self.close()
        return self.manifest

    def _flush_recording(self) -> None:
        if self.recorder is not None and len(self.recorder):
            self.recorder.save(self.config.replay_file)


def run_pipeline(
    config: RunConfig,
    run_dir: str | Path | None = None,
    *,
    http_client: httpx.Client | None = None,
) -> RunManifest:
    """Run every stage in order, persisting each artifact before the next stage starts."""
    run_id = new_run_id()
    if run_dir is None:
        run_dir = config.output_dir if config.output_dir is not None else Path("runs") / run_id
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_json(run_dir / CONFIG_FILE, config.to_dict())
    manifest = RunManifest(run_id=run_id, config_digest=config.digest())
    manifest.artifact_paths[CONFIG_FILE] = CONFIG_FILE
    manifest.save(run_dir)
    return Run(config, run_dir, manifest, http_client=http_client).execute()


def _load_run_config(run_dir: Path, manifest: RunManifest) -> RunConfig:
    try:
        data = json.loads((run_dir / CONFIG_FILE).read_text(encoding="utf-8"))
    except (FileNotFoundError, ValueError) as exc:
        raise CorruptManifest(f"cannot read {run_dir / CONFIG_FILE}: {exc}") from exc
    if config_digest(data) != manifest.config_digest:
        raise CorruptManifest("config.json does not match the digest recorded in the manifest")
    return RunConfig.from_dict(data)


def resume(run_dir: str | Path, *, http_client: httpx.Client | None = None) -> RunManifest:
    """Continue a run from its first stage that is not done."""
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    config = _load_run_config(run_dir, manifest)
    start = manifest.next_stage()
    if start is None:
        return manifest
    for stage in STAGES[: STAGES.index(start)]:
        for name in STAGE_ARTIFACTS[stage]:
            if not (run_dir / name).is_file():
                raise CorruptManifest(f"stage {stage} is marked done but {name} is missing")
    return Run(config, run_dir, manifest, http_client=http_client).execute(start)


# -- metrics and report (re-runnable from persisted texts) ---------------------


def compute_metrics(run_dir: str | Path) -> ComparisonTable:
    """Table rows: first candidate as baseline, candidate mean, then both refined outputs."""
    run_dir = Path(run_dir)
    candidates = candidates_from_jsonl((run_dir / CANDIDATES_FILE).read_text(encoding="utf-8"))
    # Only annotation prose is scored; initials in citation lines would read as sentence ends.
    individual = [MetricsReport.from_text(c.id, annotation_body(c.text)) for c in candidates]
    rows = [
        MetricsReport.from_text(BASELINE_LABEL, annotation_body(candidates[0].text)),
        mean_report(MEAN_INDIVIDUAL_LABEL, individual),
    ]
    for strategy in (Strategy.TOP_M, Strategy.TOP_TEMPERATURE):
        text = (run_dir / REFINED_FILES[strategy]).read_text(encoding="utf-8")
        rows.append(MetricsReport.from_text(_STRATEGY_LABELS[strategy], annotation_body(text)))
    return build_comparison(rows)


def recompute_metrics(run_dir: str | Path) -> RunManifest:
    """Rebuild metrics.json and report.txt from the run's persisted texts."""
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    _write_json(run_dir / METRICS_FILE, compute_metrics(run_dir).to_dict())
    atomic_write_text(run_dir / REPORT_FILE, render_report(run_dir))
    for stage in ("metrics", "report"):
        manifest.stage_status[stage] = "done"
        for name in STAGE_ARTIFACTS[stage]:
            manifest.artifact_paths[name] = name
    manifest.save(run_dir)
    return manifest


def load_comparison(run_dir: Path) -> ComparisonTable:
    data = json.loads((run_dir / METRICS_FILE).read_text(encoding="utf-8"))
    return ComparisonTable(
        rows=[MetricsReport.from_dict(r) for r in data["rows"]],
        deltas=[
            Delta(d["numerator_label"], d["denominator_label"], d["metric"], d["percent"], Direction(d["direction"]))
            for d in data["deltas"]
        ],
        discrepancies=list(data["discrepancies"]),
    )


def render_report(run_dir: str | Path) -> str:
    run_dir = Path(run_dir)
    lines = ["Annotated bibliography ensemble report", ""]
    for sel in json.loads((run_dir / SELECTION_FILE).read_text(encoding="utf-8")):
        label = _STRATEGY_LABELS[Strategy(sel["strategy"])]
        param = "M" if sel["strategy"] == Strategy.TOP_M.value else "temperature"
        lines.append(f"{label}: {param} = {sel['parameter']}; chosen {', '.join(sel['chosen'])}")
    dedup = json.loads((run_dir / DEDUP_LOG_FILE).read_text(encoding="utf-8"))
    for strategy, removed in dedup.items():
        lines.append(f"{_STRATEGY_LABELS[Strategy(strategy)]}: {len(removed)} redundant sentence(s) removed")
    lines.append("")
    lines.append(render_comparison(load_comparison(run_dir)).rstrip("\n"))
    return "\n".join(lines) + "\n"
