"""Tier 1: bibliography prompt, sampling grid and candidate fan-out."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Iterable, Mapping, Sequence

from ._parallel import fan_out
from .errors import ConfigError, EmptyAxis, PartialGeneration

if TYPE_CHECKING:
    from .provider import Provider

MAX_TEMPERATURE = 2.0

GENERATION_SYSTEM_PROMPT = (
    "You are an expert research librarian who writes annotated bibliographies. "
    "Every entry is a full citation followed by an annotation. The annotation gives "
    "a descriptive summary of the source's key findings and then a critical evaluation "
    "of its relevance, accuracy and quality for the stated topic."
)


@dataclass(frozen=True)
class SourceEntry:
    title: str
    year: int
    authors: tuple[str, ...] = ()
    venue: str | None = None
    identifier: str | None = None

    def __post_init__(self) -> None:
        if not self.title.strip():
            raise ConfigError("source title must be non-empty")
        if not 1500 <= self.year <= 2100:
            raise ConfigError(f"source year {self.year} outside [1500, 2100]")
        object.__setattr__(self, "authors", tuple(self.authors))

    def render(self) -> str:
        """Citation line in author-year-title order."""
        if not self.authors:
            names = "Anonymous"
        elif len(self.authors) == 1:
            names = self.authors[0]
        else:
            names = ", ".join(self.authors[:-1]) + " & " + self.authors[-1]
        line = f"{names} ({self.year}). {self.title.rstrip('.')}."
        if self.venue:
            line += f" {self.venue.rstrip('.')}."
        if self.identifier:
            line += f" {self.identifier}"
        return line

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SourceEntry":
        return cls(
            title=data["title"],
            year=int(data["year"]),
            authors=tuple(data.get("authors", ())),
            venue=data.get("venue"),
            identifier=data.get("identifier"),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "authors": list(self.authors),
            "title": self.title,
            "year": self.year,
            "venue": self.venue,
            "identifier": self.identifier,
        }


@dataclass(frozen=True)
class BibliographyTask:
    topic: str
    entry_count: int
    sources: tuple[SourceEntry, ...] | None = None
    style_notes: str | None = None
    annotation_sentences: int = 4

    def __post_init__(self) -> None:
        if not self.topic.strip():
            raise ConfigError("task topic must be non-empty")
        if self.entry_count < 1:
            raise ConfigError("entry_count must be at least 1")
        if self.annotation_sentences < 1:
            raise ConfigError("annotation_sentences must be at least 1")
        if self.sources is not None:
            object.__setattr__(self, "sources", tuple(self.sources))
            if self.entry_count != len(self.sources):
                raise ConfigError(
                    f"entry_count ({self.entry_count}) must equal the number of sources ({len(self.sources)})"
                )

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BibliographyTask":
        sources = data.get("sources")
        parsed = tuple(SourceEntry.from_dict(s) for s in sources) if sources is not None else None
        entry_count = data.get("entry_count", len(parsed) if parsed is not None else None)
        if entry_count is None:
            raise ConfigError("task.entry_count is required when no sources are given")
        return cls(
            topic=data["topic"],
            entry_count=int(entry_count),
            sources=parsed,
            style_notes=data.get("style_notes"),
            annotation_sentences=int(data.get("annotation_sentences", 4)),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "topic": self.topic,
            "entry_count": self.entry_count,
            "sources": [s.to_dict() for s in self.sources] if self.sources is not None else None,
            "style_notes": self.style_notes,
            "annotation_sentences": self.annotation_sentences,
        }


@dataclass(frozen=True)
class GenerationConfig:
    temperature: float
    top_p: float = 1.0
    top_k: int | None = None
    repeat_index: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= MAX_TEMPERATURE:
            raise ConfigError(f"temperature {self.temperature} outside [0, {MAX_TEMPERATURE}]")
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigError(f"top_p {self.top_p} outside (0, 1]")
        if self.top_k is not None and self.top_k < 1:
            raise ConfigError(f"top_k {self.top_k} must be >= 1")
        if self.repeat_index < 0:
            raise ConfigError("repeat_index must be non-negative")

    @property
    def key(self) -> tuple[float, int | None, float]:
        """Sampling parameters without the repeat index."""
        return (self.temperature, self.top_k, self.top_p)


@dataclass(frozen=True)
class SweepGrid:
    temperatures: tuple[float, ...]
    top_ps: tuple[float, ...]
    top_ks: tuple[int | None, ...] = (None,)
    repeats: int = 1

    def __post_init__(self) -> None:
        for name in ("temperatures", "top_ps", "top_ks"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.temperatures:
            raise EmptyAxis("temperatures axis is empty")
        if not self.top_ps:
            raise EmptyAxis("top_ps axis is empty")
        if not self.top_ks:
            # An empty top_k axis means "leave top_k unset".
            object.__setattr__(self, "top_ks", (None,))
        if self.repeats < 1:
            raise ConfigError("repeats must be at least 1")
        for name in ("temperatures", "top_ps", "top_ks"):
            axis = getattr(self, name)
            if len(set(axis)) != len(axis):
                raise ConfigError(f"duplicate values in {name}")
        # Validate every axis value against the per-config invariants.
        for t, k, p in itertools.product(self.temperatures, self.top_ks, self.top_ps):
            GenerationConfig(temperature=t, top_k=k, top_p=p)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SweepGrid":
        return cls(
            temperatures=tuple(float(t) for t in data.get("temperatures", ())),
            top_ps=tuple(float(p) for p in data.get("top_ps", ())),
            top_ks=tuple(None if k is None else int(k) for k in data.get("top_ks", (None,))),
            repeats=int(data.get("repeats", 1)),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "temperatures": list(self.temperatures),
            "top_ks": list(self.top_ks),
            "top_ps": list(self.top_ps),
            "repeats": self.repeats,
        }


DEFAULT_GRID = SweepGrid(temperatures=(0.2, 0.5, 0.8, 1.1), top_ps=(0.8, 0.95), top_ks=(40,), repeats=1)


@dataclass(frozen=True)
class CandidateAnnotation:
    id: str
    config: GenerationConfig
    text: str
    fingerprint: str = field(default="")

    @property
    def index(self) -> int:
        return int(self.id.rsplit("-", 1)[1])

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "temperature": self.config.temperature,
            "top_k": self.config.top_k,
            "top_p": self.config.top_p,
            "repeat_index": self.config.repeat_index,
            "fingerprint": self.fingerprint,
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CandidateAnnotation":
        config = GenerationConfig(
            temperature=data["temperature"],
            top_k=data.get("top_k"),
            top_p=data["top_p"],
            repeat_index=data.get("repeat_index", 0),
        )
        return cls(id=data["id"], config=config, text=data["text"], fingerprint=data.get("fingerprint", ""))


def candidate_id(index: int) -> str:
    return f"cand-{index:04d}"


def build_generation_prompt(task: BibliographyTask) -> tuple[str, str]:
    lines = [f"Topic: {task.topic}", ""]
    n = task.entry_count
    if task.sources is not None:
        lines.append(f"Write an annotated bibliography of the following {n} source(s).")
        lines.append("Reproduce each citation exactly as written below; do not alter or invent details.")
        lines.append("")
        lines.extend(f"{i}. {src.render()}" for i, src in enumerate(task.sources, 1))
    else:
        lines.append(f"Write an annotated bibliography of {n} source(s).")
        lines.append(f"Choose {n} relevant, real, verifiable sources on this topic yourself.")
    lines.append("")
    lines.append(
        f"For each entry, write an annotation of {task.annotation_sentences} sentence(s): "
        "first summarize the key findings, then evaluate the source's relevance, accuracy and quality."
    )
    lines.append(
        'Put each citation on its own line, numbered "1.", "2.", and so on, '
        "with its annotation on the following line."
    )
    if task.style_notes:
        lines.append("")
        lines.append(f"Style notes: {task.style_notes}")
    return GENERATION_SYSTEM_PROMPT, "\n".join(lines)


def _top_k_order(k: int | None) -> tuple[bool, int]:
    return (k is None, k or 0)


def expand_grid(grid: SweepGrid) -> list[GenerationConfig]:
    """Cartesian product of the grid axes in a fixed lexicographic order.

    Temperature, top_k (unset last), top_p and repeat index all ascend.
    """
    if not grid.temperatures:
        raise EmptyAxis("temperatures axis is empty")
    if not grid.top_ps:
        raise EmptyAxis("top_ps axis is empty")
    return [
        GenerationConfig(temperature=t, top_k=k, top_p=p, repeat_index=r)
        for t, k, p, r in itertools.product(
            sorted(grid.temperatures),
            sorted(grid.top_ks or (None,), key=_top_k_order),
            sorted(grid.top_ps),
            range(grid.repeats),
        )
    ]


def generate_candidates(
    task: BibliographyTask,
    grid: SweepGrid,
    provider: "Provider",
    *,
    max_tokens: int = 1024,
    parallelism: int = 1,
) -> list[CandidateAnnotation]:
    from .provider import CompletionRequest

    system, user = build_generation_prompt(task)
    configs = expand_grid(grid)
    requests = [CompletionRequest(system, user, cfg, max_tokens) for cfg in configs]
    outcomes = fan_out(provider.complete, requests, parallelism)

    completed: list[CandidateAnnotation] = []
    failure: tuple[GenerationConfig, BaseException] | None = None
    for i, (cfg, outcome) in enumerate(zip(configs, outcomes)):
        if isinstance(outcome, BaseException):
            if failure is None:
                failure = (cfg, outcome)
            continue
        completed.append(CandidateAnnotation(candidate_id(i), cfg, outcome.text, outcome.fingerprint))
    if failure is not None:
        raise PartialGeneration(completed, failure[0], failure[1])
    return completed


def candidates_to_jsonl(candidates: Iterable[CandidateAnnotation]) -> str:
    return "".join(json.dumps(c.to_dict(), ensure_ascii=False) + "\n" for c in candidates)


def candidates_from_jsonl(text: str) -> list[CandidateAnnotation]:
    return [CandidateAnnotation.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


def index_candidates(candidates: Sequence[CandidateAnnotation]) -> dict[str, CandidateAnnotation]:
    return {c.id: c for c in candidates}
