"""Tier 2: judge prompt, rating parser and per-candidate judging."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Iterable, Mapping, Sequence

from ._parallel import fan_out
from .errors import (
    ConfigError,
    JudgingFailed,
    MalformedNumber,
    MissingCriteria,
    OutOfRange,
    RatingParseError,
    TooFewRatings,
)
from .generation import BibliographyTask, CandidateAnnotation, GenerationConfig, build_generation_prompt

if TYPE_CHECKING:
    from .provider import Provider

log = logging.getLogger(__name__)

OVERALL = "Overall"
MIN_RATED = 2
JUDGE_CONFIG = GenerationConfig(temperature=0.0, top_p=1.0)

# Quoted material is fenced; the parser ignores anything inside these tags.
FENCE_TAGS = ("task", "candidate")
_FENCE_TAG = re.compile(r"<(/?)(" + "|".join(FENCE_TAGS) + r")\b", re.IGNORECASE)
_FENCE_LINE = re.compile(r"^\s*<(/?)(" + "|".join(FENCE_TAGS) + r")>", re.IGNORECASE)

JUDGE_SYSTEM_PROMPT = (
    "You are a strict, impartial reviewer of annotated bibliographies. "
    "You rate a candidate bibliography against the task it was written for, "
    "using only the criteria and scale you are given."
)

FORMAT_REMINDER = (
    "Your previous reply could not be read. Reply again using exactly the required "
    "format: one line per criterion and a final Overall line, each as \"Name: <score>/<max>\"."
)


@dataclass(frozen=True)
class JudgeRubric:
    criteria: tuple[tuple[str, float], ...]
    scale_min: int = 1
    scale_max: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "criteria", tuple((str(n), float(w)) for n, w in self.criteria))
        if self.scale_min >= self.scale_max:
            raise ConfigError("scale_min must be below scale_max")
        if not self.criteria:
            return  # holistic rubric: the judge gives only an Overall score
        names = [n.casefold() for n, _ in self.criteria]
        if len(set(names)) != len(names):
            raise ConfigError("rubric criterion names must be unique (case-insensitive)")
        if OVERALL.casefold() in names:
            raise ConfigError(f"'{OVERALL}' is reserved and cannot be a criterion")
        if any(w <= 0 for _, w in self.criteria):
            raise ConfigError("criterion weights must be positive")
        if abs(math.fsum(w for _, w in self.criteria) - 1.0) > 1e-9:
            raise ConfigError("criterion weights must sum to 1")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.criteria]

    def weighted_mean(self, scores: Mapping[str, float]) -> float:
        return round(math.fsum(w * scores[n] for n, w in self.criteria), 2)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "JudgeRubric":
        criteria = tuple((c["name"], c["weight"]) for c in data.get("criteria", ()))
        return cls(criteria, int(data.get("scale_min", 1)), int(data.get("scale_max", 10)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "criteria": [{"name": n, "weight": w} for n, w in self.criteria],
            "scale_min": self.scale_min,
            "scale_max": self.scale_max,
        }


DEFAULT_RUBRIC = JudgeRubric((("Relevance", 0.4), ("Accuracy", 0.3), ("Coherence", 0.3)), 1, 10)
HOLISTIC_RUBRIC = JudgeRubric((), 1, 10)


@dataclass(frozen=True)
class RatingReport:
    candidate_id: str
    scores: dict[str, float]
    overall: float
    raw_text: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "candidate_id": self.candidate_id,
            "scores": dict(self.scores),
            "overall": self.overall,
            "raw_text": self.raw_text,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RatingReport":
        return cls(data["candidate_id"], dict(data["scores"]), float(data["overall"]), data["raw_text"])


def fence(tag: str, text: str) -> str:
    # Fence tags inside quoted text are escaped so they cannot close the block early.
    safe = _FENCE_TAG.sub(lambda m: "&lt;" + m.group(1) + m.group(2), text)
    return f"<{tag}>\n{safe}\n</{tag}>"


def build_judge_prompt(
    task: BibliographyTask, candidate: CandidateAnnotation, rubric: JudgeRubric = DEFAULT_RUBRIC
) -> tuple[str, str]:
    _, original = build_generation_prompt(task)
    lo, hi = rubric.scale_min, rubric.scale_max
    head = (
        "The following task was given to a writer:\n\n"
        f"{fence('task', original)}\n\n"
        "The writer's response:\n\n"
        f"{fence('candidate', candidate.text)}\n\n"
    )
    if not rubric.criteria:
        return JUDGE_SYSTEM_PROMPT, (
            f"{head}Rate the response as a whole with a number from {lo} to {hi}.\n\n"
            "Reply with exactly this line and nothing else:\n"
            f"{OVERALL}: <score>/{hi}"
        )
    criteria = "\n".join(f"- {name}" for name in rubric.names)
    format_lines = "\n".join(f"{name}: <score>/{hi}" for name in rubric.names)
    user = (
        f"{head}Rate the response on each criterion with a number from {lo} to {hi}:\n"
        f"{criteria}\n\n"
        "Reply with exactly these lines and nothing else, then a final Overall line:\n"
        f"{format_lines}\n"
        f"{OVERALL}: <score>/{hi}"
    )
    return JUDGE_SYSTEM_PROMPT, user


# Leading list markers / emphasis, a label, separator punctuation, a number, "/max".
_LINE = re.compile(
    r"^[\s>*_#\-•]*(?:\d+[.)]\s*)?"
    r"(?P<label>[^\W\d_][\w\- ]*?)"
    r"[\s*_]*[:=\-–—)|]*[\s*_]*"
    r"(?P<number>[-+]?[\d.,]+)"
    r"(?:\s*/\s*(?P<denom>[\d.]+))?",
    re.IGNORECASE,
)
_LABEL_SUFFIX = re.compile(r"\s+(?:score|rating)$", re.IGNORECASE)
_NUMBER = re.compile(r"[-+]?(?:\d+(?:\.\d+)?|\.\d+)")


def _unfenced_lines(raw: str) -> Iterable[str]:
    open_tag: str | None = None
    for line in raw.splitlines():
        m = _FENCE_LINE.match(line)
        if m:
            closing, tag = m.group(1), m.group(2).lower()
            if not closing and open_tag is None:
                open_tag = tag
            elif closing and tag == open_tag:
                open_tag = None
            continue
        if open_tag is None:
            yield line


def _to_number(text: str, name: str) -> float:
    if not _NUMBER.fullmatch(text):
        raise MalformedNumber(f"{name}: cannot read {text!r} as a number")
    return float(text)


def parse_ratings(raw: str, rubric: JudgeRubric, candidate_id: str) -> RatingReport:
    """Extract per-criterion scores and an overall score from judge output.

    Lines inside ``<task>`` or ``<candidate>`` fences are ignored. The first
    line naming a criterion wins. Without an Overall line the overall score is
    the weight-averaged criterion score rounded to two decimals. A rubric
    with no criteria requires the Overall line instead.
    """
    if not raw or not raw.strip():
        raise MissingCriteria(rubric.names or [OVERALL])
    wanted = {n.casefold(): n for n in rubric.names}
    wanted[OVERALL.casefold()] = OVERALL
    found: dict[str, float] = {}

    for line in _unfenced_lines(raw):
        m = _LINE.match(line)
        if not m:
            continue
        label = m.group("label").strip(" -").casefold()
        name = wanted.get(label) or wanted.get(_LABEL_SUFFIX.sub("", label))
        if name is None or name in found:
            continue
        value = _to_number(m.group("number").rstrip(".,"), name)
        denom = m.group("denom")
        if denom is not None and _to_number(denom.rstrip("."), name) != rubric.scale_max:
            raise MalformedNumber(f"{name}: score out of {denom}, expected /{rubric.scale_max}")
        if not rubric.scale_min <= value <= rubric.scale_max:
            raise OutOfRange(name, value)
        found[name] = value

    missing = [n for n in rubric.names if n not in found]
    if missing:
        raise MissingCriteria(missing)
    scores = {n: found[n] for n in rubric.names}
    overall = found.get(OVERALL)
    if overall is None and not rubric.criteria:
        raise MissingCriteria([OVERALL])
    if overall is None:
        overall = rubric.weighted_mean(scores)
    return RatingReport(candidate_id, scores, float(overall), raw)


def render_ratings(scores: Mapping[str, float], overall: float | None, rubric: JudgeRubric) -> str:
    """Ratings in the exact line format the judge prompt asks for."""
    lines = [f"{n}: {_fmt(scores[n])}/{rubric.scale_max}" for n in rubric.names]
    if overall is not None:
        lines.append(f"{OVERALL}: {_fmt(overall)}/{rubric.scale_max}")
    return "\n".join(lines)


def _fmt(x: float) -> str:
    return f"{x:g}" if float(x).is_integer() else repr(float(x))


def judge_request(
    task: BibliographyTask,
    candidate: CandidateAnnotation,
    rubric: JudgeRubric,
    *,
    max_tokens: int = 256,
    reminder: bool = False,
):
    from .provider import CompletionRequest

    system, user = build_judge_prompt(task, candidate, rubric)
    if reminder:
        user = f"{user}\n\n{FORMAT_REMINDER}"
    return CompletionRequest(system, user, JUDGE_CONFIG, max_tokens)


def judge_candidate(
    task: BibliographyTask,
    candidate: CandidateAnnotation,
    rubric: JudgeRubric,
    provider: "Provider",
    *,
    max_tokens: int = 256,
) -> RatingReport:
    try:
        result = provider.complete(judge_request(task, candidate, rubric, max_tokens=max_tokens))
        try:
            return parse_ratings(result.text, rubric, candidate.id)
        except RatingParseError as first:
            log.info("judge output for %s unreadable (%s); retrying with reminder", candidate.id, first)
        retry = provider.complete(judge_request(task, candidate, rubric, max_tokens=max_tokens, reminder=True))
        return parse_ratings(retry.text, rubric, candidate.id)
    except Exception as exc:
        raise JudgingFailed(candidate.id, exc) from exc


def judge_candidates(
    task: BibliographyTask,
    candidates: Sequence[CandidateAnnotation],
    rubric: JudgeRubric,
    provider: "Provider",
    *,
    max_tokens: int = 256,
    parallelism: int = 1,
) -> tuple[list[RatingReport], list[JudgingFailed]]:
    """Rate every candidate; returns reports and failures, both in candidate order.

    Raises :class:`TooFewRatings` when fewer than two candidates could be rated.
    """
    if not candidates:
        raise ValueError("no candidates to judge")
    outcomes = fan_out(
        lambda c: judge_candidate(task, c, rubric, provider, max_tokens=max_tokens),
        list(candidates),
        parallelism,
    )
    reports = [o for o in outcomes if isinstance(o, RatingReport)]
    failures = [o for o in outcomes if isinstance(o, JudgingFailed)]
    unexpected = [o for o in outcomes if isinstance(o, BaseException) and not isinstance(o, JudgingFailed)]
    if unexpected:
        raise unexpected[0]
    for f in failures:
        log.warning("%s", f)
    if len(reports) < MIN_RATED:
        raise TooFewRatings(len(reports), failures)
    return reports, failures


def ratings_to_jsonl(reports: Iterable[RatingReport]) -> str:
    return "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in reports)


def ratings_from_jsonl(text: str) -> list[RatingReport]:
    return [RatingReport.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
