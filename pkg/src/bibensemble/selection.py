"""Tier 3a: rating aggregation and the Top-Temperature / Top-M selectors."""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .errors import UnknownCandidate
from .generation import CandidateAnnotation
from .judging import RatingReport

DEFAULT_M = 3

ConfigKey = tuple  # (temperature, top_k, top_p)


class Strategy(str, enum.Enum):
    TOP_TEMPERATURE = "TopTemperature"
    TOP_M = "TopM"


@dataclass(frozen=True)
class ConfigStats:
    mean_overall: float
    majority_overall: int
    count: int


@dataclass(frozen=True)
class TemperatureStats:
    mean_overall: float
    count: int


@dataclass(frozen=True)
class AggregateStats:
    per_config: dict[ConfigKey, ConfigStats]
    per_temperature: dict[float, TemperatureStats]

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_config_stats": [
                {
                    "temperature": t,
                    "top_k": k,
                    "top_p": p,
                    "mean_overall": round(s.mean_overall, 4),
                    "majority_overall": s.majority_overall,
                    "count": s.count,
                }
                for (t, k, p), s in self.per_config.items()
            ],
            "per_temperature_stats": [
                {"temperature": t, "mean_overall": round(s.mean_overall, 4), "count": s.count}
                for t, s in self.per_temperature.items()
            ],
        }


@dataclass(frozen=True)
class SelectionResult:
    strategy: Strategy
    chosen: tuple[str, ...]
    parameter: float | int

    def to_dict(self, stats: AggregateStats | None = None) -> dict[str, Any]:
        out: dict[str, Any] = {
            "strategy": self.strategy.value,
            "parameter": self.parameter,
            "chosen": list(self.chosen),
        }
        if stats is not None:
            out.update(stats.to_dict())
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SelectionResult":
        return cls(Strategy(data["strategy"]), tuple(data["chosen"]), data["parameter"])


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def majority_vote(values: Sequence[float]) -> int:
    """Mode of the values rounded to integers; ties go to the higher value."""
    counts = Counter(_round_half_up(v) for v in values)
    return max(counts.items(), key=lambda kv: (kv[1], kv[0]))[0]


def _rated(reports: Sequence[RatingReport], candidates: Sequence[CandidateAnnotation]):
    by_id = {c.id: c for c in candidates}
    pairs = []
    for r in reports:
        cand = by_id.get(r.candidate_id)
        if cand is None:
            raise UnknownCandidate(r.candidate_id)
        pairs.append((cand, r))
    # Canonical order makes every downstream result independent of input order.
    pairs.sort(key=lambda cr: cr[0].index)
    return pairs


def aggregate(reports: Sequence[RatingReport], candidates: Sequence[CandidateAnnotation]) -> AggregateStats:
    if not reports:
        raise ValueError("no ratings to aggregate")
    by_config: dict[ConfigKey, list[float]] = {}
    by_temp: dict[float, list[float]] = {}
    for cand, report in _rated(reports, candidates):
        by_config.setdefault(cand.config.key, []).append(report.overall)
        by_temp.setdefault(cand.config.temperature, []).append(report.overall)

    def key_order(key: ConfigKey):
        t, k, p = key
        return (t, k is None, k or 0, p)

    per_config = {
        key: ConfigStats(math.fsum(v) / len(v), majority_vote(v), len(v))
        for key, v in sorted(by_config.items(), key=lambda kv: key_order(kv[0]))
    }
    per_temperature = {
        t: TemperatureStats(math.fsum(v) / len(v), len(v)) for t, v in sorted(by_temp.items())
    }
    return AggregateStats(per_config, per_temperature)


def select_top_temperature(
    candidates: Sequence[CandidateAnnotation],
    reports: Sequence[RatingReport],
    stats: AggregateStats,
) -> SelectionResult:
    """All rated candidates from the temperature with the highest mean rating.

    Ties between temperatures go to the lower temperature.
    """
    if not stats.per_temperature:
        raise ValueError("no per-temperature statistics")
    best = min(stats.per_temperature.items(), key=lambda kv: (-kv[1].mean_overall, kv[0]))[0]
    chosen = tuple(c.id for c, _ in _rated(reports, candidates) if c.config.temperature == best)
    return SelectionResult(Strategy.TOP_TEMPERATURE, chosen, best)


def select_top_m(
    candidates: Sequence[CandidateAnnotation],
    reports: Sequence[RatingReport],
    m: int = DEFAULT_M,
) -> SelectionResult:
    """The ``m`` best-rated candidates.

    Ordering is overall descending, then lower temperature, then lower
    candidate index.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if not reports:
        raise ValueError("no ratings to select from")
    ranked = sorted(
        _rated(reports, candidates),
        key=lambda cr: (-cr[1].overall, cr[0].config.temperature, cr[0].index),
    )
    return SelectionResult(Strategy.TOP_M, tuple(c.id for c, _ in ranked[:m]), m)


def select_all(
    candidates: Sequence[CandidateAnnotation],
    reports: Sequence[RatingReport],
    m: int = DEFAULT_M,
) -> tuple[AggregateStats, list[SelectionResult]]:
    stats = aggregate(reports, candidates)
    return stats, [select_top_temperature(candidates, reports, stats), select_top_m(candidates, reports, m)]
