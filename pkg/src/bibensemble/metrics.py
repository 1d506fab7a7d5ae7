"""Sentence length, Flesch Reading Ease and percent-change comparison tables."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .errors import EmptyText, EmptyWord, MissingBaseline, ZeroBase
from .textkit import count_syllables, split_sentences, words

BASELINE_LABEL = "Baseline (Individual)"
MEAN_INDIVIDUAL_LABEL = "Mean Individual"
TOP_M_LABEL = "Top M Responses"
TOP_TEMPERATURE_LABEL = "Top Temperature"

AVG_SENTENCE_LENGTH = "avg_sentence_length"
READABILITY = "readability"

CLAIM_TOLERANCE = 1.0


class Direction(str, enum.Enum):
    IMPROVEMENT = "improvement"
    REDUCTION = "reduction"


# Shorter sentences and higher readability are both "better".
METRIC_DIRECTIONS = {AVG_SENTENCE_LENGTH: Direction.REDUCTION, READABILITY: Direction.IMPROVEMENT}


@dataclass(frozen=True)
class TextCounts:
    sentences: int
    words: int
    syllables: int


def _word_syllables(word: str) -> int:
    try:
        return count_syllables(word)
    except EmptyWord:
        # Letterless tokens (numbers) count as one syllable.
        return 1


def text_counts(text: str) -> TextCounts:
    sentences = split_sentences(text)
    tokens = words(text)
    return TextCounts(len(sentences), len(tokens), sum(_word_syllables(w) for w in tokens))


def flesch_from_counts(words_: int, sentences: int, syllables: int) -> float:
    return 206.835 - 1.015 * (words_ / sentences) - 84.6 * (syllables / words_)


def avg_sentence_length(text: str) -> float:
    counts = text_counts(text)
    if counts.sentences == 0:
        raise EmptyText("text has no sentences")
    return counts.words / counts.sentences


def flesch_reading_ease(text: str) -> float:
    """Flesch Reading Ease, unclamped."""
    counts = text_counts(text)
    if counts.sentences == 0 or counts.words == 0:
        raise EmptyText("text has no sentences or no words")
    return flesch_from_counts(counts.words, counts.sentences, counts.syllables)


def percent_change(value: float, base: float, direction: Direction | str) -> float:
    """Relative change of ``value`` against ``base`` in percent, one decimal.

    Improvement is (value - base) / base, reduction is (base - value) / base.
    """
    if base == 0:
        raise ZeroBase("base value is zero")
    direction = Direction(direction)
    delta = value - base if direction is Direction.IMPROVEMENT else base - value
    return round(100.0 * delta / base, 1) + 0.0  # +0.0 folds -0.0


@dataclass(frozen=True)
class MetricsReport:
    label: str
    avg_sentence_length: float
    readability: float
    sentence_count: int = 0
    word_count: int = 0
    syllable_count: int = 0

    @classmethod
    def from_text(cls, label: str, text: str) -> "MetricsReport":
        counts = text_counts(text)
        if counts.sentences == 0 or counts.words == 0:
            raise EmptyText(f"{label}: text has no sentences or no words")
        return cls(
            label,
            counts.words / counts.sentences,
            flesch_from_counts(counts.words, counts.sentences, counts.syllables),
            counts.sentences,
            counts.words,
            counts.syllables,
        )

    def metric(self, name: str) -> float:
        return getattr(self, name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "avg_sentence_length": round(self.avg_sentence_length, 4),
            "readability": round(self.readability, 4),
            "sentence_count": self.sentence_count,
            "word_count": self.word_count,
            "syllable_count": self.syllable_count,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MetricsReport":
        return cls(**{k: data[k] for k in (
            "label", "avg_sentence_length", "readability", "sentence_count", "word_count", "syllable_count"
        )})


def mean_report(label: str, reports: Sequence[MetricsReport]) -> MetricsReport:
    """Metric-wise mean of several reports; counts are summed."""
    if not reports:
        raise EmptyText("no reports to average")
    n = len(reports)
    return MetricsReport(
        label,
        math.fsum(r.avg_sentence_length for r in reports) / n,
        math.fsum(r.readability for r in reports) / n,
        sum(r.sentence_count for r in reports),
        sum(r.word_count for r in reports),
        sum(r.syllable_count for r in reports),
    )


@dataclass(frozen=True)
class Delta:
    numerator_label: str
    denominator_label: str
    metric: str
    percent: float
    direction: Direction

    def to_dict(self) -> dict[str, Any]:
        return {
            "numerator_label": self.numerator_label,
            "denominator_label": self.denominator_label,
            "metric": self.metric,
            "percent": self.percent,
            "direction": self.direction.value,
        }


ClaimKey = tuple  # (numerator_label, denominator_label, metric)


@dataclass(frozen=True)
class ComparisonTable:
    rows: list[MetricsReport]
    deltas: list[Delta]
    discrepancies: list[str] = field(default_factory=list)

    def delta(self, numerator: str, denominator: str, metric: str) -> Delta:
        for d in self.deltas:
            if (d.numerator_label, d.denominator_label, d.metric) == (numerator, denominator, metric):
                return d
        raise KeyError((numerator, denominator, metric))

    def to_dict(self) -> dict[str, Any]:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "deltas": [d.to_dict() for d in self.deltas],
            "discrepancies": list(self.discrepancies),
        }


def _is_baseline(label: str) -> bool:
    return label.casefold().startswith("baseline")


def _is_mean_individual(label: str) -> bool:
    return label.casefold().startswith(MEAN_INDIVIDUAL_LABEL.casefold())


def build_comparison(
    reports: Sequence[MetricsReport],
    claims: Mapping[ClaimKey, float] | None = None,
    tolerance: float = CLAIM_TOLERANCE,
) -> ComparisonTable:
    """Deltas of every row against the baseline and mean-individual rows.

    ``claims`` maps (numerator, denominator, metric) to a claimed percentage;
    a computed delta further than ``tolerance`` points from its claim becomes a
    discrepancy note.
    """
    rows = list(reports)
    baseline = next((r for r in rows if _is_baseline(r.label)), None)
    if baseline is None or len(rows) < 2:
        raise MissingBaseline("comparison needs a baseline row and at least one other row")
    mean_row = next((r for r in rows if _is_mean_individual(r.label)), None)

    references = [baseline] + ([mean_row] if mean_row is not None else [])
    deltas: list[Delta] = []
    for ref in references:
        for row in rows:
            if row is baseline or row is ref or (ref is mean_row and _is_mean_individual(row.label)):
                continue
            for metric, direction in METRIC_DIRECTIONS.items():
                pct = percent_change(row.metric(metric), ref.metric(metric), direction)
                deltas.append(Delta(row.label, ref.label, metric, pct, direction))

    discrepancies: list[str] = []
    for key, claimed in (claims or {}).items():
        numerator, denominator, metric = key
        match = next(
            (d for d in deltas if (d.numerator_label, d.denominator_label, d.metric) == (numerator, denominator, metric)),
            None,
        )
        if match is None:
            discrepancies.append(f"claimed {claimed:g}% for {numerator} vs {denominator} ({metric}) has no computed counterpart")
        elif abs(match.percent - claimed) > tolerance:
            discrepancies.append(
                f"{numerator} vs {denominator}, {metric} {match.direction.value}: "
                f"claimed {claimed:g}%, computed {match.percent:.1f}%"
            )
    return ComparisonTable(rows, deltas, discrepancies)


_METRIC_TITLES = {AVG_SENTENCE_LENGTH: "Avg. Sentence Length", READABILITY: "Readability Score"}


def render_comparison(table: ComparisonTable) -> str:
    """Plain-text report: metric table, deltas, then discrepancy footnotes."""
    header = ("Output", _METRIC_TITLES[AVG_SENTENCE_LENGTH], _METRIC_TITLES[READABILITY])
    body = [(r.label, f"{r.avg_sentence_length:.2f}", f"{r.readability:.2f}") for r in table.rows]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(3)]

    def fmt(row: Sequence[str]) -> str:
        return "  ".join([row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]).rstrip()

    lines = [fmt(header), "  ".join("-" * w for w in widths)]
    lines += [fmt(row) for row in body]

    for ref_label in dict.fromkeys(d.denominator_label for d in table.deltas):
        lines += ["", f"Δ vs {ref_label}"]
        for d in (d for d in table.deltas if d.denominator_label == ref_label):
            lines.append(f"  {d.numerator_label}: {_METRIC_TITLES[d.metric]} {d.percent:+.1f}% {d.direction.value}")

    if table.discrepancies:
        lines += ["", "Discrepancies"]
        lines += [f"  [{i}] {note}" for i, note in enumerate(table.discrepancies, 1)]
    return "\n".join(lines) + "\n"
