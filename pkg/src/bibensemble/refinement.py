"""Tier 3b: summarize the selected candidates, then drop redundant sentences."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Sequence

from .errors import EmptySummary
from .generation import BibliographyTask, CandidateAnnotation, GenerationConfig, build_generation_prompt
from .judging import fence
from .selection import SelectionResult, Strategy
from .textkit import Sentence, jaccard_similarity, split_sentences, tokenize

if TYPE_CHECKING:
    from .provider import Provider

DEFAULT_THRESHOLD = 0.8
DEFAULT_SUMMARIZER_CONFIG = GenerationConfig(temperature=0.3, top_p=1.0)

SUMMARIZER_SYSTEM_PROMPT = (
    "You are an editor who consolidates several drafts of an annotated bibliography "
    "into one. You keep every distinct source, give each exactly one annotation, and "
    "never invent citations."
)

# "1.", "2)", "[3]", "-", "*", "•" at line start.
_ENUM_MARKER = re.compile(r"^\s*(?:\d+[.)]|\[\d+\]|[-*•])\s+")
# Authors (Year). Title.  -- the rendered source format, optionally in markdown emphasis.
_SOURCE_FORMAT = re.compile(r"^\s*[*_]*[^\n()]+\s\(\d{4}[a-z]?\)\.\s+\S")


@dataclass(frozen=True)
class DedupRecord:
    removed_sentence: str
    kept_sentence: str
    similarity: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "removed_sentence": self.removed_sentence,
            "kept_sentence": self.kept_sentence,
            "similarity": self.similarity,
        }


@dataclass(frozen=True)
class RefinedBibliography:
    strategy: Strategy
    final_text: str
    entries: list[tuple[str, str]]
    dedup_log: list[DedupRecord] = field(default_factory=list)


def build_summarize_prompt(
    task: BibliographyTask, selected: Sequence[CandidateAnnotation]
) -> tuple[str, str]:
    if not selected:
        raise ValueError("nothing selected to summarize")
    _, original = build_generation_prompt(task)
    blocks = "\n\n".join(
        f"Draft {i} of {len(selected)}:\n{fence('candidate', c.text)}" for i, c in enumerate(selected, 1)
    )
    user = (
        "Several drafts were written for this task:\n\n"
        f"{fence('task', original)}\n\n"
        f"{blocks}\n\n"
        "Merge the drafts into one consolidated annotated bibliography. Keep every distinct "
        "citation exactly once and give each a single annotation that combines the best "
        "information from the drafts. Put each citation on its own numbered line with its "
        "annotation on the following line. Output only the bibliography."
    )
    return SUMMARIZER_SYSTEM_PROMPT, user


def is_citation_line(line: str) -> bool:
    return bool(_ENUM_MARKER.match(line) or _SOURCE_FORMAT.match(line))


def annotation_body(text: str) -> str:
    """The text with citation lines and blank lines removed."""
    return "\n".join(line.strip() for line in text.splitlines() if line.strip() and not is_citation_line(line))


def remove_redundant_sentences(
    sentences: Sequence[Sentence], threshold: float = DEFAULT_THRESHOLD
) -> tuple[list[Sentence], list[DedupRecord]]:
    """Single forward pass dropping sentences too similar to an earlier kept one.

    A sentence is dropped when its token-set Jaccard similarity with any kept
    sentence is at least ``threshold``; the log names the closest kept sentence.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    kept: list[Sentence] = []
    kept_tokens: list[frozenset[str]] = []
    log: list[DedupRecord] = []
    for sentence in sentences:
        tokens = tokenize(sentence.text)
        best_sim, best_idx = -1.0, -1
        for i, other in enumerate(kept_tokens):
            sim = jaccard_similarity(tokens, other)
            if sim > best_sim:
                best_sim, best_idx = sim, i
        if best_idx >= 0 and best_sim >= threshold:
            log.append(DedupRecord(sentence.text, kept[best_idx].text, best_sim))
        else:
            kept.append(sentence)
            kept_tokens.append(tokens)
    return kept, log


def dedup_summary(summary: str, threshold: float = DEFAULT_THRESHOLD) -> tuple[list[tuple[str, str]], list[DedupRecord]]:
    """Dedup a summary's annotation sentences while keeping its entry structure.

    Citation lines are exempt and open a new entry; text before the first
    citation forms an entry with an empty citation.
    """
    segments: list[tuple[str, list[int]]] = [("", [])]
    sentences: list[Sentence] = []
    for line in summary.splitlines():
        if not line.strip():
            continue
        if is_citation_line(line):
            segments.append((line.strip(), []))
            continue
        for s in split_sentences(line):
            segments[-1][1].append(len(sentences))
            sentences.append(Sentence(s.text, len(sentences)))

    kept, log = remove_redundant_sentences(sentences, threshold)
    kept_idx = {s.index for s in kept}
    entries = []
    for citation, idxs in segments:
        annotation = " ".join(sentences[i].text for i in idxs if i in kept_idx)
        if citation or annotation:
            entries.append((citation, annotation))
    return entries, log


def render_entries(entries: Sequence[tuple[str, str]]) -> str:
    blocks = ["\n".join(part for part in entry if part) for entry in entries]
    return "\n\n".join(blocks) + "\n"


def summarize_request(
    task: BibliographyTask,
    selected: Sequence[CandidateAnnotation],
    *,
    config: GenerationConfig = DEFAULT_SUMMARIZER_CONFIG,
    max_tokens: int = 1024,
):
    from .provider import CompletionRequest

    system, user = build_summarize_prompt(task, selected)
    return CompletionRequest(system, user, config, max_tokens)


def refine(
    task: BibliographyTask,
    selection: SelectionResult,
    candidates: Sequence[CandidateAnnotation],
    provider: "Provider",
    threshold: float = DEFAULT_THRESHOLD,
    *,
    config: GenerationConfig = DEFAULT_SUMMARIZER_CONFIG,
    max_tokens: int = 1024,
) -> RefinedBibliography:
    if not selection.chosen:
        raise ValueError("selection is empty")
    by_id = {c.id: c for c in candidates}
    selected = [by_id[cid] for cid in selection.chosen]
    result = provider.complete(summarize_request(task, selected, config=config, max_tokens=max_tokens))
    if not result.text.strip():
        raise EmptySummary(f"summarizer returned no text for {selection.strategy.value}")
    entries, log = dedup_summary(result.text, threshold)
    if not entries:
        raise EmptySummary(f"summarizer returned no sentences for {selection.strategy.value}")
    return RefinedBibliography(selection.strategy, render_entries(entries), entries, log)
