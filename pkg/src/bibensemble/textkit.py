"""Deterministic text primitives: sentences, tokens, syllables, set similarity."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import AbstractSet, FrozenSet

from .errors import EmptyWord

# Versioned: changing this list changes sentence counts and therefore readability.
ABBREVIATIONS_VERSION = 1
ABBREVIATIONS: tuple[str, ...] = (
    "Dr.", "Mr.", "Mrs.", "Ms.", "Prof.", "vs.", "et al.",
    "e.g.", "i.e.", "Fig.", "Eq.", "pp.", "Vol.", "No.",
)

TokenSet = FrozenSet[str]

# A run of terminators, optionally closed by quotes/brackets, then whitespace or end.
_TERMINATOR = re.compile(r"[.!?]+[\"'’”)\]]*(?=\s|$)")
_WORD = re.compile(r"[^\W_]+")
_VOWEL_GROUP = re.compile(r"[aeiouy]+")
_CONSONANT_LE = re.compile(r"[^aeiouy]le$")


@dataclass(frozen=True)
class Sentence:
    text: str
    index: int

    def __str__(self) -> str:
        return self.text


def _ends_with_abbreviation(head: str) -> bool:
    for abbr in ABBREVIATIONS:
        if head.endswith(abbr):
            cut = len(head) - len(abbr)
            if cut == 0 or head[cut - 1].isspace():
                return True
    return False


def split_sentences(text: str) -> list[Sentence]:
    """Split ``text`` at '.', '!' or '?' followed by whitespace or end of text.

    Terminators stay attached to their sentence. A period closing one of
    :data:`ABBREVIATIONS` (matched case-sensitively, as a whole token) does
    not end a sentence.
    """
    chunks: list[str] = []
    start = 0
    for match in _TERMINATOR.finditer(text):
        head = text[: match.start()] + match.group().rstrip("\"'’”)]")
        if _ends_with_abbreviation(head):
            continue
        chunks.append(text[start : match.end()])
        start = match.end()
    chunks.append(text[start:])
    stripped = (c.strip() for c in chunks)
    return [Sentence(s, i) for i, s in enumerate(s for s in stripped if s)]


def words(text: str) -> list[str]:
    """Lowercased alphanumeric tokens in order, with repeats."""
    return _WORD.findall(text.lower())


def tokenize(text: str) -> TokenSet:
    return frozenset(words(text))


def count_syllables(word: str) -> int:
    letters = re.sub(r"[^a-z]", "", word.lower())
    if not letters:
        raise EmptyWord(f"no letters in {word!r}")
    count = len(_VOWEL_GROUP.findall(letters))
    if letters.endswith("e") and not _CONSONANT_LE.search(letters):
        count -= 1
    return max(count, 1)


def jaccard_similarity(a: AbstractSet[str], b: AbstractSet[str]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)
