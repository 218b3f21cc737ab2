"""Deterministic text layer: captioning prefixes, the adjudication prompt,
and free-text answer parsing.

Model calls live behind a text-in/text-out client interface; the bundled
replay client reads canned responses keyed by prompt hash, so pipelines stay
reproducible without network access.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Protocol, Sequence

from .model import EMPTY_NAME, TrapdexError

_ADJUDICATION_TEMPLATE = (
    'Write a one-word answer to this question: '
    '"Which of the following animals is in the picture: {categories}?" '
    "Consider this image description in the answer: {caption}."
)


@dataclass(frozen=True)
class CaptionPrompt:
    """A conditional-caption prefix for the captioning model."""

    id: str
    text: str


# Catalog order matters; the first entry is the no-caption baseline.
_CAPTION_CATALOG: tuple[tuple[str, str], ...] = (
    ("none", ""),
    ("picture_shows_cute", "The picture shows a cute "),
    ("i_see_cute", "I see cute "),
    ("species_of_animal", "The species of the animal is "),
    ("animal_in_picture", "The animal in the picture is "),
    ("running", "A running "),
    ("peeking", "A peeking "),
    ("animal_is_called", "This animal is called "),
    ("name_of_animal", "The name of the animal "),
)


def caption_prompt_catalog() -> list[CaptionPrompt]:
    """The fixed catalog of conditional-caption prefixes, in table order."""
    return [CaptionPrompt(id=pid, text=text) for pid, text in _CAPTION_CATALOG]


def build_adjudication_prompt(categories: Sequence[str], caption: str) -> str:
    """Render the language-model adjudication prompt.

    Categories are joined with ", " in the given order; the reserved "empty"
    category must not appear.
    """
    if not categories:
        raise ValueError("category list must be non-empty")
    for name in categories:
        if name.lower() == EMPTY_NAME:
            raise ValueError(f'reserved category "{EMPTY_NAME}" not allowed in prompts')
    return _ADJUDICATION_TEMPLATE.format(
        categories=", ".join(categories), caption=caption
    )


def parse_answer(answer: str, categories: Sequence[str]) -> str | None:
    """Map a free-text answer onto a category, or None for "empty".

    Each category is matched case-insensitively as a whole word (multi-word
    names as contiguous phrases, any whitespace between words). Exactly one
    distinct matching category yields that category; zero or several yield
    None. Total: never raises on any answer text.
    """
    matched: list[str] = []
    for name in categories:
        words = name.split()
        if not words:
            continue
        pattern = r"(?<!\w)" + r"\s+".join(re.escape(w) for w in words) + r"(?!\w)"
        if re.search(pattern, answer, flags=re.IGNORECASE):
            matched.append(name)
    if len(matched) == 1:
        return matched[0]
    return None


def prompt_hash(prompt: str) -> str:
    """Stable key for replay files: SHA-256 of the UTF-8 prompt."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class TextClient(Protocol):
    """Anything that maps a prompt string to a response string."""

    def complete(self, prompt: str) -> str: ...


class ReplayClient:
    """Replays canned responses from a JSONL file.

    Each line is {"prompt_hash": <sha256 hex>, "response": <text>}; later
    duplicates override earlier ones.
    """

    def __init__(self, source: str | Path | IO):
        if hasattr(source, "read"):
            lines = source.read().splitlines()
            name = "<stream>"
        else:
            lines = Path(source).read_text(encoding="utf-8").splitlines()
            name = str(source)
        self._responses: dict[str, str] = {}
        for lineno, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                self._responses[str(row["prompt_hash"])] = str(row["response"])
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise TrapdexError(
                    f"{name}: bad replay line {lineno + 1}: {exc}"
                ) from exc

    def __len__(self) -> int:
        return len(self._responses)

    def complete(self, prompt: str) -> str:
        key = prompt_hash(prompt)
        if key not in self._responses:
            raise KeyError(f"no canned response for prompt hash {key}")
        return self._responses[key]
