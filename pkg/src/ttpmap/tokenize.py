"""Pluggable tokenization used for window segmentation and budgets.

The engine never embeds a model vocabulary: window/stride arithmetic only
needs a deterministic token stream with character offsets, so the default
tokenizer splits on whitespace and breaks out punctuation runs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Protocol

_TOKEN_RE = re.compile(r"\w+|[^\w\s]+")


@dataclass(frozen=True)
class Token:
    text: str
    start: int  # character offset into the source string
    end: int


class Tokenizer(Protocol):
    name: str

    def tokenize(self, text: str) -> list[Token]: ...


class RegexTokenizer:
    """Whitespace-plus-punctuation tokenizer: word runs and punctuation runs."""

    def __init__(self, pattern: re.Pattern[str] = _TOKEN_RE, name: str = "regex-word-punct"):
        self._pattern = pattern
        self.name = name

    def tokenize(self, text: str) -> list[Token]:
        return [Token(m.group(), m.start(), m.end()) for m in self._pattern.finditer(text)]


class WhitespaceTokenizer:
    """Splits on whitespace only; punctuation stays attached to words."""

    name = "whitespace"

    def tokenize(self, text: str) -> list[Token]:
        return [Token(m.group(), m.start(), m.end()) for m in re.finditer(r"\S+", text)]


DEFAULT_TOKENIZER = RegexTokenizer()


def truncate_tokens(text: str, budget: int, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> tuple[str, bool]:
    """Keep the first `budget` tokens of `text` (head retention).

    Returns the (possibly shortened) text and whether truncation happened.
    """
    if budget <= 0:
        return "", bool(text.strip())
    tokens = tokenizer.tokenize(text)
    if len(tokens) <= budget:
        return text, False
    return text[: tokens[budget - 1].end], True
