"""Term analyzer for the lexical stage: lowercase, split, stopwords, stem."""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

from . import porter

_TERM_RE = re.compile(r"[a-z0-9]+")


def load_stopwords() -> frozenset[str]:
    text = resources.files("ttpmap.data").joinpath("stopwords.txt").read_text(encoding="utf-8")
    words = set()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)


class TermAnalyzer:
    """Deterministic analyzer shared by index construction and queries."""

    def __init__(self, stopwords: frozenset[str] | None = None, stem: bool = True):
        self.stopwords = load_stopwords() if stopwords is None else stopwords
        self.stem = stem

    def __call__(self, text: str) -> list[str]:
        terms = []
        for token in _TERM_RE.findall(text.lower()):
            if token in self.stopwords:
                continue
            terms.append(porter.stem(token) if self.stem else token)
        return terms


@lru_cache(maxsize=1)
def default_analyzer() -> TermAnalyzer:
    return TermAnalyzer()


def analyze(text: str) -> list[str]:
    """Lowercased, punctuation-split, stopword-filtered, stemmed terms."""
    return default_analyzer()(text)
