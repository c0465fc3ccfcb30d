"""Ranked-list container shared by all pipeline stages."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class RankedList:
    """Ordered (technique_id, score) pairs with stage-local score semantics.

    Scores from different stages are not comparable; `score_kind` labels
    what the numbers mean ("bm25", "cosine" or "relevance").
    """

    entries: list[tuple[str, float]]
    score_kind: str
    warnings: list[str] = field(default_factory=list)

    def technique_ids(self) -> list[str]:
        return [t for t, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def truncated(self, k: int) -> "RankedList":
        return RankedList(entries=self.entries[:k], score_kind=self.score_kind, warnings=list(self.warnings))


def sort_and_cut(scores: dict[str, float], cutoff: int, score_kind: str, warnings: list[str] | None = None) -> RankedList:
    """Descending by score, ties by technique id ascending, truncated."""
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return RankedList(entries=ordered[:cutoff], score_kind=score_kind, warnings=warnings or [])
