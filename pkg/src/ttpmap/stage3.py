"""Final-stage reranker: pairwise query/item relevance probabilities over
the dense-stage survivors, using the short window profile so each pair
fits the joint encoder budget.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .backends import MonoEncoderBackend
from .corpus import TechniqueCatalog
from .errors import ConfigurationError, RelevanceRangeError
from .ranking import RankedList, sort_and_cut
from .tokenize import DEFAULT_TOKENIZER, truncate_tokens

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairTemplate:
    """Joint input layout: 'Query:' + q + 'Document:' + item + 'Relevant:'."""

    query_budget: int = 250
    item_budget: int = 250

    def fit_query(self, query_text: str) -> tuple[str, bool]:
        return truncate_tokens(query_text, self.query_budget, DEFAULT_TOKENIZER)

    def render(self, query_text: str, item_text: str) -> str:
        q, _ = truncate_tokens(query_text, self.query_budget, DEFAULT_TOKENIZER)
        d, _ = truncate_tokens(item_text, self.item_budget, DEFAULT_TOKENIZER)
        return f"Query: {q} Document: {d} Relevant:"


DEFAULT_TEMPLATE = PairTemplate()


def _validated(score: float) -> float:
    if not 0.0 <= score <= 1.0:
        raise RelevanceRangeError(f"mono-encoder relevance {score} outside [0, 1]")
    return float(score)


def rank_techniques_stage3(
    catalog: TechniqueCatalog,
    backend: MonoEncoderBackend,
    query_text: str,
    candidates: RankedList,
    k3_cutoff: int,
    profile: str = "stage3",
    template: PairTemplate = DEFAULT_TEMPLATE,
    exclude_items: frozenset[str] | set[str] = frozenset(),
    scored_item_sink: list[str] | None = None,
) -> RankedList:
    """System output ranking: max relevance probability per technique.

    Any backend failure fails the whole query; no partial rankings leave
    this function.
    """
    if k3_cutoff < 1:
        raise ConfigurationError(f"k3_cutoff must be >= 1, got {k3_cutoff}")
    warnings: list[str] = []
    if not candidates.entries:
        return RankedList(entries=[], score_kind="relevance", warnings=["no candidates to rerank"])

    budget = min(template.query_budget, backend.max_query_tokens)
    query, truncated = truncate_tokens(query_text, budget, DEFAULT_TOKENIZER)
    if truncated:
        warnings.append(f"query truncated to {budget} tokens")
        logger.warning("stage3 query truncated to %d tokens", budget)

    best: dict[str, float] = {}
    for technique_id, _ in candidates.entries:
        items = [
            it for it in catalog.items_for(technique_id, profile) if it.item_id not in exclude_items
        ]
        if not items:
            continue
        scores = backend.relevance_batch([(query, it.text) for it in items])
        if scored_item_sink is not None:
            scored_item_sink.extend(it.item_id for it in items)
        best[technique_id] = max(_validated(s) for s in scores)
    return sort_and_cut(best, k3_cutoff, "relevance", warnings)


def explain(
    query_text: str,
    technique_id: str,
    backend: MonoEncoderBackend,
    catalog: TechniqueCatalog,
    profile: str = "stage3",
    template: PairTemplate = DEFAULT_TEMPLATE,
    exclude_items: frozenset[str] | set[str] = frozenset(),
    prefix_chars: int = 160,
) -> list[tuple[str, float, str]]:
    """Evidence panel: every item of the technique with its relevance score,
    best first. The top entry is the item that drove the technique's
    final-stage score.
    """
    budget = min(template.query_budget, backend.max_query_tokens)
    query, _ = truncate_tokens(query_text, budget, DEFAULT_TOKENIZER)
    items = [
        it for it in catalog.items_for(technique_id, profile) if it.item_id not in exclude_items
    ]
    if not items:
        return []
    scores = backend.relevance_batch([(query, it.text) for it in items])
    rows = [
        (it.item_id, _validated(s), template.render(query, it.text)[:prefix_chars])
        for it, s in zip(items, scores)
    ]
    rows.sort(key=lambda r: (-r[1], r[0]))
    return rows
