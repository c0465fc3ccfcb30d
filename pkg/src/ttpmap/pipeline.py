"""Pipeline orchestration: preprocess -> lexical filter -> dense retrieval
-> pairwise rerank, under one configuration with narrowing cutoffs.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .analysis import default_analyzer
from .backends import BiEncoderBackend, MonoEncoderBackend
from .bm25 import Bm25Params, PostingsIndex, rank_techniques_stage1
from .corpus import TechniqueCatalog
from .errors import ConfigurationError, StalenessError, TtpmapError
from .ioc import IocRuleset, NormalizedText
from .ranking import RankedList
from .stage2 import VectorStore, rank_techniques_stage2
from .stage3 import PairTemplate, rank_techniques_stage3


@dataclass(frozen=True)
class PipelineConfig:
    """Cutoffs must narrow: k1 >= k2 >= k3 >= 1 (strictly decreasing in the
    default profile; equality is allowed so single-stage setups are
    expressible)."""

    k1: int = 100
    k2: int = 50
    k3: int = 10
    bm25: Bm25Params = field(default_factory=Bm25Params)
    normalize_query: bool = True
    normalize_corpus: bool = True
    stage1_profile: str = "stage2"  # lexical stage shares the dense-stage corpus
    stage2_profile: str = "stage2"
    stage3_profile: str = "stage3"
    stage2_backend_identity: str = ""
    stage3_backend_identity: str = ""
    query_budget: int = 250
    item_budget: int = 250
    seed: int = 0
    catalog_digest: str = ""

    def __post_init__(self):
        if not (self.k1 >= self.k2 >= self.k3 >= 1):
            raise ConfigurationError(
                f"cutoffs must satisfy k1 >= k2 >= k3 >= 1, got {self.k1}/{self.k2}/{self.k3}"
            )

    def template(self) -> PairTemplate:
        return PairTemplate(query_budget=self.query_budget, item_budget=self.item_budget)

    def to_dict(self) -> dict:
        return {
            "k1": self.k1,
            "k2": self.k2,
            "k3": self.k3,
            "bm25": {"k1": self.bm25.k1, "b": self.bm25.b},
            "normalize_query": self.normalize_query,
            "normalize_corpus": self.normalize_corpus,
            "stage1_profile": self.stage1_profile,
            "stage2_profile": self.stage2_profile,
            "stage3_profile": self.stage3_profile,
            "stage2_backend_identity": self.stage2_backend_identity,
            "stage3_backend_identity": self.stage3_backend_identity,
            "query_budget": self.query_budget,
            "item_budget": self.item_budget,
            "seed": self.seed,
            "catalog_digest": self.catalog_digest,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        bm25 = data.pop("bm25", None)
        params = Bm25Params(**bm25) if bm25 else Bm25Params()
        known = {f for f in cls.__dataclass_fields__ if f != "bm25"}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(bm25=params, **data)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class Artifacts:
    """Everything annotate() reads; all built against one catalog digest."""

    catalog: TechniqueCatalog
    index: PostingsIndex
    store: VectorStore
    bi_backend: BiEncoderBackend
    mono_backend: MonoEncoderBackend
    ruleset: IocRuleset | None = None

    def ioc_ruleset(self) -> IocRuleset:
        return self.ruleset or IocRuleset.default()


@dataclass
class AnnotationResult:
    query_id: str
    raw_text: str
    normalized: NormalizedText
    final: RankedList
    per_stage: dict[int, RankedList]
    timings: dict[str, float]
    warnings: list[str]
    scored_items: dict[int, list[str]] = field(default_factory=dict)


@dataclass(frozen=True)
class AnnotateRequest:
    text: str
    query_id: str | None = None
    exclude_items: frozenset[str] = frozenset()


@dataclass
class BatchItemError:
    index: int
    query_id: str | None
    error_type: str
    message: str


def _check_staleness(config: PipelineConfig, artifacts: Artifacts) -> None:
    digest = artifacts.catalog.digest
    if artifacts.index.catalog_digest and artifacts.index.catalog_digest != digest:
        raise StalenessError("postings index was built against a different catalog")
    if artifacts.store.catalog_digest != digest:
        raise StalenessError("vector store was baked against a different catalog")
    if config.catalog_digest and config.catalog_digest != digest:
        raise StalenessError("config records a different catalog digest")
    if (
        config.stage2_backend_identity
        and config.stage2_backend_identity != artifacts.bi_backend.identity
    ):
        raise ConfigurationError(
            f"config expects stage-2 backend {config.stage2_backend_identity!r}, "
            f"got {artifacts.bi_backend.identity!r}"
        )
    if (
        config.stage3_backend_identity
        and config.stage3_backend_identity != artifacts.mono_backend.identity
    ):
        raise ConfigurationError(
            f"config expects stage-3 backend {config.stage3_backend_identity!r}, "
            f"got {artifacts.mono_backend.identity!r}"
        )


def _residue_outside_replacements(raw_text: str, normalized: NormalizedText) -> str:
    """Input text with every replaced literal cut out (byte-span complement)."""
    raw = raw_text.encode("utf-8")
    parts = []
    pos = 0
    for rep in normalized.replacements:
        start, end = rep.span
        parts.append(raw[pos:start])
        pos = end
    parts.append(raw[pos:])
    return b" ".join(parts).decode("utf-8")


def annotate(
    config: PipelineConfig,
    artifacts: Artifacts,
    raw_text: str,
    query_id: str | None = None,
    exclude_items: frozenset[str] | set[str] = frozenset(),
    record_scored_items: bool = False,
) -> AnnotationResult:
    """Run the full pipeline on one passage.

    The result satisfies the containment chain: stage-3 techniques are a
    subset of stage-2's, which are a subset of stage-1's. Deterministic
    for deterministic backends.
    """
    _check_staleness(config, artifacts)
    if query_id is None:
        query_id = hashlib.sha256(raw_text.encode("utf-8")).hexdigest()[:16]

    timings: dict[str, float] = {}
    warnings: list[str] = []
    scored: dict[int, list[str]] = {1: [], 2: [], 3: []}
    sinks = {s: (scored[s] if record_scored_items else None) for s in (1, 2, 3)}

    t0 = time.perf_counter()
    if config.normalize_query:
        normalized = artifacts.ioc_ruleset().normalize(raw_text)
    else:
        normalized = NormalizedText(text=raw_text, replacements=())
    timings["normalize"] = time.perf_counter() - t0

    # Empty-query gate: no indexable terms outside the replaced indicators.
    residue = (
        _residue_outside_replacements(raw_text, normalized)
        if normalized.replacements
        else normalized.text
    )
    if not default_analyzer()(residue):
        warnings.append("query is empty after normalization; nothing to rank")
        empty = {
            1: RankedList([], "bm25"),
            2: RankedList([], "cosine"),
            3: RankedList([], "relevance"),
        }
        for s in (1, 2, 3):
            timings[f"stage{s}"] = 0.0
        return AnnotationResult(
            query_id=query_id,
            raw_text=raw_text,
            normalized=normalized,
            final=empty[3],
            per_stage=empty,
            timings=timings,
            warnings=warnings,
            scored_items=scored if record_scored_items else {},
        )

    t0 = time.perf_counter()
    stage1 = rank_techniques_stage1(
        artifacts.catalog,
        artifacts.index,
        config.bm25,
        normalized.text,
        config.k1,
        profile=config.stage1_profile,
        exclude_items=exclude_items,
        scored_item_sink=sinks[1],
    )
    timings["stage1"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    stage2 = rank_techniques_stage2(
        artifacts.catalog,
        artifacts.store,
        artifacts.bi_backend,
        normalized.text,
        stage1,
        config.k2,
        profile=config.stage2_profile,
        exclude_items=exclude_items,
        scored_item_sink=sinks[2],
    )
    timings["stage2"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    stage3 = rank_techniques_stage3(
        artifacts.catalog,
        artifacts.mono_backend,
        normalized.text,
        stage2,
        config.k3,
        profile=config.stage3_profile,
        template=config.template(),
        exclude_items=exclude_items,
        scored_item_sink=sinks[3],
    )
    timings["stage3"] = time.perf_counter() - t0

    for stage in (stage1, stage2, stage3):
        warnings.extend(stage.warnings)

    return AnnotationResult(
        query_id=query_id,
        raw_text=raw_text,
        normalized=normalized,
        final=stage3,
        per_stage={1: stage1, 2: stage2, 3: stage3},
        timings=timings,
        warnings=warnings,
        scored_items=scored if record_scored_items else {},
    )


def annotate_batch(
    config: PipelineConfig,
    artifacts: Artifacts,
    requests: list[AnnotateRequest] | list[str],
    record_scored_items: bool = False,
) -> list[AnnotationResult | BatchItemError]:
    """Element-wise annotate; per-item failures become error records and the
    batch keeps going. Output order matches input order.
    """
    outcomes: list[AnnotationResult | BatchItemError] = []
    for i, req in enumerate(requests):
        if isinstance(req, str):
            req = AnnotateRequest(text=req)
        try:
            outcomes.append(
                annotate(
                    config,
                    artifacts,
                    req.text,
                    query_id=req.query_id,
                    exclude_items=req.exclude_items,
                    record_scored_items=record_scored_items,
                )
            )
        except TtpmapError as exc:
            outcomes.append(
                BatchItemError(
                    index=i,
                    query_id=req.query_id,
                    error_type=type(exc).__name__,
                    message=str(exc),
                )
            )
    return outcomes


def result_to_dict(
    result: AnnotationResult,
    catalog: TechniqueCatalog | None = None,
    per_stage: bool = False,
    timings: bool = False,
) -> dict:
    """JSON-ready view; scores are labeled with their stage semantics."""

    def entries(rl: RankedList) -> list[dict]:
        rows = []
        for tid, score in rl.entries:
            row = {"technique_id": tid, "score": score, "score_kind": rl.score_kind}
            if catalog is not None and tid in catalog.techniques:
                row["title"] = catalog.techniques[tid].title
            rows.append(row)
        return rows

    out = {
        "query_id": result.query_id,
        "normalized_text": result.normalized.text,
        "replacements": [
            {"span": list(r.span), "class": r.ioc_class, "literal": r.literal}
            for r in result.normalized.replacements
        ],
        "final": entries(result.final),
        "warnings": list(result.warnings),
    }
    if per_stage:
        out["per_stage"] = {str(s): entries(rl) for s, rl in result.per_stage.items()}
    if result.scored_items:
        out["scored_items"] = {str(s) if isinstance(s, int) else s: ids for s, ids in result.scored_items.items()}
    if timings:
        out["timings"] = dict(result.timings)
    return out
