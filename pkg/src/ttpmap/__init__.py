"""ttpmap: multi-stage semantic ranking of threat-behavior text against an
adversarial-technique knowledge base, with evaluation tooling and an
annotation service.
"""

from .backends import (
    BiEncoderBackend,
    EmbeddingVector,
    FixtureBackend,
    MonoEncoderBackend,
    ReferenceBackend,
    RemoteBackend,
    cosine,
    fixture_backend,
    reference_backend,
    remote_backend,
)
from .bm25 import Bm25Params, PostingsIndex, build_index, rank_techniques_stage1
from .corpus import (
    DEFAULT_PROFILES,
    STAGE2_PROFILE,
    STAGE3_PROFILE,
    Section,
    Technique,
    TechniqueCatalog,
    TextItem,
    WindowProfile,
    load_catalog,
    segment,
)
from .evaluation import (
    EvalRecord,
    EvalReport,
    exclusion_set,
    load_dataset,
    metrics,
    run_benchmark,
    split,
)
from .ioc import IocRuleset, NormalizedText, classify, normalize
from .pipeline import (
    AnnotateRequest,
    AnnotationResult,
    Artifacts,
    PipelineConfig,
    annotate,
    annotate_batch,
)
from .ranking import RankedList
from .stage2 import VectorStore, bake_store, rank_techniques_stage2
from .stage3 import PairTemplate, explain, rank_techniques_stage3

__version__ = "0.1.0"

__all__ = [
    "AnnotateRequest",
    "AnnotationResult",
    "Artifacts",
    "BiEncoderBackend",
    "Bm25Params",
    "DEFAULT_PROFILES",
    "EmbeddingVector",
    "EvalRecord",
    "EvalReport",
    "FixtureBackend",
    "IocRuleset",
    "MonoEncoderBackend",
    "NormalizedText",
    "PairTemplate",
    "PipelineConfig",
    "PostingsIndex",
    "RankedList",
    "ReferenceBackend",
    "RemoteBackend",
    "STAGE2_PROFILE",
    "STAGE3_PROFILE",
    "Section",
    "Technique",
    "TechniqueCatalog",
    "TextItem",
    "VectorStore",
    "WindowProfile",
    "annotate",
    "annotate_batch",
    "bake_store",
    "build_index",
    "classify",
    "cosine",
    "exclusion_set",
    "explain",
    "fixture_backend",
    "load_catalog",
    "load_dataset",
    "metrics",
    "normalize",
    "rank_techniques_stage1",
    "rank_techniques_stage2",
    "rank_techniques_stage3",
    "reference_backend",
    "remote_backend",
    "run_benchmark",
    "segment",
    "split",
]
