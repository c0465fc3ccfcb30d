"""First-stage ranker: exact-term matching over an inverted index.

Query terms must match indexed terms exactly (after analysis) to
contribute. Per-item scores aggregate to technique scores by max, and the
top-K1 techniques survive to the dense stages.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .analysis import TermAnalyzer, default_analyzer
from .corpus import TechniqueCatalog, TextItem
from .errors import ConfigurationError, DuplicateItemError, IndexFormatError
from .ranking import RankedList, sort_and_cut

_MAGIC = b"TTPIDX1\n"


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2  # term-frequency saturation
    b: float = 0.75  # length normalization in [0, 1]

    def __post_init__(self):
        if self.k1 < 0:
            raise ConfigurationError(f"k1 must be >= 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ConfigurationError(f"b must be in [0, 1], got {self.b}")


def idf(doc_count: int, doc_freq: int) -> float:
    """Nonnegative plus-one log IDF: ln(1 + (N - df + 0.5) / (df + 0.5))."""
    return math.log(1.0 + (doc_count - doc_freq + 0.5) / (doc_freq + 0.5))


def analyze(text: str) -> list[str]:
    return default_analyzer()(text)


class PostingsIndex:
    """Inverted index over text items; immutable after build."""

    def __init__(
        self,
        item_ids: list[str],
        doc_lengths_arr: np.ndarray,
        vocabulary: dict[str, int],
        postings_docs: list[np.ndarray],
        postings_tfs: list[np.ndarray],
        catalog_digest: str | None = None,
    ):
        self.item_ids = item_ids  # sorted; position == doc index
        self._doc_lengths = doc_lengths_arr
        self.vocabulary = vocabulary
        self._postings_docs = postings_docs
        self._postings_tfs = postings_tfs
        self.catalog_digest = catalog_digest
        self.doc_count = len(item_ids)
        self.avg_doc_length = float(doc_lengths_arr.mean()) if self.doc_count else 0.0

    @property
    def doc_lengths(self) -> dict[str, int]:
        return {iid: int(self._doc_lengths[i]) for i, iid in enumerate(self.item_ids)}

    def postings(self, term: str) -> list[tuple[str, int]]:
        """Postings list for a term, sorted by item_id."""
        tid = self.vocabulary.get(term)
        if tid is None:
            return []
        docs = self._postings_docs[tid]
        tfs = self._postings_tfs[tid]
        return [(self.item_ids[int(d)], int(tfs[j])) for j, d in enumerate(docs)]

    def doc_freq(self, term: str) -> int:
        tid = self.vocabulary.get(term)
        return 0 if tid is None else len(self._postings_docs[tid])

    @classmethod
    def build(
        cls,
        items: Sequence[TextItem] | Sequence[tuple[str, str]],
        analyzer: TermAnalyzer | None = None,
        catalog_digest: str | None = None,
    ) -> "PostingsIndex":
        analyzer = analyzer or default_analyzer()
        pairs: list[tuple[str, str]] = []
        seen: set[str] = set()
        for it in items:
            iid, text = (it.item_id, it.text) if isinstance(it, TextItem) else (it[0], it[1])
            if iid in seen:
                raise DuplicateItemError(f"duplicate item id {iid!r} while building index")
            seen.add(iid)
            pairs.append((iid, text))
        # Doc table sorted by item_id so postings arrays are sorted both by
        # doc index and by item_id.
        pairs.sort(key=lambda p: p[0])
        item_ids = [p[0] for p in pairs]
        lengths = np.zeros(len(pairs), dtype=np.float64)
        term_docs: dict[str, dict[int, int]] = {}
        for doc_idx, (_, text) in enumerate(pairs):
            terms = analyzer(text)
            lengths[doc_idx] = len(terms)
            for term in terms:
                term_docs.setdefault(term, {})
                term_docs[term][doc_idx] = term_docs[term].get(doc_idx, 0) + 1
        vocabulary: dict[str, int] = {}
        postings_docs: list[np.ndarray] = []
        postings_tfs: list[np.ndarray] = []
        for term in sorted(term_docs):
            vocabulary[term] = len(postings_docs)
            entries = sorted(term_docs[term].items())
            postings_docs.append(np.array([d for d, _ in entries], dtype=np.int32))
            postings_tfs.append(np.array([tf for _, tf in entries], dtype=np.float64))
        return cls(item_ids, lengths, vocabulary, postings_docs, postings_tfs, catalog_digest)

    def score(
        self,
        query_terms: Sequence[str],
        params: Bm25Params = Bm25Params(),
        exclude_items: frozenset[str] | set[str] = frozenset(),
    ) -> list[tuple[str, float]]:
        """BM25 scores for every item matching at least one query term.

        Each query-term occurrence contributes (duplicated terms count
        twice). Sorted by score descending, ties by item_id ascending.
        """
        triples = []
        for term in query_terms:
            tid = self.vocabulary.get(term)
            if tid is None:
                continue
            docs = self._postings_docs[tid]
            triples.append((idf(self.doc_count, len(docs)), docs, self._postings_tfs[tid]))
        if not triples:
            return []
        scores = kernels.bm25_scores(
            self.doc_count, self._doc_lengths, self.avg_doc_length,
            params.k1, params.b, triples,
        )
        matched = np.nonzero(scores)[0]
        out = []
        for d in matched:
            iid = self.item_ids[int(d)]
            if iid in exclude_items:
                continue
            out.append((iid, float(scores[d])))
        out.sort(key=lambda kv: (-kv[1], kv[0]))
        return out

    # --- serialization (versioned binary: magic, JSON header, varint body) ---

    def save(self, path: str | Path) -> None:
        buf = io.BytesIO()
        buf.write(_MAGIC)
        header = json.dumps(
            {"version": 1, "catalog_digest": self.catalog_digest, "doc_count": self.doc_count}
        ).encode("utf-8")
        buf.write(struct.pack("<I", len(header)))
        buf.write(header)
        buf.write(struct.pack("<I", self.doc_count))
        for i, iid in enumerate(self.item_ids):
            raw = iid.encode("utf-8")
            _write_uvarint(buf, len(raw))
            buf.write(raw)
            _write_uvarint(buf, int(self._doc_lengths[i]))
        buf.write(struct.pack("<I", len(self.vocabulary)))
        for term in sorted(self.vocabulary):
            tid = self.vocabulary[term]
            raw = term.encode("utf-8")
            _write_uvarint(buf, len(raw))
            buf.write(raw)
            docs = self._postings_docs[tid]
            tfs = self._postings_tfs[tid]
            _write_uvarint(buf, len(docs))
            prev = 0
            for j in range(len(docs)):
                d = int(docs[j])
                _write_uvarint(buf, d - prev)  # delta-encoded doc indices
                _write_uvarint(buf, int(tfs[j]))
                prev = d
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "PostingsIndex":
        raw = Path(path).read_bytes()
        buf = io.BytesIO(raw)
        if buf.read(len(_MAGIC)) != _MAGIC:
            raise IndexFormatError(f"{path}: not a postings index file")
        (hlen,) = struct.unpack("<I", buf.read(4))
        header = json.loads(buf.read(hlen).decode("utf-8"))
        if header.get("version") != 1:
            raise IndexFormatError(f"{path}: unsupported index version {header.get('version')}")
        (n_docs,) = struct.unpack("<I", buf.read(4))
        item_ids = []
        lengths = np.zeros(n_docs, dtype=np.float64)
        for i in range(n_docs):
            ln = _read_uvarint(buf)
            item_ids.append(buf.read(ln).decode("utf-8"))
            lengths[i] = _read_uvarint(buf)
        (n_terms,) = struct.unpack("<I", buf.read(4))
        vocabulary: dict[str, int] = {}
        postings_docs: list[np.ndarray] = []
        postings_tfs: list[np.ndarray] = []
        for _ in range(n_terms):
            ln = _read_uvarint(buf)
            term = buf.read(ln).decode("utf-8")
            df = _read_uvarint(buf)
            docs = np.zeros(df, dtype=np.int32)
            tfs = np.zeros(df, dtype=np.float64)
            prev = 0
            for j in range(df):
                prev += _read_uvarint(buf)
                docs[j] = prev
                tfs[j] = _read_uvarint(buf)
            vocabulary[term] = len(postings_docs)
            postings_docs.append(docs)
            postings_tfs.append(tfs)
        return cls(item_ids, lengths, vocabulary, postings_docs, postings_tfs, header.get("catalog_digest"))


def _write_uvarint(buf, value: int) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            buf.write(bytes((byte | 0x80,)))
        else:
            buf.write(bytes((byte,)))
            return


def _read_uvarint(buf) -> int:
    shift = 0
    value = 0
    while True:
        b = buf.read(1)
        if not b:
            raise IndexFormatError("truncated varint")
        byte = b[0]
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value
        shift += 7


def build_index(
    items: Iterable[TextItem] | Iterable[tuple[str, str]],
    analyzer: TermAnalyzer | None = None,
    catalog_digest: str | None = None,
) -> PostingsIndex:
    return PostingsIndex.build(list(items), analyzer=analyzer, catalog_digest=catalog_digest)


def score(
    index: PostingsIndex,
    params: Bm25Params,
    query_terms: Sequence[str],
    exclude_items: frozenset[str] | set[str] = frozenset(),
) -> list[tuple[str, float]]:
    return index.score(query_terms, params, exclude_items)


def rank_techniques_stage1(
    catalog: TechniqueCatalog,
    index: PostingsIndex,
    params: Bm25Params,
    query_text: str,
    k1_cutoff: int,
    profile: str = "stage2",
    exclude_items: frozenset[str] | set[str] = frozenset(),
    scored_item_sink: list[str] | None = None,
    analyzer: TermAnalyzer | None = None,
) -> RankedList:
    """Top-K1 techniques; per-technique score is the max of its item scores."""
    if k1_cutoff < 1:
        raise ConfigurationError(f"k1_cutoff must be >= 1, got {k1_cutoff}")
    analyzer = analyzer or default_analyzer()
    terms = analyzer(query_text)
    if not terms:
        return RankedList(entries=[], score_kind="bm25", warnings=["query has no indexable terms"])
    item_scores = index.score(terms, params, exclude_items)
    if scored_item_sink is not None:
        scored_item_sink.extend(iid for iid, _ in item_scores)
    best: dict[str, float] = {}
    for iid, s in item_scores:
        tech = catalog.item(iid).technique_id
        if tech not in best or s > best[tech]:
            best[tech] = s
    return sort_and_cut(best, k1_cutoff, "bm25")
