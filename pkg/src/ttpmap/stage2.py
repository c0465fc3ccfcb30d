"""Second-stage ranker: cosine similarity over precomputed item vectors,
restricted to the techniques that survived the lexical stage.
"""

from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import BiEncoderBackend, EmbeddingVector, cosine_many, text_hash
from .corpus import TechniqueCatalog
from .errors import ConfigurationError, IndexFormatError, MissingEmbeddingError, StalenessError
from .ranking import RankedList, sort_and_cut
from .tokenize import DEFAULT_TOKENIZER, truncate_tokens

logger = logging.getLogger(__name__)

_STORE_MAGIC = b"TTPVST1\n"


@dataclass
class VectorStore:
    """Per-item embeddings for one window profile; immutable after bake."""

    profile: str
    backend_identity: str
    catalog_digest: str
    dim: int
    vectors: dict[str, EmbeddingVector]  # item_id -> vector

    def vector(self, item_id: str) -> EmbeddingVector:
        try:
            return self.vectors[item_id]
        except KeyError:
            raise MissingEmbeddingError(f"store has no vector for item {item_id!r}") from None

    def save(self, path: str | Path) -> None:
        buf = io.BytesIO()
        _write_store_header(buf, self)
        for item_id, vec in self.vectors.items():
            _write_store_record(buf, item_id, vec)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "VectorStore":
        raw = Path(path).read_bytes()
        buf = io.BytesIO(raw)
        header = _read_store_header(buf, path)
        vectors: dict[str, EmbeddingVector] = {}
        for _ in range(header["count"]):
            rec = _read_store_record(buf, header["dim"])
            if rec is None:
                raise IndexFormatError(f"{path}: truncated store record")
            item_id, vec = rec
            vectors[item_id] = vec
        return cls(
            profile=header["profile"],
            backend_identity=header["backend_identity"],
            catalog_digest=header["catalog_digest"],
            dim=header["dim"],
            vectors=vectors,
        )


def _write_store_header(buf, store: VectorStore) -> None:
    buf.write(_STORE_MAGIC)
    header = json.dumps(
        {
            "version": 1,
            "dim": store.dim,
            "backend_identity": store.backend_identity,
            "profile": store.profile,
            "catalog_digest": store.catalog_digest,
            "count": len(store.vectors),
        }
    ).encode("utf-8")
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)


def _read_store_header(buf, path) -> dict:
    if buf.read(len(_STORE_MAGIC)) != _STORE_MAGIC:
        raise IndexFormatError(f"{path}: not a vector store file")
    (hlen,) = struct.unpack("<I", buf.read(4))
    header = json.loads(buf.read(hlen).decode("utf-8"))
    if header.get("version") != 1:
        raise IndexFormatError(f"{path}: unsupported store version")
    return header


def _write_store_record(buf, item_id: str, vec: EmbeddingVector) -> None:
    raw = item_id.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(np.ascontiguousarray(vec.values, dtype="<f8").tobytes())


def _read_store_record(buf, dim: int):
    head = buf.read(4)
    if len(head) < 4:
        return None
    (ln,) = struct.unpack("<I", head)
    raw = buf.read(ln)
    vec_bytes = buf.read(8 * dim)
    if len(raw) < ln or len(vec_bytes) < 8 * dim:
        return None
    values = np.frombuffer(vec_bytes, dtype="<f8").astype(np.float64)
    return raw.decode("utf-8"), EmbeddingVector(values=values)


def bake_store(
    catalog: TechniqueCatalog,
    backend: BiEncoderBackend,
    profile: str = "stage2",
    checkpoint: str | Path | None = None,
    batch_size: int = 64,
) -> VectorStore:
    """Precompute one vector per item under the profile.

    With a checkpoint path the bake appends records as it goes; a rerun
    after a mid-bake failure resumes behind the last complete record and
    the finished file is byte-identical to an uninterrupted bake.
    """
    if profile not in catalog.items:
        raise ConfigurationError(f"catalog has no profile {profile!r}")
    items = catalog.items[profile]
    vectors: dict[str, EmbeddingVector] = {}
    done = 0
    checkpoint_buf = None

    if checkpoint is not None:
        checkpoint = Path(checkpoint)
        if checkpoint.exists():
            vectors, done = _read_checkpoint(checkpoint, catalog, backend, profile, items)

    if items and done < len(items):
        probe = backend.embed(items[done].text)
        dim = probe.dim
    elif vectors:
        dim = next(iter(vectors.values())).dim
    else:
        dim = 0

    if checkpoint is not None:
        mode = "r+b" if (checkpoint.exists() and done > 0) else "wb"
        checkpoint_buf = open(checkpoint, mode)
        if mode == "wb":
            stub = VectorStore(profile, backend.identity, catalog.digest, dim, {})
            header_io = io.BytesIO()
            _write_store_header_with_count(header_io, stub, len(items))
            checkpoint_buf.write(header_io.getvalue())
        else:
            checkpoint_buf.seek(0, io.SEEK_END)

    try:
        pos = done
        while pos < len(items):
            chunk = items[pos : pos + batch_size]
            embedded = backend.embed_batch([it.text for it in chunk])
            for it, vec in zip(chunk, embedded):
                if vec.dim != dim:
                    raise ConfigurationError(
                        f"backend produced dim {vec.dim} after starting with {dim}"
                    )
                vectors[it.item_id] = vec
                if checkpoint_buf is not None:
                    rec = io.BytesIO()
                    _write_store_record(rec, it.item_id, vec)
                    checkpoint_buf.write(rec.getvalue())
                    checkpoint_buf.flush()
            pos += len(chunk)
    finally:
        if checkpoint_buf is not None:
            checkpoint_buf.close()

    return VectorStore(
        profile=profile,
        backend_identity=backend.identity,
        catalog_digest=catalog.digest,
        dim=dim,
        vectors=vectors,
    )


def _write_store_header_with_count(buf, store: VectorStore, count: int) -> None:
    buf.write(_STORE_MAGIC)
    header = json.dumps(
        {
            "version": 1,
            "dim": store.dim,
            "backend_identity": store.backend_identity,
            "profile": store.profile,
            "catalog_digest": store.catalog_digest,
            "count": count,
        }
    ).encode("utf-8")
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)


def _read_checkpoint(path: Path, catalog, backend, profile: str, items) -> tuple[dict, int]:
    """Recover complete records from a partial bake; truncate any tail."""
    raw = path.read_bytes()
    buf = io.BytesIO(raw)
    try:
        header = _read_store_header(buf, path)
    except (IndexFormatError, struct.error, json.JSONDecodeError):
        path.unlink()
        return {}, 0
    if (
        header["backend_identity"] != backend.identity
        or header["profile"] != profile
        or header["catalog_digest"] != catalog.digest
    ):
        logger.warning("checkpoint %s does not match current bake; restarting", path)
        path.unlink()
        return {}, 0
    vectors: dict[str, EmbeddingVector] = {}
    good_end = buf.tell()
    for expected in items:
        rec = _read_store_record(buf, header["dim"])
        if rec is None:
            break
        item_id, vec = rec
        if item_id != expected.item_id:
            logger.warning("checkpoint %s out of order; restarting", path)
            path.unlink()
            return {}, 0
        vectors[item_id] = vec
        good_end = buf.tell()
    if good_end < len(raw):
        with open(path, "r+b") as fh:
            fh.truncate(good_end)
    return vectors, len(vectors)


def rank_techniques_stage2(
    catalog: TechniqueCatalog,
    store: VectorStore,
    backend: BiEncoderBackend,
    query_text: str,
    candidates: RankedList,
    k2_cutoff: int,
    profile: str = "stage2",
    exclude_items: frozenset[str] | set[str] = frozenset(),
    scored_item_sink: list[str] | None = None,
) -> RankedList:
    """Re-rank candidate techniques by max cosine over their item vectors.

    Pure re-ranking: the output ordering fully replaces the lexical one and
    techniques absent from `candidates` never appear.
    """
    if k2_cutoff < 1:
        raise ConfigurationError(f"k2_cutoff must be >= 1, got {k2_cutoff}")
    if store.backend_identity != backend.identity:
        raise ConfigurationError(
            f"store was baked by {store.backend_identity!r} but backend is {backend.identity!r}"
        )
    if store.catalog_digest != catalog.digest:
        raise StalenessError("vector store was baked against a different catalog")
    warnings: list[str] = []
    if not candidates.entries:
        return RankedList(entries=[], score_kind="cosine", warnings=["no candidates to rerank"])

    query, truncated = truncate_tokens(query_text, backend.max_input_tokens, DEFAULT_TOKENIZER)
    if truncated:
        warnings.append(f"query truncated to {backend.max_input_tokens} tokens")
        logger.warning("stage2 query truncated to %d tokens", backend.max_input_tokens)
    q_vec = backend.embed(query)  # embedded once per query

    best: dict[str, float] = {}
    for technique_id, _ in candidates.entries:
        items = [
            it for it in catalog.items_for(technique_id, profile) if it.item_id not in exclude_items
        ]
        if not items:
            continue
        vectors = [store.vector(it.item_id) for it in items]
        sims = cosine_many(q_vec, vectors)
        if scored_item_sink is not None:
            scored_item_sink.extend(it.item_id for it in items)
        best[technique_id] = max(sims)
    return sort_and_cut(best, k2_cutoff, "cosine", warnings)
