"""Scoring backends behind the bi-encoder and mono-encoder interfaces.

Three concrete families: an embedding fixture (precomputed vectors keyed
by text hash), a deterministic reference pseudo-encoder for tests and
benchmarks, and an HTTP client for attaching real fine-tuned models.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import httpx
import numpy as np

from . import kernels
from .analysis import default_analyzer
from .errors import (
    DimensionDriftError,
    DimensionMismatchError,
    IndexFormatError,
    MalformedResponseError,
    MissingEmbeddingError,
    RelevanceRangeError,
    RemoteBackendError,
    RemoteTimeoutError,
    ZeroVectorError,
)

_EMB_MAGIC = b"TTPEMB1\n"


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray  # float64, finite

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __post_init__(self):
        if self.values.ndim != 1 or self.values.shape[0] == 0:
            raise ValueError("embedding must be a non-empty 1-d vector")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding contains non-finite values")


def text_hash(text: str) -> str:
    """Canonical lookup key for a text: sha256 of its UTF-8 bytes."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding."""
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimension mismatch: {a.dim} vs {b.dim}")
    matrix = b.values.reshape(1, -1)
    dots, norms, qn = kernels.dots_and_norms(a.values, np.ascontiguousarray(matrix))
    if qn == 0.0 or norms[0] == 0.0:
        raise ZeroVectorError("cosine is undefined for an all-zero vector")
    value = float(dots[0]) / (math.sqrt(qn) * math.sqrt(float(norms[0])))
    return max(-1.0, min(1.0, value))


def cosine_many(query: EmbeddingVector, vectors: Sequence[EmbeddingVector]) -> list[float]:
    """Cosine of one query against many vectors, fixed evaluation order."""
    if not vectors:
        return []
    for v in vectors:
        if v.dim != query.dim:
            raise DimensionMismatchError(f"dimension mismatch: {query.dim} vs {v.dim}")
    matrix = np.ascontiguousarray(np.stack([v.values for v in vectors]))
    dots, norms, qn = kernels.dots_and_norms(query.values, matrix)
    if qn == 0.0:
        raise ZeroVectorError("cosine is undefined for an all-zero query vector")
    out = []
    qnorm = math.sqrt(qn)
    for i in range(len(vectors)):
        if norms[i] == 0.0:
            raise ZeroVectorError("cosine is undefined for an all-zero item vector")
        value = float(dots[i]) / (qnorm * math.sqrt(float(norms[i])))
        out.append(max(-1.0, min(1.0, value)))
    return out


class BiEncoderBackend(ABC):
    """Embeds texts independently; relevance is cosine in embedding space."""

    identity: str
    max_input_tokens: int
    max_parallel: int | None = None  # None: fully concurrent

    @abstractmethod
    def embed(self, text: str) -> EmbeddingVector: ...

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [self.embed(t) for t in texts]


class MonoEncoderBackend(ABC):
    """Scores a query/item pair jointly as a relevance probability."""

    identity: str
    max_query_tokens: int
    max_item_tokens: int
    max_parallel: int | None = None

    @abstractmethod
    def relevance(self, query_text: str, item_text: str) -> float: ...

    def relevance_batch(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        return [self.relevance(q, i) for q, i in pairs]


class FixtureBackend(BiEncoderBackend):
    """Looks embeddings up by exact text hash; no fuzzy matching."""

    def __init__(self, table: dict[str, EmbeddingVector], identity: str = "fixture:v1", max_input_tokens: int = 512):
        dims = {v.dim for v in table.values()}
        if len(dims) > 1:
            raise DimensionMismatchError(f"fixture table mixes dimensions: {sorted(dims)}")
        self.table = dict(table)
        self.identity = identity
        self.max_input_tokens = max_input_tokens

    def embed(self, text: str) -> EmbeddingVector:
        key = text_hash(text)
        try:
            return self.table[key]
        except KeyError:
            raise MissingEmbeddingError(f"no stored embedding for text hash {key}") from None


def fixture_backend(table: dict[str, EmbeddingVector], identity: str = "fixture:v1") -> FixtureBackend:
    return FixtureBackend(table, identity=identity)


def _splitmix64(state: int) -> tuple[int, int]:
    mask = (1 << 64) - 1
    state = (state + 0x9E3779B97F4A7C15) & mask
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    z = z ^ (z >> 31)
    return state, z


class ReferenceBackend(BiEncoderBackend, MonoEncoderBackend):
    """Deterministic pseudo-encoder: hashed bag of terms under a seeded
    random projection. Texts sharing more analyzed terms land closer in
    cosine; mono relevance is a logistic of the scaled cosine. Platform
    independent for a fixed (dim, seed).
    """

    def __init__(self, dim: int = 64, seed: int = 0, scale: float = 5.0):
        if dim <= 0:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = dim
        self.seed = seed
        self.scale = scale
        self.identity = f"reference:v1:dim={dim}:seed={seed}"
        self.max_input_tokens = 512
        self.max_query_tokens = 250
        self.max_item_tokens = 250
        self._analyzer = default_analyzer()
        self._term_cache: dict[str, np.ndarray] = {}

    def _term_vector(self, term: str) -> np.ndarray:
        vec = self._term_cache.get(term)
        if vec is None:
            digest = hashlib.blake2b(f"{self.seed}:{term}".encode("utf-8"), digest_size=8).digest()
            state = int.from_bytes(digest, "little")
            values = np.empty(self.dim, dtype=np.float64)
            for i in range(self.dim):
                state, z = _splitmix64(state)
                values[i] = (z >> 11) / float(1 << 53) * 2.0 - 1.0
            vec = values
            self._term_cache[term] = vec
        return vec

    def embed(self, text: str) -> EmbeddingVector:
        terms = self._analyzer(text)
        if not terms:
            terms = ["<empty>"]  # keep the vector nonzero for cosine
        acc = np.zeros(self.dim, dtype=np.float64)
        for term in terms:
            acc += self._term_vector(term)
        return EmbeddingVector(values=acc)

    def relevance(self, query_text: str, item_text: str) -> float:
        sim = cosine(self.embed(query_text), self.embed(item_text))
        return 1.0 / (1.0 + math.exp(-self.scale * sim))


def reference_backend(dim: int = 64, seed: int = 0) -> ReferenceBackend:
    """One object serving both encoder interfaces, fully deterministic."""
    return ReferenceBackend(dim=dim, seed=seed)


class RemoteBackend(BiEncoderBackend, MonoEncoderBackend):
    """HTTP client for an external embedding/reranking service.

    Wire contract: POST {endpoint}/embed {"texts": [...]} returns
    {"dim": D, "vectors": [[...], ...]}; POST {endpoint}/relevance
    {"pairs": [{"query": q, "item": i}, ...]} returns {"scores": [...]}.
    Responses are cached by text hash for the lifetime of this object.
    """

    def __init__(
        self,
        endpoint: str,
        timeout: float = 30.0,
        batch_size: int = 32,
        identity: str | None = None,
        max_parallel: int = 4,
        client: httpx.Client | None = None,
    ):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.batch_size = batch_size
        self.identity = identity or f"remote:{self.endpoint}"
        self.max_parallel = max_parallel
        self.max_input_tokens = 512
        self.max_query_tokens = 250
        self.max_item_tokens = 250
        self._client = client or httpx.Client(timeout=timeout)
        self._dim: int | None = None
        self._embed_cache: dict[str, EmbeddingVector] = {}
        self._relevance_cache: dict[tuple[str, str], float] = {}
        self.request_count = 0

    def _post(self, path: str, payload: dict) -> dict:
        try:
            response = self._client.post(self.endpoint + path, json=payload, timeout=self.timeout)
        except httpx.TimeoutException as exc:
            raise RemoteTimeoutError(f"timeout calling {path}: {exc}") from exc
        except httpx.HTTPError as exc:
            raise RemoteBackendError(f"transport failure calling {path}: {exc}") from exc
        self.request_count += 1
        if response.status_code != 200:
            raise RemoteBackendError(f"{path} returned HTTP {response.status_code}")
        try:
            return response.json()
        except ValueError as exc:
            raise MalformedResponseError(f"{path} returned non-JSON body") from exc

    def embed(self, text: str) -> EmbeddingVector:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        missing = []
        for t in texts:
            key = text_hash(t)
            if key not in self._embed_cache and t not in (m[1] for m in missing):
                missing.append((key, t))
        for start in range(0, len(missing), self.batch_size):
            chunk = missing[start : start + self.batch_size]
            body = self._post("/embed", {"texts": [t for _, t in chunk]})
            try:
                dim = int(body["dim"])
                vectors = body["vectors"]
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedResponseError(f"/embed response missing dim/vectors: {body!r}") from exc
            if len(vectors) != len(chunk):
                raise MalformedResponseError(
                    f"/embed returned {len(vectors)} vectors for {len(chunk)} texts"
                )
            if self._dim is None:
                self._dim = dim
            elif dim != self._dim:
                raise DimensionDriftError(f"embedding dim changed from {self._dim} to {dim} mid-run")
            for (key, _), vec in zip(chunk, vectors):
                arr = np.asarray(vec, dtype=np.float64)
                if arr.shape != (dim,):
                    raise DimensionDriftError(
                        f"vector of shape {arr.shape} does not match declared dim {dim}"
                    )
                self._embed_cache[key] = EmbeddingVector(values=arr)
        return [self._embed_cache[text_hash(t)] for t in texts]

    def relevance(self, query_text: str, item_text: str) -> float:
        return self.relevance_batch([(query_text, item_text)])[0]

    def relevance_batch(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        keyed = [(text_hash(q), text_hash(i), q, i) for q, i in pairs]
        missing = []
        seen = set()
        for qk, ik, q, i in keyed:
            if (qk, ik) not in self._relevance_cache and (qk, ik) not in seen:
                seen.add((qk, ik))
                missing.append((qk, ik, q, i))
        for start in range(0, len(missing), self.batch_size):
            chunk = missing[start : start + self.batch_size]
            body = self._post(
                "/relevance", {"pairs": [{"query": q, "item": i} for _, _, q, i in chunk]}
            )
            scores = body.get("scores")
            if not isinstance(scores, list) or len(scores) != len(chunk):
                raise MalformedResponseError(f"/relevance returned malformed scores: {body!r}")
            for (qk, ik, _, _), s in zip(chunk, scores):
                s = float(s)
                if not 0.0 <= s <= 1.0:
                    raise RelevanceRangeError(f"relevance {s} outside [0, 1]")
                self._relevance_cache[(qk, ik)] = s
        return [self._relevance_cache[(qk, ik)] for qk, ik, _, _ in keyed]


def remote_backend(
    endpoint: str,
    timeout: float = 30.0,
    batch_size: int = 32,
    identity: str | None = None,
    client: httpx.Client | None = None,
) -> RemoteBackend:
    return RemoteBackend(endpoint, timeout=timeout, batch_size=batch_size, identity=identity, client=client)


# --- embedding fixture file: header {dim, identity}, then hash/vector records ---

def write_embedding_file(
    path: str | Path,
    dim: int,
    identity: str,
    records: Iterable[tuple[str, np.ndarray]],
) -> None:
    records = list(records)
    buf = io.BytesIO()
    buf.write(_EMB_MAGIC)
    header = json.dumps({"version": 1, "dim": dim, "backend_identity": identity, "count": len(records)}).encode("utf-8")
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for hash_hex, values in records:
        if values.shape != (dim,):
            raise DimensionMismatchError(f"record {hash_hex} has shape {values.shape}, expected ({dim},)")
        buf.write(bytes.fromhex(hash_hex))
        buf.write(np.ascontiguousarray(values, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_embedding_file(path: str | Path) -> tuple[int, str, dict[str, EmbeddingVector]]:
    raw = Path(path).read_bytes()
    buf = io.BytesIO(raw)
    if buf.read(len(_EMB_MAGIC)) != _EMB_MAGIC:
        raise IndexFormatError(f"{path}: not an embedding fixture file")
    (hlen,) = struct.unpack("<I", buf.read(4))
    header = json.loads(buf.read(hlen).decode("utf-8"))
    if header.get("version") != 1:
        raise IndexFormatError(f"{path}: unsupported embedding file version")
    dim = int(header["dim"])
    identity = header["backend_identity"]
    table: dict[str, EmbeddingVector] = {}
    record_bytes = 32 + 8 * dim
    for _ in range(int(header["count"])):
        chunk = buf.read(record_bytes)
        if len(chunk) != record_bytes:
            raise IndexFormatError(f"{path}: truncated embedding record")
        key = chunk[:32].hex()
        values = np.frombuffer(chunk[32:], dtype="<f8").astype(np.float64)
        table[key] = EmbeddingVector(values=values)
    return dim, identity, table


def load_fixture_backend(path: str | Path) -> FixtureBackend:
    dim, identity, table = read_embedding_file(path)
    return FixtureBackend(table, identity=identity)
