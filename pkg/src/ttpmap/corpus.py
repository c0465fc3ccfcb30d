"""Technique catalog and segmented text-item corpus.

Loads the corpus JSON format (one document per technique), segments each
section into overlapping token windows under one profile per pipeline
stage, and maintains the technique -> items mapping the rankers aggregate
over.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import (
    ConfigurationError,
    CorpusFormatError,
    DuplicateItemError,
    DuplicateTechniqueError,
    UnknownTechniqueError,
)
from .tokenize import DEFAULT_TOKENIZER, Tokenizer

TECHNIQUE_ID_RE = re.compile(r"^T\d{4}(?:\.\d{3})?$")

SECTION_KINDS = ("description", "detection", "mitigation", "procedure-example")


@dataclass(frozen=True)
class WindowProfile:
    """Segmentation parameters for one pipeline stage."""

    name: str
    window: int
    stride: int

    def __post_init__(self):
        if self.window <= 0 or self.stride <= 0:
            raise ConfigurationError(f"window and stride must be positive, got {self}")
        if self.stride > self.window:
            raise ConfigurationError(f"stride must not exceed window, got {self}")


# Defaults: the retrieval stage shares one corpus with the lexical stage
# (512/128); the reranking stage uses shorter windows (250/125) so a
# query/item pair fits a 512-token budget.
STAGE2_PROFILE = WindowProfile("stage2", 512, 128)
STAGE3_PROFILE = WindowProfile("stage3", 250, 125)
DEFAULT_PROFILES = (STAGE2_PROFILE, STAGE3_PROFILE)


@dataclass(frozen=True)
class Section:
    kind: str
    text: str
    source_ref: str | None = None


@dataclass(frozen=True)
class Technique:
    id: str
    title: str
    sections: tuple[Section, ...]

    @property
    def procedure_source_refs(self) -> list[str]:
        return [
            s.source_ref
            for s in self.sections
            if s.kind == "procedure-example" and s.source_ref
        ]


@dataclass(frozen=True)
class TextItem:
    item_id: str
    technique_id: str
    text: str
    token_span: tuple[int, int]
    section_kind: str
    window_profile: str
    source_ref: str | None = None  # report citation for procedure-example items


def segment(
    text: str,
    window: int,
    stride: int,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
) -> list[tuple[tuple[int, int], str]]:
    """Split `text` into overlapping token windows.

    Span starts advance by `stride`; the final span is clamped backwards so
    it ends exactly at the last token, keeping every window near full size.
    Text shorter than one window yields a single span; empty text yields
    none.
    """
    if window <= 0 or stride <= 0:
        raise ConfigurationError(f"window/stride must be positive, got window={window} stride={stride}")
    if stride > window:
        raise ConfigurationError(f"stride {stride} exceeds window {window}")
    tokens = tokenizer.tokenize(text)
    n = len(tokens)
    if n == 0:
        return []
    spans: list[tuple[int, int]] = []
    if n <= window:
        spans.append((0, n))
    else:
        start = 0
        while True:
            if start + window >= n:
                spans.append((n - window, n))
                break
            spans.append((start, start + window))
            start += stride
    out = []
    for s, e in spans:
        out.append(((s, e), text[tokens[s].start : tokens[e - 1].end]))
    return out


class TechniqueCatalog:
    """Immutable after load; safe for concurrent readers."""

    def __init__(
        self,
        techniques: dict[str, Technique],
        items: dict[str, list[TextItem]],
        digest: str,
        tokenizer_name: str,
        profiles: Sequence[WindowProfile],
    ):
        self.techniques = techniques
        self.items = items  # profile name -> items in document order
        self.digest = digest
        self.tokenizer_name = tokenizer_name
        self.profiles = {p.name: p for p in profiles}
        self._by_item_id: dict[str, TextItem] = {}
        self._index: dict[str, dict[str, list[str]]] = {p: {} for p in items}
        for profile_name, profile_items in items.items():
            for item in profile_items:
                if item.item_id in self._by_item_id:
                    raise DuplicateItemError(f"duplicate item id {item.item_id!r}")
                self._by_item_id[item.item_id] = item
                self._index[profile_name].setdefault(item.technique_id, []).append(item.item_id)

    def __len__(self) -> int:
        return len(self.techniques)

    def technique(self, technique_id: str) -> Technique:
        try:
            return self.techniques[technique_id]
        except KeyError:
            raise UnknownTechniqueError(f"unknown technique id {technique_id!r}") from None

    def item(self, item_id: str) -> TextItem:
        return self._by_item_id[item_id]

    def items_for(self, technique_id: str, profile: str) -> list[TextItem]:
        """All items owned by the technique under the profile, document order."""
        if technique_id not in self.techniques:
            raise UnknownTechniqueError(f"unknown technique id {technique_id!r}")
        if profile not in self.items:
            raise ConfigurationError(f"unknown window profile {profile!r}")
        return [self._by_item_id[i] for i in self._index[profile].get(technique_id, [])]

    def item_index(self, profile: str) -> dict[str, list[str]]:
        return self._index[profile]


def read_corpus_docs(source: str | Path) -> list[dict]:
    """Read technique documents from a JSON array file or JSONL file."""
    path = Path(source)
    raw = path.read_text(encoding="utf-8")
    stripped = raw.lstrip()
    if stripped.startswith("["):
        docs = json.loads(raw)
        if not isinstance(docs, list):
            raise CorpusFormatError(f"{path}: top-level JSON must be a list of technique documents")
        return docs
    docs = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            docs.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    return docs


def _parse_technique(doc: dict, where: str) -> Technique:
    if not isinstance(doc, dict):
        raise CorpusFormatError(f"{where}: technique document must be an object")
    tid = doc.get("id")
    if not isinstance(tid, str) or not TECHNIQUE_ID_RE.match(tid):
        raise CorpusFormatError(f"{where}: invalid technique id {tid!r}")
    title = doc.get("title")
    if not isinstance(title, str) or not title.strip():
        raise CorpusFormatError(f"{where} ({tid}): title must be a non-empty string")
    sections = []
    for i, sec in enumerate(doc.get("sections", [])):
        if not isinstance(sec, dict):
            raise CorpusFormatError(f"{where} ({tid}): section {i} must be an object")
        kind = sec.get("kind")
        if kind not in SECTION_KINDS:
            raise CorpusFormatError(f"{where} ({tid}): section {i} has unknown kind {kind!r}")
        text = sec.get("text")
        if not isinstance(text, str):
            raise CorpusFormatError(f"{where} ({tid}): section {i} text must be a string")
        source_ref = sec.get("source_ref")
        if source_ref is not None and not isinstance(source_ref, str):
            raise CorpusFormatError(f"{where} ({tid}): section {i} source_ref must be a string or null")
        if source_ref is not None and kind != "procedure-example":
            raise CorpusFormatError(
                f"{where} ({tid}): section {i}: source_ref is only valid on procedure-example sections"
            )
        sections.append(Section(kind=kind, text=text, source_ref=source_ref))
    return Technique(id=tid, title=title, sections=tuple(sections))


def _catalog_digest(
    docs: list[dict],
    profiles: Sequence[WindowProfile],
    tokenizer_name: str,
    normalizer_name: str | None,
) -> str:
    payload = {
        "docs": docs,
        "profiles": [[p.name, p.window, p.stride] for p in profiles],
        "tokenizer": tokenizer_name,
        "normalizer": normalizer_name,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_catalog(
    source: str | Path | Iterable[dict],
    profiles: Sequence[WindowProfile] = DEFAULT_PROFILES,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    normalize_text: Callable[[str], str] | None = None,
) -> TechniqueCatalog:
    """Build the catalog and the segmented corpora from technique documents.

    Each section starts a fresh window sequence: crossing section headings
    would blend unrelated contexts. Techniques with no text stay in the
    catalog and own zero items. Loading is deterministic: identical sources
    yield identical catalogs, item ids included.
    """
    if isinstance(source, (str, Path)):
        docs = read_corpus_docs(source)
    else:
        docs = list(source)

    techniques: dict[str, Technique] = {}
    seen_at: dict[str, str] = {}
    parsed: list[Technique] = []
    for idx, doc in enumerate(docs):
        where = f"record {idx}"
        tech = _parse_technique(doc, where)
        if tech.id in seen_at:
            raise DuplicateTechniqueError(
                f"duplicate technique id {tech.id!r}: first at {seen_at[tech.id]}, again at {where}"
            )
        seen_at[tech.id] = where
        parsed.append(tech)

    normalizer_name = None if normalize_text is None else "ioc-normalized"
    digest = _catalog_digest(
        [{"id": d.get("id"), "title": d.get("title"), "sections": d.get("sections", [])} for d in docs],
        profiles,
        tokenizer.name,
        normalizer_name,
    )

    items: dict[str, list[TextItem]] = {p.name: [] for p in profiles}
    for tech in parsed:
        techniques[tech.id] = tech
        for profile in profiles:
            ordinals: dict[str, int] = {}
            for section in tech.sections:
                text = section.text
                if normalize_text is not None:
                    text = normalize_text(text)
                for span, seg_text in segment(text, profile.window, profile.stride, tokenizer):
                    ordinal = ordinals.get(section.kind, 0)
                    ordinals[section.kind] = ordinal + 1
                    items[profile.name].append(
                        TextItem(
                            item_id=f"{tech.id}/{profile.name}/{section.kind}/{ordinal}",
                            technique_id=tech.id,
                            text=seg_text,
                            token_span=span,
                            section_kind=section.kind,
                            window_profile=profile.name,
                            source_ref=section.source_ref,
                        )
                    )

    return TechniqueCatalog(
        techniques=techniques,
        items=items,
        digest=digest,
        tokenizer_name=tokenizer.name,
        profiles=profiles,
    )


def parent_technique_id(technique_id: str) -> str:
    """T1059.003 -> T1059; top-level ids map to themselves."""
    return technique_id.split(".", 1)[0]
