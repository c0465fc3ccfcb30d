"""Converter from the public knowledge base's STIX bundle layout to the
corpus JSON format. The engine itself only ever reads the corpus format.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import CorpusFormatError


def _external_id(obj: dict) -> str | None:
    for ref in obj.get("external_references", []):
        if ref.get("source_name") == "mitre-attack" and ref.get("external_id"):
            return ref["external_id"]
    return None


def _is_active(obj: dict) -> bool:
    return not obj.get("revoked", False) and not obj.get("x_mitre_deprecated", False)


def convert_stix_bundle(bundle: dict) -> list[dict]:
    """Flatten attack-pattern objects plus their 'uses'/'mitigates'
    relationships into one corpus document per technique, sorted by id.
    """
    objects = bundle.get("objects")
    if not isinstance(objects, list):
        raise CorpusFormatError("STIX bundle has no 'objects' list")

    patterns: dict[str, dict] = {}  # stix id -> attack-pattern
    courses: dict[str, dict] = {}
    relationships: list[dict] = []
    for obj in objects:
        kind = obj.get("type")
        if kind == "attack-pattern" and _is_active(obj):
            patterns[obj["id"]] = obj
        elif kind == "course-of-action" and _is_active(obj):
            courses[obj["id"]] = obj
        elif kind == "relationship" and _is_active(obj):
            relationships.append(obj)

    sections_extra: dict[str, list[dict]] = {sid: [] for sid in patterns}
    for rel in relationships:
        target = rel.get("target_ref", "")
        if target not in patterns:
            continue
        rel_type = rel.get("relationship_type")
        description = rel.get("description") or ""
        if rel_type == "uses" and description:
            source_ref = None
            for ext in rel.get("external_references", []):
                if ext.get("source_name"):
                    source_ref = ext["source_name"]
                    break
            sections_extra[target].append(
                {"kind": "procedure-example", "text": description, "source_ref": source_ref}
            )
        elif rel_type == "mitigates":
            text = description or courses.get(rel.get("source_ref", ""), {}).get("description", "")
            if text:
                sections_extra[target].append(
                    {"kind": "mitigation", "text": text, "source_ref": None}
                )

    docs = []
    for sid, pattern in patterns.items():
        technique_id = _external_id(pattern)
        if technique_id is None:
            continue
        sections = []
        if pattern.get("description"):
            sections.append({"kind": "description", "text": pattern["description"], "source_ref": None})
        if pattern.get("x_mitre_detection"):
            sections.append({"kind": "detection", "text": pattern["x_mitre_detection"], "source_ref": None})
        sections.extend(
            sorted(
                sections_extra[sid],
                key=lambda s: (s["kind"], s["text"]),
            )
        )
        docs.append({"id": technique_id, "title": pattern.get("name", ""), "sections": sections})
    docs.sort(key=lambda d: d["id"])
    return docs


def convert_stix_file(bundle_path: str | Path, out_path: str | Path) -> int:
    """Read a STIX bundle JSON file, write corpus JSONL; returns doc count."""
    bundle = json.loads(Path(bundle_path).read_text(encoding="utf-8"))
    docs = convert_stix_bundle(bundle)
    with open(out_path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc, ensure_ascii=False) + "\n")
    return len(docs)
