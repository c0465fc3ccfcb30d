"""STIX bundle conversion into the corpus format."""

from __future__ import annotations

import json

import pytest

from ttpmap.corpus import load_catalog
from ttpmap.errors import CorpusFormatError
from ttpmap.stix import convert_stix_bundle, convert_stix_file


def make_bundle():
    return {
        "type": "bundle",
        "id": "bundle--0001",
        "objects": [
            {
                "type": "attack-pattern",
                "id": "attack-pattern--aaa",
                "name": "Command and Scripting Interpreter",
                "description": "Adversaries may abuse command interpreters.",
                "x_mitre_detection": "Monitor process creation.",
                "external_references": [
                    {"source_name": "mitre-attack", "external_id": "T1059", "url": "https://x"}
                ],
            },
            {
                "type": "attack-pattern",
                "id": "attack-pattern--bbb",
                "name": "Old Revoked Thing",
                "revoked": True,
                "external_references": [
                    {"source_name": "mitre-attack", "external_id": "T9999"}
                ],
            },
            {
                "type": "attack-pattern",
                "id": "attack-pattern--ccc",
                "name": "Deprecated Thing",
                "x_mitre_deprecated": True,
                "external_references": [
                    {"source_name": "mitre-attack", "external_id": "T9998"}
                ],
            },
            {
                "type": "course-of-action",
                "id": "course-of-action--m1",
                "name": "Execution Prevention",
                "description": "Block execution of unsigned scripts.",
            },
            {
                "type": "relationship",
                "id": "relationship--r1",
                "relationship_type": "mitigates",
                "source_ref": "course-of-action--m1",
                "target_ref": "attack-pattern--aaa",
            },
            {
                "type": "relationship",
                "id": "relationship--r2",
                "relationship_type": "uses",
                "source_ref": "malware--zzz",
                "target_ref": "attack-pattern--aaa",
                "description": "The malware ran encoded commands via the interpreter.",
                "external_references": [{"source_name": "Vendor Report 42", "url": "https://r"}],
            },
            {
                "type": "relationship",
                "id": "relationship--r3",
                "relationship_type": "uses",
                "source_ref": "intrusion-set--yyy",
                "target_ref": "attack-pattern--bbb",
                "description": "Should vanish with its revoked technique.",
            },
        ],
    }


class TestConvert:
    def test_basic_conversion(self):
        docs = convert_stix_bundle(make_bundle())
        assert len(docs) == 1
        doc = docs[0]
        assert doc["id"] == "T1059"
        assert doc["title"] == "Command and Scripting Interpreter"
        kinds = [s["kind"] for s in doc["sections"]]
        assert kinds == ["description", "detection", "mitigation", "procedure-example"]

    def test_procedure_example_carries_source_ref(self):
        docs = convert_stix_bundle(make_bundle())
        proc = [s for s in docs[0]["sections"] if s["kind"] == "procedure-example"]
        assert proc[0]["source_ref"] == "Vendor Report 42"

    def test_revoked_and_deprecated_skipped(self):
        docs = convert_stix_bundle(make_bundle())
        assert {d["id"] for d in docs} == {"T1059"}

    def test_output_loads_as_catalog(self, tmp_path):
        bundle_path = tmp_path / "bundle.json"
        bundle_path.write_text(json.dumps(make_bundle()))
        out = tmp_path / "corpus.jsonl"
        count = convert_stix_file(bundle_path, out)
        assert count == 1
        catalog = load_catalog(out)
        assert "T1059" in catalog.techniques
        assert catalog.items_for("T1059", "stage2")

    def test_missing_objects_rejected(self):
        with pytest.raises(CorpusFormatError):
            convert_stix_bundle({"type": "bundle"})

    def test_deterministic_order(self):
        bundle = make_bundle()
        bundle["objects"].append(
            {
                "type": "attack-pattern",
                "id": "attack-pattern--ddd",
                "name": "Another",
                "description": "Something else entirely.",
                "external_references": [
                    {"source_name": "mitre-attack", "external_id": "T1003"}
                ],
            }
        )
        docs = convert_stix_bundle(bundle)
        assert [d["id"] for d in docs] == ["T1003", "T1059"]
