"""Catalog loading and window segmentation."""

from __future__ import annotations

import json
import random

import pytest

from ttpmap.corpus import (
    STAGE2_PROFILE,
    STAGE3_PROFILE,
    WindowProfile,
    load_catalog,
    parent_technique_id,
    segment,
)
from ttpmap.errors import (
    ConfigurationError,
    CorpusFormatError,
    DuplicateTechniqueError,
    UnknownTechniqueError,
)
from ttpmap.tokenize import DEFAULT_TOKENIZER

from conftest import synth_docs, toy_docs


def naive_windows(n_tokens: int, window: int, stride: int) -> list[tuple[int, int]]:
    """Independent enumeration oracle, including last-window clamping."""
    if n_tokens == 0:
        return []
    if n_tokens <= window:
        return [(0, n_tokens)]
    spans = []
    start = 0
    while start + window < n_tokens:
        spans.append((start, start + window))
        start += stride
    spans.append((n_tokens - window, n_tokens))
    return spans


class TestSegment:
    def test_shorter_than_window_single_span(self):
        text = " ".join(["tok"] * 100)
        assert [s for s, _ in segment(text, 512, 128)] == [(0, 100)]

    def test_clamped_last_window(self):
        text = " ".join(["tok"] * 600)
        assert [s for s, _ in segment(text, 512, 128)] == [(0, 512), (88, 600)]

    def test_exact_fit(self):
        text = " ".join(["tok"] * 250)
        assert [s for s, _ in segment(text, 250, 125)] == [(0, 250)]

    def test_empty_text(self):
        assert segment("", 512, 128) == []

    def test_invalid_parameters(self):
        with pytest.raises(ConfigurationError):
            segment("a b c", 0, 1)
        with pytest.raises(ConfigurationError):
            segment("a b c", 10, 0)
        with pytest.raises(ConfigurationError):
            segment("a b c", 10, 11)

    def test_matches_enumeration_oracle(self):
        rng = random.Random(42)
        for _ in range(300):
            window = rng.randint(1, 600)
            stride = rng.randint(1, window)
            n = rng.randint(0, 1500)
            text = " ".join(f"w{i}" for i in range(n))
            got = [s for s, _ in segment(text, window, stride)]
            assert got == naive_windows(n, window, stride), (n, window, stride)

    def test_spans_cover_every_token(self):
        rng = random.Random(7)
        for _ in range(100):
            window = rng.randint(1, 64)
            stride = rng.randint(1, window)
            n = rng.randint(1, 300)
            text = " ".join(f"w{i}" for i in range(n))
            covered = set()
            for (s, e), _ in segment(text, window, stride):
                assert e - s <= window
                covered.update(range(s, e))
            assert covered == set(range(n))

    def test_segment_text_matches_token_slice(self):
        text = "alpha beta, gamma; delta epsilon zeta"
        tokens = DEFAULT_TOKENIZER.tokenize(text)
        for (s, e), seg_text in segment(text, 3, 2):
            assert seg_text == text[tokens[s].start : tokens[e - 1].end]


class TestLoadCatalog:
    def test_full_catalog_count(self):
        catalog = load_catalog(synth_docs(193))
        assert len(catalog) == 193

    def test_empty_source(self):
        catalog = load_catalog([])
        assert len(catalog) == 0
        assert catalog.items["stage2"] == []
        assert catalog.items["stage3"] == []

    def test_600_token_technique_item_counts(self):
        text = " ".join(f"w{i}" for i in range(600))
        docs = [
            {
                "id": "T1001",
                "title": "Long One",
                "sections": [{"kind": "description", "text": text, "source_ref": None}],
            }
        ]
        catalog = load_catalog(docs)
        stage2_items = catalog.items_for("T1001", "stage2")
        stage3_items = catalog.items_for("T1001", "stage3")
        assert len(stage2_items) == 2
        assert [it.token_span for it in stage2_items] == [(0, 512), (88, 600)]
        assert len(stage3_items) == 4

    def test_empty_text_technique_has_no_items(self):
        catalog = load_catalog(toy_docs())
        assert catalog.items_for("T1600", "stage2") == []
        assert catalog.items_for("T1600", "stage3") == []
        assert "T1600" in catalog.techniques

    def test_unknown_technique(self):
        catalog = load_catalog(toy_docs())
        with pytest.raises(UnknownTechniqueError):
            catalog.items_for("T9999", "stage2")

    def test_items_carry_owner(self):
        catalog = load_catalog(toy_docs())
        for profile in ("stage2", "stage3"):
            for tid in catalog.techniques:
                for item in catalog.items_for(tid, profile):
                    assert item.technique_id == tid
                    assert item.window_profile == profile

    def test_duplicate_technique_rejected_with_locations(self):
        docs = toy_docs()
        docs.append(dict(docs[0]))
        with pytest.raises(DuplicateTechniqueError) as excinfo:
            load_catalog(docs)
        message = str(excinfo.value)
        assert "record 0" in message and f"record {len(docs) - 1}" in message

    @pytest.mark.parametrize(
        "doc, fragment",
        [
            ({"id": "bogus", "title": "x", "sections": []}, "invalid technique id"),
            ({"id": "T1059", "title": "", "sections": []}, "title"),
            (
                {"id": "T1059", "title": "x", "sections": [{"kind": "weird", "text": "y"}]},
                "unknown kind",
            ),
            (
                {
                    "id": "T1059",
                    "title": "x",
                    "sections": [{"kind": "description", "text": "y", "source_ref": "R1"}],
                },
                "procedure-example",
            ),
        ],
    )
    def test_malformed_documents_name_the_record(self, doc, fragment):
        with pytest.raises(CorpusFormatError) as excinfo:
            load_catalog([doc])
        assert fragment in str(excinfo.value)
        assert "record 0" in str(excinfo.value)

    def test_load_is_deterministic(self):
        a = load_catalog(toy_docs())
        b = load_catalog(toy_docs())
        assert a.digest == b.digest
        for profile in ("stage2", "stage3"):
            assert [i.item_id for i in a.items[profile]] == [i.item_id for i in b.items[profile]]
            assert [i.text for i in a.items[profile]] == [i.text for i in b.items[profile]]

    def test_item_ids_unique_and_structured(self):
        catalog = load_catalog(toy_docs())
        ids = [i.item_id for p in catalog.items.values() for i in p]
        assert len(ids) == len(set(ids))
        for item_id in ids:
            tid, profile, kind, ordinal = item_id.rsplit("/", 3)
            assert tid in catalog.techniques
            assert profile in ("stage2", "stage3")
            assert ordinal.isdigit()

    def test_item_index_inverts_ownership(self):
        catalog = load_catalog(toy_docs())
        for profile in ("stage2", "stage3"):
            index = catalog.item_index(profile)
            for tid, item_ids in index.items():
                assert [i.item_id for i in catalog.items_for(tid, profile)] == item_ids

    def test_file_roundtrip_jsonl_and_array(self, tmp_path):
        docs = toy_docs()
        jsonl = tmp_path / "corpus.jsonl"
        jsonl.write_text("\n".join(json.dumps(d) for d in docs), encoding="utf-8")
        array = tmp_path / "corpus.json"
        array.write_text(json.dumps(docs), encoding="utf-8")
        assert load_catalog(jsonl).digest == load_catalog(array).digest

    def test_sections_segment_independently(self):
        # two sections shorter than one window -> one item each, never merged
        docs = [
            {
                "id": "T1002",
                "title": "Two Sections",
                "sections": [
                    {"kind": "description", "text": "alpha " * 30, "source_ref": None},
                    {"kind": "detection", "text": "beta " * 30, "source_ref": None},
                ],
            }
        ]
        catalog = load_catalog(docs)
        items = catalog.items_for("T1002", "stage2")
        assert [i.section_kind for i in items] == ["description", "detection"]
        assert all(i.token_span == (0, 30) for i in items)


class TestRoundTrip:
    def test_section_token_round_trip(self):
        # union of span token indices reproduces the section token sequence
        catalog = load_catalog(toy_docs())
        tech = catalog.techniques["T1059"]
        for profile_name, profile in (("stage2", STAGE2_PROFILE), ("stage3", STAGE3_PROFILE)):
            for section in tech.sections:
                tokens = DEFAULT_TOKENIZER.tokenize(section.text)
                spans = [s for s, _ in segment(section.text, profile.window, profile.stride)]
                rebuilt: dict[int, str] = {}
                for s, e in spans:
                    for i in range(s, e):
                        rebuilt[i] = tokens[i].text
                assert [rebuilt[i] for i in sorted(rebuilt)] == [t.text for t in tokens]


def test_window_profile_validation():
    with pytest.raises(ConfigurationError):
        WindowProfile("bad", 0, 1)
    with pytest.raises(ConfigurationError):
        WindowProfile("bad", 10, 20)


def test_parent_technique_id():
    assert parent_technique_id("T1059.003") == "T1059"
    assert parent_technique_id("T1059") == "T1059"
