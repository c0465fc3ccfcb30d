"""Annotation service endpoints, sessions, and export round trip."""

from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from ttpmap.evaluation import load_dataset
from ttpmap.pipeline import annotate, result_to_dict
from ttpmap.service import create_app, split_passages

REPORT = (
    "The actor executed a malicious PowerShell script through the interpreter.\n\n"
    "Persistence was established with a scheduled task running at boot.\n\n"
    "A spearphishing email delivered the attachment to the victim."
)


@pytest.fixture()
def client(artifacts, config, tmp_path):
    app = create_app(artifacts, config, session_db=tmp_path / "sessions.db")
    with TestClient(app) as c:
        yield c


class TestSplitPassages:
    def test_paragraphs(self):
        assert len(split_passages(REPORT)) == 3

    def test_sentences(self):
        text = "First thing happened. Then another. Finally done."
        assert len(split_passages(text, "sentence")) == 3

    def test_none_mode(self):
        assert split_passages(REPORT, "none") == [REPORT.strip()]

    def test_blank_input(self):
        assert split_passages("   \n\n  ") == []


class TestAnnotateEndpoint:
    def test_matches_library_call(self, client, artifacts, config):
        text = "Persistence was established with a scheduled task"
        body = client.post("/annotate", json={"text": text, "evidence": False}).json()
        direct = result_to_dict(
            annotate(config, artifacts, text), catalog=artifacts.catalog
        )
        assert body["final"] == direct["final"]
        assert body["normalized_text"] == direct["normalized_text"]

    def test_empty_text_400(self, client):
        assert client.post("/annotate", json={"text": "   "}).status_code == 400

    def test_k_limits_results(self, client):
        body = client.post(
            "/annotate", json={"text": "scheduled task persistence", "k": 3}
        ).json()
        assert len(body["final"]) <= 3

    def test_ioc_only_422(self, client):
        response = client.post("/annotate", json={"text": "10.20.30.40 1.2.3.4"})
        assert response.status_code == 422
        assert "warnings" in response.json()["detail"]

    def test_per_stage_included_on_request(self, client):
        body = client.post(
            "/annotate", json={"text": "phishing email attachment", "per_stage": True}
        ).json()
        assert set(body["per_stage"]) == {"1", "2", "3"}

    def test_evidence_for_top_candidates(self, client):
        body = client.post(
            "/annotate", json={"text": "spearphishing email with attachment"}
        ).json()
        assert body["final"]
        top = body["final"][0]["technique_id"]
        assert top in body["evidence"]
        assert body["evidence"][top][0]["pair_prefix"].startswith("Query:")

    def test_oversize_413(self, artifacts, config, tmp_path):
        app = create_app(artifacts, config, session_db=tmp_path / "s.db", max_text_bytes=64)
        with TestClient(app) as client:
            assert (
                client.post("/annotate", json={"text": "x" * 100}).status_code == 413
            )


class TestCatalogEndpoints:
    def test_list_count_matches_catalog(self, client, artifacts):
        body = client.get("/techniques").json()
        assert len(body) == len(artifacts.catalog)

    def test_get_technique(self, client):
        body = client.get("/techniques/T1071").json()
        assert body["title"] == "Application Layer Protocol"
        assert body["procedure_source_refs"] == ["RPT-001", "RPT-002"]

    def test_unknown_404(self, client):
        assert client.get("/techniques/T4242").status_code == 404

    def test_items_match_items_for(self, client, artifacts):
        for profile in ("stage2", "stage3"):
            body = client.get(f"/techniques/T1059/items?profile={profile}").json()
            want = artifacts.catalog.items_for("T1059", profile)
            assert [i["item_id"] for i in body] == [i.item_id for i in want]


class TestSessions:
    def test_full_workflow_export_round_trip(self, client, tmp_path):
        session = client.post("/sessions").json()["session_id"]
        cards = client.post(
            f"/sessions/{session}/passages", json={"text": REPORT}
        ).json()
        assert len(cards) == 3

        # accept the top candidate on two passages, reject one on the third
        accepted = {}
        for card in cards[:2]:
            top = card["result"]["final"][0]["technique_id"]
            accepted[card["passage_id"]] = top
            response = client.post(
                f"/sessions/{session}/decisions",
                json={
                    "passage_id": card["passage_id"],
                    "technique_id": top,
                    "verdict": "accepted",
                },
            )
            assert response.status_code == 200
        reject_target = cards[2]["result"]["final"][0]["technique_id"]
        client.post(
            f"/sessions/{session}/decisions",
            json={
                "passage_id": cards[2]["passage_id"],
                "technique_id": reject_target,
                "verdict": "rejected",
            },
        )

        response = client.get(f"/sessions/{session}/export")
        assert response.status_code == 200
        assert session in response.headers["content-disposition"]
        out = tmp_path / "export.jsonl"
        out.write_text(response.text, encoding="utf-8")
        records = load_dataset(out)
        assert len(records) == 2
        for record in records:
            assert record.labels == (accepted[record.record_id],)
            assert record.text in REPORT

    def test_latest_verdict_wins(self, client):
        session = client.post("/sessions").json()["session_id"]
        cards = client.post(
            f"/sessions/{session}/passages", json={"text": "scheduled task persistence"}
        ).json()
        pid = cards[0]["passage_id"]
        tid = cards[0]["result"]["final"][0]["technique_id"]
        for verdict in ("accepted", "rejected", "accepted"):
            client.post(
                f"/sessions/{session}/decisions",
                json={"passage_id": pid, "technique_id": tid, "verdict": verdict},
            )
        decisions = client.get(f"/sessions/{session}/decisions").json()
        assert decisions == [{"passage_id": pid, "technique_id": tid, "verdict": "accepted"}]

    def test_empty_session_exports_empty(self, client):
        session = client.post("/sessions").json()["session_id"]
        response = client.get(f"/sessions/{session}/export")
        assert response.status_code == 200
        assert response.text == ""

    def test_unknown_session_404(self, client):
        assert client.post("/sessions/nope/passages", json={"text": "x"}).status_code == 404
        assert client.get("/sessions/nope/export").status_code == 404

    def test_unknown_passage_409(self, client):
        session = client.post("/sessions").json()["session_id"]
        response = client.post(
            f"/sessions/{session}/decisions",
            json={"passage_id": "ghost", "technique_id": "T1059", "verdict": "accepted"},
        )
        assert response.status_code == 409

    def test_sessions_persist_across_app_restarts(self, artifacts, config, tmp_path):
        db = tmp_path / "persist.db"
        with TestClient(create_app(artifacts, config, session_db=db)) as client:
            session = client.post("/sessions").json()["session_id"]
            client.post(f"/sessions/{session}/passages", json={"text": "scheduled task"})
        with TestClient(create_app(artifacts, config, session_db=db)) as client:
            body = client.get(f"/sessions/{session}/passages").json()
            assert len(body) == 1


class TestAuthAndSchema:
    def test_bearer_token_required_when_configured(self, artifacts, config, tmp_path):
        app = create_app(artifacts, config, session_db=tmp_path / "s.db", api_token="sesame")
        with TestClient(app) as client:
            assert client.get("/techniques").status_code == 401
            ok = client.get("/techniques", headers={"Authorization": "Bearer sesame"})
            assert ok.status_code == 200

    def test_schema_endpoint(self, client):
        body = client.get("/schema").json()
        assert body["version"] == 1
        assert "annotate_request" in body
        assert body["dataset_row"]["required"] == ["id", "text", "labels", "source"]
