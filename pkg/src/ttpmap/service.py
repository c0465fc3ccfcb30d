"""HTTP annotation service: pipeline access, catalog browsing, and
annotation-session persistence backing the review UI.

Sessions live in an embedded SQLite file (WAL journaling) so the tool
stays zero-ops; accepted decisions export in the evaluation dataset
format, closing the loop from review back to training data.
"""

from __future__ import annotations

import datetime as _dt
import json
import re
import sqlite3
import threading
import uuid
from pathlib import Path
from typing import Literal

from fastapi import Depends, FastAPI, HTTPException, Request, Response
from pydantic import BaseModel, Field

from .errors import BackendError, RemoteBackendError, UnknownTechniqueError
from .pipeline import Artifacts, PipelineConfig, annotate, result_to_dict
from .stage3 import explain

SCHEMA_VERSION = 1

_PARAGRAPH_RE = re.compile(r"\n\s*\n")
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+(?=[A-Z0-9])")


def split_passages(text: str, mode: str = "paragraph") -> list[str]:
    """Blank-line paragraphs by default; optional sentence splitting."""
    if mode == "none":
        parts = [text]
    elif mode == "paragraph":
        parts = _PARAGRAPH_RE.split(text)
    elif mode == "sentence":
        parts = []
        for para in _PARAGRAPH_RE.split(text):
            parts.extend(_SENTENCE_RE.split(para))
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    return [p.strip() for p in parts if p.strip()]


class SessionStore:
    """Single-file session persistence; writes serialized per session."""

    def __init__(self, path: str | Path = ":memory:"):
        self._conn = sqlite3.connect(str(path), check_same_thread=False)
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA synchronous=NORMAL")
        self._lock = threading.RLock()
        with self._lock, self._conn:
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS sessions ("
                " session_id TEXT PRIMARY KEY, created_at TEXT NOT NULL)"
            )
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS passages ("
                " passage_id TEXT PRIMARY KEY, session_id TEXT NOT NULL,"
                " position INTEGER NOT NULL, raw_text TEXT NOT NULL,"
                " normalized_text TEXT NOT NULL, result_json TEXT NOT NULL)"
            )
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS decisions ("
                " id INTEGER PRIMARY KEY AUTOINCREMENT, session_id TEXT NOT NULL,"
                " passage_id TEXT NOT NULL, technique_id TEXT NOT NULL,"
                " verdict TEXT NOT NULL, decided_at TEXT NOT NULL)"
            )

    def create_session(self) -> dict:
        session_id = uuid.uuid4().hex
        created = _dt.datetime.now(_dt.timezone.utc).isoformat()
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO sessions VALUES (?, ?)", (session_id, created)
            )
        return {"session_id": session_id, "created_at": created}

    def session_exists(self, session_id: str) -> bool:
        with self._lock:
            row = self._conn.execute(
                "SELECT 1 FROM sessions WHERE session_id = ?", (session_id,)
            ).fetchone()
        return row is not None

    def add_passage(self, session_id: str, raw_text: str, normalized_text: str, result: dict) -> str:
        with self._lock, self._conn:
            (count,) = self._conn.execute(
                "SELECT COUNT(*) FROM passages WHERE session_id = ?", (session_id,)
            ).fetchone()
            passage_id = f"{session_id[:8]}-p{count}"
            self._conn.execute(
                "INSERT INTO passages VALUES (?, ?, ?, ?, ?, ?)",
                (passage_id, session_id, count, raw_text, normalized_text, json.dumps(result)),
            )
        return passage_id

    def passage_exists(self, session_id: str, passage_id: str) -> bool:
        with self._lock:
            row = self._conn.execute(
                "SELECT 1 FROM passages WHERE session_id = ? AND passage_id = ?",
                (session_id, passage_id),
            ).fetchone()
        return row is not None

    def passages(self, session_id: str) -> list[dict]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT passage_id, raw_text, normalized_text, result_json"
                " FROM passages WHERE session_id = ? ORDER BY position",
                (session_id,),
            ).fetchall()
        return [
            {
                "passage_id": pid,
                "raw_text": raw,
                "normalized_text": norm,
                "result": json.loads(result),
            }
            for pid, raw, norm, result in rows
        ]

    def record_decision(self, session_id: str, passage_id: str, technique_id: str, verdict: str) -> dict:
        decided = _dt.datetime.now(_dt.timezone.utc).isoformat()
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO decisions (session_id, passage_id, technique_id, verdict, decided_at)"
                " VALUES (?, ?, ?, ?, ?)",
                (session_id, passage_id, technique_id, verdict, decided),
            )
        return {
            "passage_id": passage_id,
            "technique_id": technique_id,
            "verdict": verdict,
            "decided_at": decided,
        }

    def latest_decisions(self, session_id: str) -> dict[tuple[str, str], str]:
        """(passage_id, technique_id) -> latest verdict; history retained."""
        with self._lock:
            rows = self._conn.execute(
                "SELECT passage_id, technique_id, verdict FROM decisions"
                " WHERE session_id = ? ORDER BY id",
                (session_id,),
            ).fetchall()
        latest: dict[tuple[str, str], str] = {}
        for passage_id, technique_id, verdict in rows:
            latest[(passage_id, technique_id)] = verdict
        return latest

    def export_jsonl(self, session_id: str) -> str:
        """Accepted decisions as evaluation dataset rows, one per passage."""
        latest = self.latest_decisions(session_id)
        lines = []
        for passage in self.passages(session_id):
            accepted = sorted(
                tid
                for (pid, tid), verdict in latest.items()
                if pid == passage["passage_id"] and verdict == "accepted"
            )
            if not accepted:
                continue
            lines.append(
                json.dumps(
                    {
                        "id": passage["passage_id"],
                        "text": passage["raw_text"],
                        "labels": accepted,
                        "source": "other",
                        "report_ref": None,
                    },
                    ensure_ascii=False,
                )
            )
        return "\n".join(lines) + ("\n" if lines else "")


class AnnotateBody(BaseModel):
    text: str
    k: int | None = Field(default=None, ge=1)
    per_stage: bool = False
    evidence: bool = True


class PassagesBody(BaseModel):
    text: str
    split: Literal["paragraph", "sentence", "none"] = "paragraph"


class DecisionBody(BaseModel):
    passage_id: str
    technique_id: str
    verdict: Literal["accepted", "rejected"]


def create_app(
    artifacts: Artifacts,
    config: PipelineConfig,
    session_db: str | Path = ":memory:",
    api_token: str | None = None,
    max_text_bytes: int = 262_144,
) -> FastAPI:
    app = FastAPI(title="ttpmap annotation service", version=str(SCHEMA_VERSION))
    store = SessionStore(session_db)
    app.state.store = store
    app.state.artifacts = artifacts
    app.state.config = config

    def auth(request: Request) -> None:
        if api_token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {api_token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    def run_annotation(text: str, per_stage: bool, k: int | None, evidence: bool) -> dict:
        if not text.strip():
            raise HTTPException(status_code=400, detail="text must be non-empty")
        if len(text.encode("utf-8")) > max_text_bytes:
            raise HTTPException(status_code=413, detail=f"text exceeds {max_text_bytes} bytes")
        try:
            result = annotate(config, artifacts, text)
        except RemoteBackendError as exc:
            raise HTTPException(status_code=503, detail=f"scoring backend unavailable: {exc}")
        if not result.final.entries and any("empty after normalization" in w for w in result.warnings):
            raise HTTPException(
                status_code=422,
                detail={"warnings": result.warnings, "message": "query is empty after normalization"},
            )
        body = result_to_dict(result, catalog=artifacts.catalog, per_stage=per_stage, timings=True)
        if k is not None:
            body["final"] = body["final"][:k]
        if evidence:
            ev = {}
            for row in body["final"]:
                tid = row["technique_id"]
                try:
                    rows = explain(
                        result.normalized.text,
                        tid,
                        artifacts.mono_backend,
                        artifacts.catalog,
                        profile=config.stage3_profile,
                        template=config.template(),
                    )
                except BackendError as exc:
                    raise HTTPException(status_code=503, detail=str(exc))
                ev[tid] = [
                    {"item_id": iid, "relevance": score, "pair_prefix": prefix}
                    for iid, score, prefix in rows[:3]
                ]
            body["evidence"] = ev
        return body

    @app.post("/annotate")
    def post_annotate(body: AnnotateBody, _: None = Depends(auth)) -> dict:
        return run_annotation(body.text, body.per_stage, body.k, body.evidence)

    @app.get("/techniques")
    def list_techniques(_: None = Depends(auth)) -> list[dict]:
        return [
            {"id": t.id, "title": t.title, "n_sections": len(t.sections)}
            for t in artifacts.catalog.techniques.values()
        ]

    @app.get("/techniques/{technique_id}")
    def get_technique(technique_id: str, _: None = Depends(auth)) -> dict:
        try:
            tech = artifacts.catalog.technique(technique_id)
        except UnknownTechniqueError:
            raise HTTPException(status_code=404, detail=f"unknown technique {technique_id!r}")
        return {
            "id": tech.id,
            "title": tech.title,
            "sections": [
                {"kind": s.kind, "text": s.text, "source_ref": s.source_ref} for s in tech.sections
            ],
            "procedure_source_refs": tech.procedure_source_refs,
        }

    @app.get("/techniques/{technique_id}/items")
    def get_items(technique_id: str, profile: str = "stage2", _: None = Depends(auth)) -> list[dict]:
        try:
            items = artifacts.catalog.items_for(technique_id, profile)
        except UnknownTechniqueError:
            raise HTTPException(status_code=404, detail=f"unknown technique {technique_id!r}")
        return [
            {
                "item_id": it.item_id,
                "section_kind": it.section_kind,
                "token_span": list(it.token_span),
                "text": it.text,
            }
            for it in items
        ]

    @app.post("/sessions", status_code=201)
    def create_session(_: None = Depends(auth)) -> dict:
        return store.create_session()

    @app.post("/sessions/{session_id}/passages")
    def add_passages(session_id: str, body: PassagesBody, _: None = Depends(auth)) -> list[dict]:
        if not store.session_exists(session_id):
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        passages = split_passages(body.text, body.split)
        if not passages:
            raise HTTPException(status_code=400, detail="no non-empty passages in text")
        out = []
        for passage in passages:
            result_body = run_annotation(passage, per_stage=False, k=None, evidence=True)
            passage_id = store.add_passage(
                session_id, passage, result_body["normalized_text"], result_body
            )
            out.append(
                {
                    "passage_id": passage_id,
                    "raw_text": passage,
                    "normalized_text": result_body["normalized_text"],
                    "result": result_body,
                }
            )
        return out

    @app.get("/sessions/{session_id}/passages")
    def get_passages(session_id: str, _: None = Depends(auth)) -> list[dict]:
        if not store.session_exists(session_id):
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return store.passages(session_id)

    @app.post("/sessions/{session_id}/decisions")
    def post_decision(session_id: str, body: DecisionBody, _: None = Depends(auth)) -> dict:
        if not store.session_exists(session_id):
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        if not store.passage_exists(session_id, body.passage_id):
            raise HTTPException(status_code=409, detail=f"unknown passage {body.passage_id!r}")
        return store.record_decision(session_id, body.passage_id, body.technique_id, body.verdict)

    @app.get("/sessions/{session_id}/decisions")
    def get_decisions(session_id: str, _: None = Depends(auth)) -> list[dict]:
        if not store.session_exists(session_id):
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return [
            {"passage_id": pid, "technique_id": tid, "verdict": verdict}
            for (pid, tid), verdict in sorted(store.latest_decisions(session_id).items())
        ]

    @app.get("/sessions/{session_id}/export")
    def export_session(session_id: str, _: None = Depends(auth)) -> Response:
        if not store.session_exists(session_id):
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        payload = store.export_jsonl(session_id)
        return Response(
            content=payload,
            media_type="application/x-ndjson",
            headers={
                "Content-Disposition": f'attachment; filename="ttpmap-session-{session_id}.jsonl"'
            },
        )

    @app.get("/schema")
    def get_schema() -> dict:
        return {
            "version": SCHEMA_VERSION,
            "annotate_request": AnnotateBody.model_json_schema(),
            "passages_request": PassagesBody.model_json_schema(),
            "decision_request": DecisionBody.model_json_schema(),
            "dataset_row": {
                "type": "object",
                "required": ["id", "text", "labels", "source"],
                "properties": {
                    "id": {"type": "string"},
                    "text": {"type": "string"},
                    "labels": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                    "source": {
                        "type": "string",
                        "enum": ["attack_reports", "cisa", "tram", "welivesecurity", "other"],
                    },
                    "report_ref": {"type": ["string", "null"]},
                },
            },
        }

    return app
