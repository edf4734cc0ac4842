"""FastAPI service wrapping the memory engine.

Sessions are held in process, one state object per session id; the CLI is a
thin client of these endpoints, either over the wire or mounted in-process.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import replace
from pathlib import Path

from fastapi import FastAPI, HTTPException

from .. import evaluation
from ..config import EngineConfig
from ..errors import (
    GatewayError,
    ParseError,
    RepoMemError,
    SchemaError,
    ScriptExhausted,
    VersionError,
)
from ..orchestrator import SessionState, new_session, replay_benchmark, run_round
from ..repo_index import index_repository, key_to_dict
from ..store import inspect_store, load_store, save_store
from .schemas import (
    BlockManifestEntry,
    ConfigModel,
    EvalRequest,
    IndexRequest,
    IndexResponse,
    ReplayRequest,
    ReportResponse,
    RoundRequest,
    RoundResponse,
    SessionCreateRequest,
    SessionSummary,
    StorePathRequest,
)


def _engine_config(model: ConfigModel) -> EngineConfig:
    try:
        return replace(EngineConfig(), **model.overrides())
    except (TypeError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


def _summary(session_id: str, state: SessionState) -> SessionSummary:
    return SessionSummary(
        session_id=session_id,
        repo_root=state.index.root,
        round=state.round,
        target=state.target,
        memory_namespaces=state.memory.namespaces(),
        sequences={ns: len(seq.blocks) for ns, seq in sorted(state.sessions.items())},
    )


def create_app() -> FastAPI:
    app = FastAPI(title="repomem", version="0.1.0")
    sessions: dict[str, SessionState] = {}
    lock = threading.Lock()

    def get_session(session_id: str) -> SessionState:
        state = sessions.get(session_id)
        if state is None:
            raise HTTPException(status_code=404, detail=f"unknown session: {session_id}")
        return state

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "sessions": len(sessions)}

    @app.post("/index", response_model=IndexResponse)
    def index(request: IndexRequest) -> IndexResponse:
        try:
            idx = index_repository(request.root, request.include_globs)
        except OSError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return IndexResponse(
            root=idx.root,
            blocks=[
                BlockManifestEntry(
                    namespace=b.namespace,
                    file_path=b.file_path,
                    kind=b.kind.value,
                    key=key_to_dict(b.key),
                )
                for _, b in sorted(idx.blocks.items())
            ],
            skipped=[{"path": s.path, "reason": s.reason} for s in idx.skipped],
        )

    @app.post("/sessions", response_model=SessionSummary)
    def create_session(request: SessionCreateRequest) -> SessionSummary:
        config = _engine_config(request.config)
        try:
            state = new_session(request.repo_root, config, target=request.target)
        except OSError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        session_id = uuid.uuid4().hex[:12]
        with lock:
            sessions[session_id] = state
        return _summary(session_id, state)

    @app.get("/sessions/{session_id}", response_model=SessionSummary)
    def session_info(session_id: str) -> SessionSummary:
        return _summary(session_id, get_session(session_id))

    @app.delete("/sessions/{session_id}")
    def close_session(session_id: str) -> dict:
        get_session(session_id)
        with lock:
            del sessions[session_id]
        return {"closed": session_id}

    @app.post("/sessions/{session_id}/rounds", response_model=RoundResponse)
    def play_round(session_id: str, request: RoundRequest) -> RoundResponse:
        state = get_session(session_id)
        if request.feedback is not None:
            state.last_feedback = request.feedback
        try:
            record = run_round(state, request.instruction)
        except ScriptExhausted as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except GatewayError as exc:
            raise HTTPException(status_code=502, detail=str(exc)) from exc
        except ParseError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        payload = record.to_dict()
        payload.pop("tests", None)  # interactive rounds run no tests
        return RoundResponse(**payload)

    @app.post("/sessions/{session_id}/save")
    def save_session(session_id: str, request: StorePathRequest) -> dict:
        save_store(get_session(session_id), request.path)
        return {"saved": request.path}

    @app.post("/sessions/load", response_model=SessionSummary)
    def load_session(request: StorePathRequest) -> SessionSummary:
        try:
            state = load_store(request.path)
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except (SchemaError, VersionError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except OSError as exc:  # snapshot's repository root no longer readable
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        session_id = uuid.uuid4().hex[:12]
        with lock:
            sessions[session_id] = state
        return _summary(session_id, state)

    @app.post("/replay", response_model=ReportResponse)
    def replay(request: ReplayRequest) -> ReportResponse:
        config = _engine_config(request.config)
        try:
            tasks = evaluation.load_tasks(request.data, request.bench)
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except (SchemaError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        try:
            transcripts = replay_benchmark(
                tasks,
                request.out,
                config,
                repo_base=request.repo_base,
                copy_repos=request.copy_repos,
            )
        except (ScriptExhausted, GatewayError) as exc:
            raise HTTPException(status_code=502, detail=str(exc)) from exc
        except (OSError, RepoMemError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        report = evaluation.aggregate([t.to_dict() for t in transcripts])
        out = Path(request.out)
        out.joinpath("report.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        out.joinpath("report.txt").write_text(report.format_table() + "\n", encoding="utf-8")
        return ReportResponse(report=report.to_dict(), table=report.format_table())

    @app.post("/eval", response_model=ReportResponse)
    def evaluate(request: EvalRequest) -> ReportResponse:
        directory = Path(request.transcripts)
        if not directory.is_dir():
            raise HTTPException(status_code=404, detail=f"not a directory: {directory}")
        transcripts = []
        for path in sorted(directory.glob("*.json")):
            if path.name == "report.json":
                continue
            transcripts.append(json.loads(path.read_text(encoding="utf-8")))
        report = evaluation.aggregate(transcripts)
        return ReportResponse(report=report.to_dict(), table=report.format_table())

    @app.get("/stores/inspect")
    def store_inspect(path: str) -> dict:
        try:
            return {"text": inspect_store(path)}
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except json.JSONDecodeError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    return app
