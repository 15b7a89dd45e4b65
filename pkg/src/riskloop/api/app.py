"""HTTP surface of the annotation service.

Handlers are thin: every route loads the durable session snapshot through
the manager and returns a pydantic model, so a server restart (or a second
replica over the same directory) answers identically.
"""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path
from typing import Union

from fastapi import FastAPI, HTTPException

from ..network import ModelConfig
from ..session import (
    SessionConfig,
    SessionError,
    SessionManager,
    SessionNotFound,
    StaleQueryError,
)
from .schemas import (
    CaseImportanceModel,
    CreateSessionRequest,
    CreateSessionResponse,
    ImportanceResponse,
    LabelAck,
    LabelRequest,
    QueryResponse,
    StatusResponse,
)


def _session_config(req: CreateSessionRequest) -> SessionConfig:
    cfg = req.config
    return SessionConfig(
        mode=cfg.mode,
        model=ModelConfig(**cfg.model.model_dump()),
        projection_seed=cfg.projection_seed,
        embeddings=cfg.embeddings,
        n_train=cfg.n_train,
        n_test=cfg.n_test,
        split_seed=cfg.split_seed,
        test_ids=tuple(cfg.test_ids),
    )


def create_app(sessions_root: Union[str, Path]) -> FastAPI:
    app = FastAPI(title="riskloop annotation service")
    manager = SessionManager(sessions_root)
    app.state.manager = manager

    @app.exception_handler(SessionNotFound)
    async def _not_found(request, exc):
        raise HTTPException(status_code=404, detail=f"unknown session: {exc.args[0]}")

    @app.post("/api/sessions", response_model=CreateSessionResponse)
    def create_session(req: CreateSessionRequest):
        if (req.cases_file_ref is None) == (req.cases_jsonl is None):
            raise HTTPException(
                status_code=422, detail="provide exactly one of cases_file_ref, cases_jsonl"
            )
        if req.cases_file_ref is not None:
            path = Path(req.cases_file_ref)
            if not path.exists():
                raise HTTPException(status_code=422, detail=f"no such file: {req.cases_file_ref}")
            data = path.read_bytes()
        else:
            data = req.cases_jsonl.encode("utf-8")
        try:
            state = manager.create_session(data, _session_config(req), session_id=req.session_id)
        except (SessionError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return CreateSessionResponse(
            session_id=state.session_id,
            labeled_count=len(state.labeled),
            unlabeled_count=len(state.unlabeled_ids),
            test_count=len(state.test_ids),
        )

    @app.get("/api/sessions/{session_id}/status", response_model=StatusResponse)
    def status(session_id: str):
        try:
            return StatusResponse(**manager.status(session_id))
        except SessionNotFound:
            raise HTTPException(status_code=404, detail=f"unknown session: {session_id}")

    @app.get("/api/sessions/{session_id}/query", response_model=QueryResponse)
    def query(session_id: str):
        try:
            return QueryResponse(**manager.next_query(session_id))
        except SessionNotFound:
            raise HTTPException(status_code=404, detail=f"unknown session: {session_id}")

    @app.post("/api/sessions/{session_id}/labels", response_model=LabelAck)
    def submit_label(session_id: str, req: LabelRequest):
        try:
            ack = manager.submit_label(session_id, req.case_id, req.risk)
        except SessionNotFound:
            raise HTTPException(status_code=404, detail=f"unknown session: {session_id}")
        except StaleQueryError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return LabelAck(**ack)

    @app.get("/api/sessions/{session_id}/importance", response_model=ImportanceResponse)
    def importance(session_id: str, k: int = 5):
        if k < 0:
            raise HTTPException(status_code=422, detail="k must be non-negative")
        try:
            report = manager.importance_report(session_id, k)
        except SessionNotFound:
            raise HTTPException(status_code=404, detail=f"unknown session: {session_id}")
        return ImportanceResponse(
            session_id=session_id,
            k=k,
            cases=[CaseImportanceModel(**asdict(item)) for item in report],
        )

    return app
