"""HTTP surface of the copilot server.

JSON bodies in, JSON out, plus a server-sent event stream per session that
replays the full event log from any cursor, so reconnecting clients never
lose steps.
"""

from __future__ import annotations

import asyncio
import json
from typing import Any

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import StreamingResponse
from pydantic import BaseModel

from .engine import (
    ConfigInvalidError,
    CopilotEngine,
    EmptyTokenError,
    UnknownSessionError,
    WrongPhaseError,
)
from .graph import GraphError, UnknownVariableError


class MessageIn(BaseModel):
    text: str


class ClarificationIn(BaseModel):
    variable: str
    value: str


class CredentialIn(BaseModel):
    service: str
    token: str


def create_app(engine: CopilotEngine) -> FastAPI:
    app = FastAPI(title="flowpilot server")

    def _session_or_404(session_id: str):
        try:
            return engine.session(session_id)
        except UnknownSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.get("/healthz")
    def healthz() -> dict[str, str]:
        return {"status": "ok"}

    @app.post("/sessions")
    def create_session() -> dict[str, str]:
        try:
            return {"id": engine.create_session()}
        except ConfigInvalidError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageIn) -> dict[str, Any]:
        _session_or_404(session_id)
        try:
            phase = engine.submit_instruction(session_id, body.text)
        except WrongPhaseError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return phase.to_json()

    @app.post("/sessions/{session_id}/clarifications")
    def post_clarification(session_id: str, body: ClarificationIn) -> dict[str, Any]:
        _session_or_404(session_id)
        try:
            phase = engine.provide_clarification(session_id, body.variable, body.value)
        except WrongPhaseError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except UnknownVariableError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except GraphError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return phase.to_json()

    @app.post("/sessions/{session_id}/credentials")
    def post_credentials(session_id: str, body: CredentialIn) -> dict[str, Any]:
        _session_or_404(session_id)
        try:
            phase = engine.provide_credentials(session_id, body.service, body.token)
        except WrongPhaseError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except EmptyTokenError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return phase.to_json()

    @app.get("/sessions/{session_id}/trace")
    def get_trace(session_id: str) -> dict[str, Any]:
        _session_or_404(session_id)
        return engine.get_trace(session_id).to_json()

    @app.get("/sessions/{session_id}/chat")
    def get_chat(session_id: str) -> dict[str, Any]:
        session = _session_or_404(session_id)
        return {"turns": list(session.chat), "phase": session.phase.to_json()}

    @app.get("/sessions/{session_id}/events")
    async def get_events(session_id: str, request: Request) -> StreamingResponse:
        session = _session_or_404(session_id)
        cursor = 0
        last_id = request.headers.get("last-event-id")
        if last_id is not None and last_id.isdigit():
            cursor = int(last_id)

        async def stream():
            nonlocal cursor
            while True:
                events = session.events
                while cursor < len(events):
                    item = events[cursor]
                    cursor += 1
                    payload = json.dumps(item["data"], sort_keys=True)
                    yield f"id: {cursor}\nevent: {item['event']}\ndata: {payload}\n\n"
                if await request.is_disconnected():
                    return
                # Terminal phases close the stream once fully drained; the
                # client re-subscribes for the next turn.
                if session.phase.kind in ("done", "failed") and cursor >= len(session.events):
                    return
                await asyncio.sleep(0.05)

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app
