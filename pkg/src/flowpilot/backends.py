"""Completion backends the agents run on.

The engine never depends on which backend answers: a scripted pattern table
replays authored decisions for tests and offline runs, while the remote
backend forwards prompts to any chat-completion HTTP endpoint.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import httpx

LLM_TOKEN_ENV = "COPILOT_LLM_TOKEN"


class BackendUnreachableError(Exception):
    """The completion backend could not be reached or answered garbage."""


@runtime_checkable
class CompletionBackend(Protocol):
    def complete(self, prompt: str) -> str: ...


@dataclass(frozen=True)
class ScriptedEntry:
    """One pattern->response rule. ``match`` is a plain substring of the
    prompt; entries may span the adjacent task/state lines to pin a context
    fingerprint."""

    match: str
    response: str


@dataclass
class ScriptedBackend:
    """Deterministic table-driven backend: first matching entry wins,
    unmatched prompts yield the designated fallback."""

    entries: list[ScriptedEntry] = field(default_factory=list)
    fallback: str = ""
    calls: int = 0

    def complete(self, prompt: str) -> str:
        self.calls += 1
        for entry in self.entries:
            if entry.match in prompt:
                return entry.response
        return self.fallback

    @classmethod
    def from_file(cls, path: str | Path, fallback: str = "") -> "ScriptedBackend":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, list):
            raise ValueError(f"{path}: scripted fixture must be a JSON array")
        entries = [ScriptedEntry(match=e["match"], response=e["response"]) for e in raw]
        return cls(entries=entries, fallback=fallback)

    def dump(self, path: str | Path) -> None:
        doc = [{"match": e.match, "response": e.response} for e in self.entries]
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


@dataclass
class RemoteBackend:
    """Chat-completion HTTP endpoint: one prompt string in, one text out.

    The auth header is read from the ``COPILOT_LLM_TOKEN`` environment
    variable at call time so tokens never live in config files.
    """

    base_url: str
    timeout: float = 30.0

    def complete(self, prompt: str) -> str:
        headers = {}
        token = os.environ.get(LLM_TOKEN_ENV)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            response = httpx.post(
                self.base_url,
                json={"prompt": prompt},
                headers=headers,
                timeout=self.timeout,
            )
            response.raise_for_status()
            body = response.json()
        except (httpx.HTTPError, json.JSONDecodeError) as exc:
            raise BackendUnreachableError(str(exc)) from exc
        text = body.get("text") if isinstance(body, dict) else None
        if not isinstance(text, str):
            raise BackendUnreachableError("backend response missing 'text' field")
        return text


@dataclass(frozen=True)
class AgentBackends:
    """One backend per agent role. Roles may share an instance; keeping them
    separate lets scripted tables match raw instruction fragments without
    colliding across roles."""

    controller: CompletionBackend
    input_formatter: CompletionBackend
    output_formatter: CompletionBackend

    @classmethod
    def shared(cls, backend: CompletionBackend) -> "AgentBackends":
        return cls(controller=backend, input_formatter=backend, output_formatter=backend)
