"""Persistent data & tool registry: the copilot's long-term memory.

Tool descriptors (with the variables they declare) and standalone data
records live one JSON document per entry under ``tools/``; session records
go under ``sessions/``. Retrieval is lexical token overlap behind a small
scoring function so a semantic scorer can be slotted in later.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable

from .graph import (
    GraphValidationError,
    MetaProgramGraph,
    SINK_KINDS,
    ToolKind,
    ToolSpec,
    VariableSpec,
    _tool_to_doc,
    _variable_to_doc,
    tool_from_doc,
    validate_graph,
    variable_from_doc,
)

_TOKEN = re.compile(r"[a-z0-9]+")


class RegistryError(Exception):
    pass


class DuplicateEntryError(RegistryError):
    def __init__(self, entry_id: str):
        super().__init__(f"entry already registered: {entry_id!r}")
        self.entry_id = entry_id


class EntryNotFoundError(RegistryError):
    def __init__(self, entry_id: str):
        super().__init__(f"no such entry: {entry_id!r}")
        self.entry_id = entry_id


class GraphBuildError(RegistryError):
    """Retrieved descriptors do not assemble into a valid graph."""


def tokenize(text: str) -> set[str]:
    return set(_TOKEN.findall(text.lower()))


@dataclass(frozen=True)
class RegistryEntry:
    """A tool descriptor (plus the variables it declares) or a standalone
    data record describing one variable."""

    descriptor: ToolSpec | VariableSpec
    tags: tuple[str, ...] = ()
    doc: str = ""
    variables: tuple[VariableSpec, ...] = ()

    @property
    def entry_id(self) -> str:
        return self.descriptor.id

    @property
    def is_tool(self) -> bool:
        return isinstance(self.descriptor, ToolSpec)

    def search_text(self) -> str:
        return " ".join([self.descriptor.name, *self.tags, self.doc])

    def to_json(self) -> dict[str, Any]:
        if self.is_tool:
            doc: dict[str, Any] = {"tool": _tool_to_doc(self.descriptor)}
            doc["variables"] = [_variable_to_doc(v) for v in self.variables]
        else:
            doc = {"variable": _variable_to_doc(self.descriptor)}
        doc["tags"] = list(self.tags)
        doc["doc"] = self.doc
        return doc

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "RegistryEntry":
        tags = tuple(doc.get("tags", ()))
        text = doc.get("doc", "")
        if "tool" in doc:
            return cls(
                descriptor=tool_from_doc(doc["tool"]),
                tags=tags,
                doc=text,
                variables=tuple(variable_from_doc(v) for v in doc.get("variables", ())),
            )
        if "variable" in doc:
            return cls(descriptor=variable_from_doc(doc["variable"]), tags=tags, doc=text)
        raise RegistryError("entry document needs a 'tool' or 'variable' key")


@dataclass(frozen=True)
class SessionRecord:
    """Outcome log for one session: instructions and result kinds only,
    never credential material."""

    session_id: str
    instructions: tuple[str, ...] = ()
    outcomes: tuple[str, ...] = ()

    def to_json(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "instructions": list(self.instructions),
            "outcomes": list(self.outcomes),
        }


def overlap_score(task_tokens: set[str], entry: RegistryEntry) -> int:
    return len(task_tokens & tokenize(entry.search_text()))


class Registry:
    """File-backed registry. Writes are serialized; retrieval works on an
    immutable snapshot of the entries."""

    def __init__(
        self,
        root: str | Path | None = None,
        scorer: Callable[[set[str], RegistryEntry], int] = overlap_score,
    ) -> None:
        self._root = Path(root) if root is not None else None
        self._entries: dict[str, RegistryEntry] = {}
        self._lock = threading.Lock()
        self._scorer = scorer
        if self._root is not None:
            self._load()

    def _tools_dir(self) -> Path:
        assert self._root is not None
        return self._root / "tools"

    def _sessions_dir(self) -> Path:
        assert self._root is not None
        return self._root / "sessions"

    def _load(self) -> None:
        tools_dir = self._tools_dir()
        if not tools_dir.is_dir():
            return
        for path in sorted(tools_dir.glob("*.json")):
            entry = RegistryEntry.from_json(json.loads(path.read_text(encoding="utf-8")))
            self._entries[entry.entry_id] = entry

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> tuple[RegistryEntry, ...]:
        with self._lock:
            return tuple(self._entries[k] for k in sorted(self._entries))

    def register(self, entry: RegistryEntry) -> None:
        with self._lock:
            if entry.entry_id in self._entries:
                raise DuplicateEntryError(entry.entry_id)
            self._entries[entry.entry_id] = entry
            if self._root is not None:
                self._tools_dir().mkdir(parents=True, exist_ok=True)
                path = self._tools_dir() / f"{entry.entry_id}.json"
                path.write_text(
                    json.dumps(entry.to_json(), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8",
                )

    def lookup(self, entry_id: str) -> RegistryEntry:
        with self._lock:
            try:
                return self._entries[entry_id]
            except KeyError:
                raise EntryNotFoundError(entry_id) from None

    def remove(self, entry_id: str) -> None:
        with self._lock:
            if entry_id not in self._entries:
                raise EntryNotFoundError(entry_id)
            del self._entries[entry_id]
            if self._root is not None:
                path = self._tools_dir() / f"{entry_id}.json"
                if path.exists():
                    path.unlink()

    def record_session(self, record: SessionRecord) -> None:
        if self._root is None:
            return
        self._sessions_dir().mkdir(parents=True, exist_ok=True)
        path = self._sessions_dir() / f"{record.session_id}.json"
        path.write_text(json.dumps(record.to_json(), indent=2) + "\n", encoding="utf-8")

    # -- retrieval ----------------------------------------------------------

    def _mandatory(self, entry: RegistryEntry) -> bool:
        if not entry.is_tool:
            return False
        kind = entry.descriptor.kind
        # Auth gates ride along with the entry node and sinks: credential
        # pauses must stay reachable even when the instruction never names
        # the protected service.
        return kind is ToolKind.USER_INPUT or kind is ToolKind.AUTH_GATE or kind in SINK_KINDS

    def retrieve_relevant(self, task: str, k: int) -> list[RegistryEntry]:
        """Entries ranked by shared-token count with ties broken by id.

        The user_input entry, every output sink and every auth gate are
        always included; ``k`` bounds only the scored picks, so k=0 yields
        the mandatory set alone.
        """
        if k < 0:
            raise ValueError("k must be >= 0")
        task_tokens = tokenize(task)
        snapshot = self.entries()
        ranked = sorted(
            ((self._scorer(task_tokens, e), e) for e in snapshot),
            key=lambda pair: (-pair[0], pair[1].entry_id),
        )
        result: list[RegistryEntry] = []
        picked = 0
        for score, entry in ranked:
            if self._mandatory(entry):
                result.append(entry)
            elif score > 0 and picked < k:
                result.append(entry)
                picked += 1
        return result

    def build_graph_for_task(self, task: str, k: int) -> MetaProgramGraph:
        """Assemble a graph from retrieved tool descriptors plus the
        variables they declare. The result always passes validation."""
        if not len(self):
            raise GraphBuildError("registry is empty")
        retrieved = self.retrieve_relevant(task, k)
        tools: list[ToolSpec] = []
        variables: list[VariableSpec] = []
        seen: dict[str, VariableSpec] = {}
        for entry in retrieved:
            if entry.is_tool:
                tools.append(entry.descriptor)
                declared: Iterable[VariableSpec] = entry.variables
            else:
                declared = (entry.descriptor,)
            for v in declared:
                if seen.get(v.id) == v:
                    continue  # identical re-declarations merge silently
                seen[v.id] = v
                variables.append(v)
        graph = MetaProgramGraph(tools=tools, variables=variables)
        violations = validate_graph(graph)
        if violations:
            raise GraphBuildError("; ".join(str(v) for v in violations))
        return graph
