"""Meta-program graph: the typed tool/variable model shared by every agent.

Tools and variables form a bipartite graph whose edges define data flow.
Control flow (which tool runs next) is decided elsewhere; this module only
answers which tools are *legal* given the current bindings, and owns the
canonical on-disk/JSON form of a graph.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Any, Iterable, Mapping

ID_PATTERN = re.compile(r"^[a-z0-9_]+$")


class SemanticType(str, Enum):
    """Closed set of payload kinds a variable may hold."""

    TEXT = "text"
    PATH = "path"
    URL = "url"
    DATE = "date"
    FILE_REF = "file_ref"
    TABLE = "table"
    CREDENTIAL = "credential"
    PAGE_REF = "page_ref"
    GEO_FIELD = "geo_field"


class ToolKind(str, Enum):
    EXTERNAL_API = "external_api"
    TRANSFORM = "transform"
    AUTH_GATE = "auth_gate"
    UI_OUTPUT = "ui_output"
    RESPONSE_OUTPUT = "response_output"
    USER_INPUT = "user_input"


SINK_KINDS = frozenset({ToolKind.UI_OUTPUT, ToolKind.RESPONSE_OUTPUT})

# Semantic types whose payload is a plain string.
_STRING_TYPES = frozenset(
    {
        SemanticType.TEXT,
        SemanticType.PATH,
        SemanticType.URL,
        SemanticType.DATE,
        SemanticType.CREDENTIAL,
        SemanticType.PAGE_REF,
        SemanticType.GEO_FIELD,
    }
)


class GraphError(Exception):
    """Base class for graph-layer failures."""


class UnknownVariableError(GraphError):
    def __init__(self, variable_id: str):
        super().__init__(f"unknown variable: {variable_id!r}")
        self.variable_id = variable_id


class UnknownToolError(GraphError):
    def __init__(self, tool_id: str):
        super().__init__(f"unknown tool: {tool_id!r}")
        self.tool_id = tool_id


class UnboundVariableError(GraphError):
    def __init__(self, variable_id: str):
        super().__init__(f"variable is unbound: {variable_id!r}")
        self.variable_id = variable_id


class TypeMismatchError(GraphError):
    def __init__(self, variable_id: str, semantic_type: SemanticType, value: Any):
        super().__init__(
            f"payload for {variable_id!r} does not match {semantic_type.value}: {value!r}"
        )
        self.variable_id = variable_id
        self.semantic_type = semantic_type


class IdCollisionError(GraphError):
    def __init__(self, element_id: str):
        super().__init__(f"id already present in graph: {element_id!r}")
        self.element_id = element_id


class GraphParseError(GraphError):
    def __init__(self, message: str, position: int | None = None):
        detail = message if position is None else f"{message} (at position {position})"
        super().__init__(detail)
        self.position = position


class GraphValidationError(GraphError):
    def __init__(self, violations: list["Violation"]):
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = violations


@dataclass(frozen=True)
class VariableSpec:
    """A named, typed slot that tools read from and write to."""

    id: str
    name: str
    description: str
    semantic_type: SemanticType


@dataclass(frozen=True)
class ToolInput:
    param: str
    var: str
    required: bool = True


@dataclass(frozen=True)
class ToolSpec:
    """Description of a tool: what it consumes, produces and protects."""

    id: str
    name: str
    description: str
    kind: ToolKind
    inputs: tuple[ToolInput, ...] = ()
    outputs: tuple[str, ...] = ()
    protected_service: str | None = None

    @property
    def is_sink(self) -> bool:
        return self.kind in SINK_KINDS

    def required_vars(self) -> tuple[str, ...]:
        return tuple(i.var for i in self.inputs if i.required)


@dataclass(frozen=True)
class Violation:
    """One broken invariant, naming the offending element and the rule."""

    element_id: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"[{self.rule}] {self.element_id}: {self.message}"


def payload_matches(semantic_type: SemanticType, value: Any) -> bool:
    """Check a payload against the shape its semantic type demands."""
    if semantic_type in _STRING_TYPES:
        return isinstance(value, str)
    if semantic_type is SemanticType.FILE_REF:
        return (
            isinstance(value, dict)
            and isinstance(value.get("name"), str)
            and isinstance(value.get("content_b64"), str)
        )
    if semantic_type is SemanticType.TABLE:
        if not isinstance(value, dict):
            return False
        columns = value.get("columns")
        rows = value.get("rows")
        if not isinstance(columns, list) or not all(isinstance(c, str) for c in columns):
            return False
        return isinstance(rows, list) and all(
            isinstance(r, list) and len(r) == len(columns) for r in rows
        )
    return False


@dataclass(frozen=True, eq=False)
class MetaProgramGraph:
    """Immutable tool/variable graph. Elements are kept sorted by id so that
    two structurally identical graphs compare equal regardless of input order."""

    tools: tuple[ToolSpec, ...]
    variables: tuple[VariableSpec, ...]

    def __init__(self, tools: Iterable[ToolSpec] = (), variables: Iterable[VariableSpec] = ()):
        object.__setattr__(self, "tools", tuple(sorted(tools, key=lambda t: t.id)))
        object.__setattr__(self, "variables", tuple(sorted(variables, key=lambda v: v.id)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MetaProgramGraph):
            return NotImplemented
        return self.tools == other.tools and self.variables == other.variables

    @cached_property
    def tools_by_id(self) -> dict[str, ToolSpec]:
        return {t.id: t for t in self.tools}

    @cached_property
    def variables_by_id(self) -> dict[str, VariableSpec]:
        return {v.id: v for v in self.variables}

    def tool(self, tool_id: str) -> ToolSpec:
        try:
            return self.tools_by_id[tool_id]
        except KeyError:
            raise UnknownToolError(tool_id) from None

    def variable(self, variable_id: str) -> VariableSpec:
        try:
            return self.variables_by_id[variable_id]
        except KeyError:
            raise UnknownVariableError(variable_id) from None

    @property
    def sinks(self) -> tuple[ToolSpec, ...]:
        return tuple(t for t in self.tools if t.is_sink)

    @property
    def entry(self) -> ToolSpec | None:
        for t in self.tools:
            if t.kind is ToolKind.USER_INPUT:
                return t
        return None

    def edges(self) -> tuple[tuple[str, str], ...]:
        """Derived data-flow edges: variable->tool for inputs, tool->variable
        for outputs."""
        out: list[tuple[str, str]] = []
        for t in self.tools:
            for i in t.inputs:
                out.append((i.var, t.id))
            for v in t.outputs:
                out.append((t.id, v))
        return tuple(out)


# ---------------------------------------------------------------------------
# Variable store


@dataclass(frozen=True)
class Provenance:
    """Where a binding came from. ``tool_id`` is set only for tool outputs."""

    kind: str  # input_formatter | tool_output | user_clarification
    tool_id: str | None = None

    INPUT_FORMATTER = "input_formatter"
    TOOL_OUTPUT = "tool_output"
    USER_CLARIFICATION = "user_clarification"

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"kind": self.kind}
        if self.tool_id is not None:
            doc["tool_id"] = self.tool_id
        return doc


@dataclass(frozen=True)
class VariableState:
    """Binding state of one variable. Unbound states carry no payload."""

    value: Any = None
    provenance: Provenance | None = None
    bound_at: int | None = None

    @property
    def bound(self) -> bool:
        return self.provenance is not None


@dataclass(frozen=True, eq=False)
class VariableStore:
    """Per-session map from variable id to binding state.

    Stores are immutable snapshots: ``bind_variable`` returns a new store.
    ``bound_at`` values come from a store-local counter, so identical binding
    sequences yield byte-identical stores.
    """

    states: Mapping[str, VariableState]
    types: Mapping[str, SemanticType]
    next_seq: int = 0

    @classmethod
    def initial(cls, graph: MetaProgramGraph) -> "VariableStore":
        return cls(
            states={v.id: VariableState() for v in graph.variables},
            types={v.id: v.semantic_type for v in graph.variables},
            next_seq=0,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VariableStore):
            return NotImplemented
        return dict(self.states) == dict(other.states) and dict(self.types) == dict(other.types)

    def state(self, variable_id: str) -> VariableState:
        try:
            return self.states[variable_id]
        except KeyError:
            raise UnknownVariableError(variable_id) from None

    def is_bound(self, variable_id: str) -> bool:
        return self.state(variable_id).bound

    def value(self, variable_id: str) -> Any:
        state = self.state(variable_id)
        if not state.bound:
            raise UnboundVariableError(variable_id)
        return state.value

    def bound_ids(self) -> tuple[str, ...]:
        return tuple(sorted(v for v, s in self.states.items() if s.bound))

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {}
        for vid in sorted(self.states):
            state = self.states[vid]
            if state.bound:
                assert state.provenance is not None
                doc[vid] = {
                    "value": state.value,
                    "provenance": state.provenance.to_json(),
                    "bound_at": state.bound_at,
                }
            else:
                doc[vid] = None
        return doc


def bind_variable(
    store: VariableStore, variable_id: str, value: Any, provenance: Provenance
) -> VariableStore:
    """Return a new store with ``variable_id`` bound.

    Raises ``UnknownVariableError`` for ids outside the store's graph and
    ``TypeMismatchError`` when the payload shape does not fit the variable's
    semantic type. Rebinding is permitted; the new provenance replaces the old.
    """
    if variable_id not in store.states:
        raise UnknownVariableError(variable_id)
    semantic_type = store.types[variable_id]
    if not payload_matches(semantic_type, value):
        raise TypeMismatchError(variable_id, semantic_type, value)
    states = dict(store.states)
    states[variable_id] = VariableState(
        value=value, provenance=provenance, bound_at=store.next_seq
    )
    return VariableStore(states=states, types=store.types, next_seq=store.next_seq + 1)


# ---------------------------------------------------------------------------
# Validation


def validate_graph(graph: MetaProgramGraph) -> list[Violation]:
    """Check every structural invariant; an empty report means the graph is
    well formed. Each violation names the offending element and rule."""
    violations: list[Violation] = []

    seen_vars: set[str] = set()
    for v in graph.variables:
        if not ID_PATTERN.match(v.id):
            violations.append(Violation(v.id, "id-format", "variable id must match [a-z0-9_]+"))
        if v.id in seen_vars:
            violations.append(Violation(v.id, "duplicate-id", "variable id declared twice"))
        seen_vars.add(v.id)

    seen_tools: set[str] = set()
    entry_count = 0
    for t in graph.tools:
        if not ID_PATTERN.match(t.id):
            violations.append(Violation(t.id, "id-format", "tool id must match [a-z0-9_]+"))
        if t.id in seen_tools:
            violations.append(Violation(t.id, "duplicate-id", "tool id declared twice"))
        seen_tools.add(t.id)
        if t.kind is ToolKind.USER_INPUT:
            entry_count += 1
        for i in t.inputs:
            if i.var not in seen_vars and i.var not in graph.variables_by_id:
                violations.append(
                    Violation(t.id, "missing-variable", f"input references missing variable {i.var!r}")
                )
        for o in t.outputs:
            if o not in graph.variables_by_id:
                violations.append(
                    Violation(t.id, "missing-variable", f"output references missing variable {o!r}")
                )
        if t.is_sink and t.outputs:
            violations.append(Violation(t.id, "sink-with-outputs", "output sinks must not declare outputs"))
        if t.protected_service is not None and not t.protected_service:
            violations.append(Violation(t.id, "empty-service", "protected_service must be nonempty"))

    if entry_count != 1:
        violations.append(
            Violation(
                "<graph>",
                "single-entry",
                f"graph must contain exactly one user_input tool, found {entry_count}",
            )
        )
    return violations


# ---------------------------------------------------------------------------
# Legality


def legal_tools(
    graph: MetaProgramGraph, store: VariableStore, auth: frozenset[str] | set[str]
) -> frozenset[str]:
    """Ids of tools the controller may choose right now.

    A tool is legal iff all its required inputs are bound and its credential
    requirement is satisfied. The user_input entry never appears. Auth gates
    stay legal without credentials: executing one without a slot is what
    pauses the engine to request them.
    """
    legal: set[str] = set()
    for t in graph.tools:
        if t.kind is ToolKind.USER_INPUT:
            continue
        if any(not store.is_bound(i.var) for i in t.inputs if i.required):
            continue
        if (
            t.protected_service is not None
            and t.kind is not ToolKind.AUTH_GATE
            and t.protected_service not in auth
        ):
            continue
        legal.add(t.id)
    return frozenset(legal)


# ---------------------------------------------------------------------------
# Canonical serialization


def _tool_to_doc(t: ToolSpec) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "id": t.id,
        "name": t.name,
        "description": t.description,
        "kind": t.kind.value,
        "inputs": [{"param": i.param, "var": i.var, "required": i.required} for i in t.inputs],
        "outputs": list(t.outputs),
    }
    if t.protected_service is not None:
        doc["protected_service"] = t.protected_service
    return doc


def _variable_to_doc(v: VariableSpec) -> dict[str, Any]:
    return {
        "id": v.id,
        "name": v.name,
        "description": v.description,
        "semantic_type": v.semantic_type.value,
    }


def serialize_graph(graph: MetaProgramGraph) -> str:
    """Canonical textual form: sorted element order, stable key order.

    Serializing the same graph twice yields identical bytes, which keeps
    prompts and golden fixtures stable.
    """
    doc = {
        "variables": [_variable_to_doc(v) for v in graph.variables],
        "tools": [_tool_to_doc(t) for t in graph.tools],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _require(doc: Mapping[str, Any], key: str, kind: type, context: str) -> Any:
    if key not in doc:
        raise GraphParseError(f"{context}: missing key {key!r}")
    value = doc[key]
    if not isinstance(value, kind):
        raise GraphParseError(f"{context}: key {key!r} must be {kind.__name__}")
    return value


def variable_from_doc(doc: Mapping[str, Any]) -> VariableSpec:
    context = f"variable {doc.get('id', '?')!r}"
    raw_type = _require(doc, "semantic_type", str, context)
    try:
        semantic_type = SemanticType(raw_type)
    except ValueError:
        raise GraphParseError(f"{context}: unknown semantic_type {raw_type!r}") from None
    return VariableSpec(
        id=_require(doc, "id", str, context),
        name=_require(doc, "name", str, context),
        description=_require(doc, "description", str, context),
        semantic_type=semantic_type,
    )


def tool_from_doc(doc: Mapping[str, Any]) -> ToolSpec:
    context = f"tool {doc.get('id', '?')!r}"
    raw_kind = _require(doc, "kind", str, context)
    try:
        kind = ToolKind(raw_kind)
    except ValueError:
        raise GraphParseError(f"{context}: unknown kind {raw_kind!r}") from None
    inputs = []
    for raw in _require(doc, "inputs", list, context):
        if not isinstance(raw, Mapping):
            raise GraphParseError(f"{context}: inputs entries must be objects")
        inputs.append(
            ToolInput(
                param=_require(raw, "param", str, context),
                var=_require(raw, "var", str, context),
                required=bool(raw.get("required", True)),
            )
        )
    outputs = _require(doc, "outputs", list, context)
    if not all(isinstance(o, str) for o in outputs):
        raise GraphParseError(f"{context}: outputs must be variable ids")
    protected = doc.get("protected_service")
    if protected is not None and not isinstance(protected, str):
        raise GraphParseError(f"{context}: protected_service must be a string")
    return ToolSpec(
        id=_require(doc, "id", str, context),
        name=_require(doc, "name", str, context),
        description=_require(doc, "description", str, context),
        kind=kind,
        inputs=tuple(inputs),
        outputs=tuple(outputs),
        protected_service=protected,
    )


def deserialize_graph(text: str) -> MetaProgramGraph:
    """Parse the canonical form back into a graph.

    Raises ``GraphParseError`` (with position for malformed JSON) or
    ``GraphValidationError`` when the parsed graph breaks an invariant.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphParseError(exc.msg, position=exc.pos) from None
    if not isinstance(doc, dict):
        raise GraphParseError("top level must be an object")
    variables = [variable_from_doc(d) for d in _require(doc, "variables", list, "graph")]
    tools = [tool_from_doc(d) for d in _require(doc, "tools", list, "graph")]
    graph = MetaProgramGraph(tools=tools, variables=variables)
    violations = validate_graph(graph)
    if violations:
        raise GraphValidationError(violations)
    return graph


# ---------------------------------------------------------------------------
# Extension


def merge_subgraph(
    graph: MetaProgramGraph,
    new_tools: Iterable[ToolSpec] = (),
    new_vars: Iterable[VariableSpec] = (),
) -> MetaProgramGraph:
    """Extend a graph with additional descriptors, leaving the original intact.

    New ids must not collide with existing ones and the result must validate;
    merged tools immediately participate in legality and routing.
    """
    new_tools = tuple(new_tools)
    new_vars = tuple(new_vars)
    for t in new_tools:
        if t.id in graph.tools_by_id:
            raise IdCollisionError(t.id)
    for v in new_vars:
        if v.id in graph.variables_by_id:
            raise IdCollisionError(v.id)
    merged = MetaProgramGraph(
        tools=graph.tools + new_tools, variables=graph.variables + new_vars
    )
    violations = validate_graph(merged)
    if violations:
        raise GraphValidationError(violations)
    return merged


def preview_value(value: Any, limit: int = 40) -> str:
    """Short human-readable rendering of a payload for store summaries."""
    if isinstance(value, str):
        return value if len(value) <= limit else value[: limit - 1] + "…"
    if isinstance(value, dict):
        if "content_b64" in value:
            return f"<file {value.get('name', '?')}>"
        if "rows" in value:
            return f"<table {len(value.get('columns', []))}x{len(value['rows'])}>"
    return repr(value)[:limit]
