"""The three agents: program controller, input formatter, output formatter.

Agents are stateless. The controller only ever picks from the legal tool
menu; argument values never pass through it. The input formatter turns an
instruction into raw-text binding proposals, and the output formatter maps a
sink tool's bound inputs to a typed rendering whose data values are copied
verbatim from the store.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .backends import CompletionBackend
from .graph import (
    MetaProgramGraph,
    SemanticType,
    ToolKind,
    ToolSpec,
    VariableStore,
    preview_value,
    serialize_graph,
)


class DecisionParseError(Exception):
    """A backend response that does not parse into a legal decision."""

    def __init__(self, message: str, offending: str):
        super().__init__(f"{message}: {offending!r}")
        self.offending = offending


class DecisionUnparseableError(Exception):
    """All retry attempts produced illegal or garbled decisions."""

    def __init__(self, attempts: int, last_error: DecisionParseError):
        super().__init__(f"no legal decision after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


class UnboundRequiredInputError(Exception):
    """A sink was rendered with an unbound required input. Legality checks
    make this unreachable in the engine loop; hitting it means an engine bug."""


# ---------------------------------------------------------------------------
# Context


@dataclass(frozen=True)
class AgentContext:
    """Everything an agent sees: task, serialized graph, store summary and
    rendered history. Building it is deterministic for a given state."""

    task: str
    graph_text: str
    store_summary: tuple[tuple[str, bool, str | None], ...]
    history_text: str
    state_line: str

    @classmethod
    def build(
        cls,
        task: str,
        graph: MetaProgramGraph,
        store: VariableStore,
        history_lines: Sequence[str],
        auth: frozenset[str] | set[str],
    ) -> "AgentContext":
        summary = tuple(
            (vid, store.is_bound(vid), preview_value(store.value(vid)) if store.is_bound(vid) else None)
            for vid in sorted(store.states)
        )
        # Failed steps are not progress: the fingerprint tracks the last
        # tool that actually succeeded.
        last = "none"
        for line in reversed(history_lines):
            parts = line.split()
            if len(parts) >= 3 and parts[2] == "ok":
                last = parts[1]
                break
        state_line = "state: bound=[{}] last=[{}] auth=[{}]".format(
            ",".join(store.bound_ids()), last, ",".join(sorted(auth))
        )
        return cls(
            task=task,
            graph_text=serialize_graph(graph),
            store_summary=summary,
            history_text="\n".join(history_lines),
            state_line=state_line,
        )


# ---------------------------------------------------------------------------
# Decisions


@dataclass(frozen=True)
class CallTool:
    tool_id: str


@dataclass(frozen=True)
class AskUser:
    variable_id: str
    prompt: str


@dataclass(frozen=True)
class Finish:
    tool_id: str


ControllerDecision = CallTool | AskUser | Finish


@dataclass(frozen=True)
class BindingProposal:
    """Variable ids with raw text values, as extracted from an instruction.
    May be empty; never contains fabricated values."""

    bindings: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class RenderedOutput:
    """Typed result handed to the front-end."""

    kind: str  # text | table | plot_spec | download_button | page_view | map_view | auth_request
    payload: Any

    KINDS = frozenset(
        {"text", "table", "plot_spec", "download_button", "page_view", "map_view", "auth_request"}
    )

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind, "payload": self.payload}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


# ---------------------------------------------------------------------------
# Prompts


def build_controller_prompt(ctx: AgentContext, legal: frozenset[str] | set[str]) -> str:
    """Deterministic controller prompt: task and state fingerprint first (so
    scripted tables can match across the two adjacent lines), then the graph,
    store summary, history and the explicit legal menu."""
    summary_lines = []
    for vid, bound, preview in ctx.store_summary:
        if bound:
            summary_lines.append(f"  {vid} [bound] = {preview}")
        else:
            summary_lines.append(f"  {vid} [unbound]")
    return (
        "role: controller\n"
        f"task: {ctx.task}\n"
        f"{ctx.state_line}\n"
        f"legal: [{','.join(sorted(legal))}]\n"
        "graph:\n"
        f"{ctx.graph_text}"
        "variables:\n" + "\n".join(summary_lines) + "\n"
        "history:\n"
        f"{ctx.history_text}\n"
        "reply with exactly one line: CALL <tool> | ASK <variable> <prompt> | FINISH <tool>\n"
    )


def build_input_formatter_prompt(instruction: str, graph: MetaProgramGraph) -> str:
    lines = [
        f"  {v.id} ({v.semantic_type.value}): {v.name}" for v in graph.variables
    ]
    return (
        "role: input_formatter\n"
        f"task: {instruction}\n"
        "variables:\n" + "\n".join(lines) + "\n"
        "reply with zero or more lines: BIND <variable> <value>\n"
    )


def build_output_formatter_prompt(task: str, sink_tool: ToolSpec, value: Any) -> str:
    return (
        "role: output_formatter\n"
        f"task: {task}\n"
        f"sink: {sink_tool.id}\n"
        f"value: {value}\n"
        "reply with one short sentence presenting the value verbatim\n"
    )


# ---------------------------------------------------------------------------
# Parsing


def parse_decision(
    response: str,
    legal: frozenset[str] | set[str],
    store: VariableStore,
    graph: MetaProgramGraph,
) -> ControllerDecision:
    """Parse a controller response under the strict one-line grammar.

    Only the first line is considered. CALL must name a legal non-sink tool,
    FINISH a legal sink, and ASK an existing unbound variable. Anything else
    raises ``DecisionParseError`` naming the offending text.
    """
    first = response.split("\n", 1)[0].strip()
    if not first:
        raise DecisionParseError("empty decision", response[:80])
    parts = first.split()
    verb = parts[0].upper()
    if verb == "CALL":
        if len(parts) != 2:
            raise DecisionParseError("CALL takes exactly one tool id", first)
        tool_id = parts[1]
        if tool_id not in legal:
            raise DecisionParseError("illegal choice: tool not in legal set", first)
        if graph.tool(tool_id).is_sink:
            raise DecisionParseError("illegal choice: sinks are finished, not called", first)
        return CallTool(tool_id)
    if verb == "FINISH":
        if len(parts) != 2:
            raise DecisionParseError("FINISH takes exactly one tool id", first)
        tool_id = parts[1]
        if tool_id not in legal:
            raise DecisionParseError("illegal choice: tool not in legal set", first)
        if not graph.tool(tool_id).is_sink:
            raise DecisionParseError("illegal choice: FINISH must name an output sink", first)
        return Finish(tool_id)
    if verb == "ASK":
        if len(parts) < 2:
            raise DecisionParseError("ASK takes a variable id", first)
        variable_id = parts[1]
        if variable_id not in store.states:
            raise DecisionParseError("illegal choice: unknown variable", first)
        if store.is_bound(variable_id):
            raise DecisionParseError("illegal choice: variable already bound", first)
        prompt = first.split(None, 2)[2] if len(parts) > 2 else ""
        if not prompt:
            name = graph.variable(variable_id).name
            prompt = f"Please provide {name}"
        return AskUser(variable_id, prompt)
    raise DecisionParseError("unknown verb", first)


def controller_decide(
    ctx: AgentContext,
    legal: frozenset[str] | set[str],
    backend: CompletionBackend,
    store: VariableStore,
    graph: MetaProgramGraph,
    attempts: int = 3,
) -> ControllerDecision:
    """Ask the controller for the next step, re-prompting with an error note
    on illegal or garbled replies, up to ``attempts`` tries in total."""
    base_prompt = build_controller_prompt(ctx, legal)
    error_note = ""
    last_error: DecisionParseError | None = None
    for _ in range(max(1, attempts)):
        response = backend.complete(base_prompt + error_note)
        try:
            return parse_decision(response, legal, store, graph)
        except DecisionParseError as exc:
            last_error = exc
            error_note = f"error: previous reply was not a legal decision ({exc})\n"
    assert last_error is not None
    raise DecisionUnparseableError(max(1, attempts), last_error)


def format_input(
    instruction: str, graph: MetaProgramGraph, backend: CompletionBackend
) -> BindingProposal:
    """Extract raw variable values from an instruction.

    Lines that are not valid BIND statements or that reference unknown
    variables are dropped: the formatter may miss values but never invents
    them, and an empty instruction yields an empty proposal.
    """
    if not instruction.strip():
        return BindingProposal()
    response = backend.complete(build_input_formatter_prompt(instruction, graph))
    bindings: list[tuple[str, str]] = []
    for line in response.splitlines():
        parts = line.strip().split(None, 2)
        if len(parts) != 3 or parts[0].upper() != "BIND":
            continue
        variable_id, raw_value = parts[1], parts[2]
        if variable_id in graph.variables_by_id:
            bindings.append((variable_id, raw_value))
    return BindingProposal(tuple(bindings))


# ---------------------------------------------------------------------------
# Output rendering

# Default sink-kind mapping keyed by the payload variable's semantic type.
# Tools whose rendering cannot be derived this way (the plot sink) are listed
# in an override table shipped with the built-in descriptors.
_KIND_BY_TYPE: Mapping[SemanticType, str] = {
    SemanticType.FILE_REF: "download_button",
    SemanticType.URL: "page_view",
    SemanticType.PAGE_REF: "page_view",
    SemanticType.GEO_FIELD: "map_view",
    SemanticType.TABLE: "table",
    SemanticType.TEXT: "text",
    SemanticType.PATH: "text",
    SemanticType.DATE: "text",
    SemanticType.CREDENTIAL: "auth_request",
}


def sink_output_kind(
    sink_tool: ToolSpec,
    graph: MetaProgramGraph,
    overrides: Mapping[str, str] | None = None,
) -> str:
    if overrides and sink_tool.id in overrides:
        return overrides[sink_tool.id]
    if sink_tool.kind is ToolKind.RESPONSE_OUTPUT:
        return "text"
    required = sink_tool.required_vars()
    if not required:
        return "text"
    return _KIND_BY_TYPE[graph.variable(required[0]).semantic_type]


def _plot_spec_from_table(table: Mapping[str, Any]) -> dict[str, Any]:
    columns = list(table["columns"])
    rows = list(table["rows"])
    x_label = columns[0] if columns else ""
    x = [row[0] for row in rows]
    series = [
        {"name": columns[i], "values": [row[i] for row in rows]}
        for i in range(1, len(columns))
    ]
    return {"x_label": x_label, "x": x, "series": series}


def format_output(
    ctx: AgentContext,
    sink_tool: ToolSpec,
    store: VariableStore,
    backend: CompletionBackend,
    graph: MetaProgramGraph,
    kind_overrides: Mapping[str, str] | None = None,
) -> RenderedOutput:
    """Render a sink tool's bound inputs as a typed output.

    Payload values are copied from the store; the backend is consulted only
    to phrase response_output text, never to produce data values.
    """
    assert sink_tool.is_sink, "format_output only renders output sinks"
    required = sink_tool.required_vars()
    for vid in required:
        if not store.is_bound(vid):
            raise UnboundRequiredInputError(vid)
    kind = sink_output_kind(sink_tool, graph, kind_overrides)
    value = store.value(required[0]) if required else ""

    if kind == "plot_spec":
        return RenderedOutput(kind, _plot_spec_from_table(value))
    if kind == "text":
        phrased = ""
        if sink_tool.kind is ToolKind.RESPONSE_OUTPUT:
            phrased = backend.complete(
                build_output_formatter_prompt(ctx.task, sink_tool, value)
            ).strip()
        return RenderedOutput(kind, {"text": phrased or str(value), "value": value})
    if kind == "auth_request":
        return RenderedOutput(kind, {"service": value})
    # download_button, page_view, map_view, table: the bound value verbatim.
    return RenderedOutput(kind, value)
