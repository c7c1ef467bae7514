"""The copilot hub: sessions, the decision loop, pauses and replay.

Each instruction runs the same loop: build a task graph from the registry,
let the input formatter bind what the instruction contains, then repeatedly
compute the legal tool set, ask the controller, and either execute a tool,
pause for the user (clarification or credentials), or finish through an
output sink. Arguments always come from the store, so a run can never
execute a tool with a fabricated value.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .agents import (
    AgentContext,
    AskUser,
    ControllerDecision,
    DecisionUnparseableError,
    Finish,
    RenderedOutput,
    controller_decide,
    format_input,
    format_output,
)
from .backends import AgentBackends, BackendUnreachableError, ScriptedBackend
from .graph import (
    MetaProgramGraph,
    Provenance,
    SemanticType,
    ToolKind,
    TypeMismatchError,
    UnknownVariableError,
    VariableStore,
    bind_variable,
    deserialize_graph,
    legal_tools,
    serialize_graph,
)
from .registry import Registry, SessionRecord
from .runtime import (
    AdapterRegistry,
    AuthMissingError,
    CredentialSlot,
    ToolError,
    UnboundArgumentError,
    execute_tool,
    redact_snapshot,
)


class EngineError(Exception):
    pass


class ConfigInvalidError(EngineError):
    pass


class WrongPhaseError(EngineError):
    def __init__(self, expected: str, actual: str):
        super().__init__(f"session is {actual}, expected {expected}")
        self.expected = expected
        self.actual = actual


class EmptyTokenError(EngineError):
    def __init__(self) -> None:
        super().__init__("credential token must be nonempty")


class UnknownSessionError(EngineError):
    def __init__(self, session_id: str):
        super().__init__(f"no such session: {session_id!r}")
        self.session_id = session_id


class FixtureMismatchError(EngineError):
    """Replay over the given fixtures diverged from the recorded trace."""


@dataclass(frozen=True)
class EngineConfig:
    max_steps: int = 32
    controller_retries: int = 3
    tool_timeout: float | None = 10.0
    retrieval_k: int = 12

    def validated(self) -> "EngineConfig":
        if self.max_steps < 1:
            raise ConfigInvalidError("max_steps must be >= 1")
        if self.controller_retries < 1:
            raise ConfigInvalidError("controller_retries must be >= 1")
        if self.retrieval_k < 0:
            raise ConfigInvalidError("retrieval_k must be >= 0")
        return self


@dataclass(frozen=True)
class Phase:
    """Where a session stands. Transitions follow a fixed machine:
    idle -> running -> {awaiting_* | done | failed}; awaiting_* -> running;
    done -> running on a new turn."""

    kind: str  # idle | running | awaiting_clarification | awaiting_credentials | done | failed
    variable: str | None = None
    prompt: str | None = None
    service: str | None = None
    output: RenderedOutput | None = None
    error: str | None = None

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"phase": self.kind}
        if self.variable is not None:
            doc["variable"] = self.variable
        if self.prompt is not None:
            doc["prompt"] = self.prompt
        if self.service is not None:
            doc["service"] = self.service
        if self.output is not None:
            doc["output"] = self.output.to_json()
        if self.error is not None:
            doc["error"] = self.error
        return doc


IDLE = Phase("idle")

# Allowed phase transitions (from-kind -> to-kinds).
_TRANSITIONS: Mapping[str, frozenset[str]] = {
    "idle": frozenset({"running"}),
    "running": frozenset({"awaiting_clarification", "awaiting_credentials", "done", "failed"}),
    "awaiting_clarification": frozenset({"running"}),
    "awaiting_credentials": frozenset({"running"}),
    "done": frozenset({"running"}),
    "failed": frozenset(),
}


@dataclass(frozen=True)
class StepEvent:
    """One executed step. Argument and output snapshots are redacted before
    they are recorded, so tokens never appear in a trace."""

    seq: int
    turn: int
    tool: str
    status: str  # ok | failed
    args: dict[str, Any]
    outputs: dict[str, Any]
    started_ns: int
    ended_ns: int
    error: str | None = None

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "seq": self.seq,
            "turn": self.turn,
            "tool": self.tool,
            "status": self.status,
            "args": self.args,
            "outputs": self.outputs,
            "started_ns": self.started_ns,
            "ended_ns": self.ended_ns,
        }
        if self.error is not None:
            doc["error"] = self.error
        return doc

    def duration_ns(self) -> int:
        return self.ended_ns - self.started_ns


@dataclass(frozen=True)
class TraceBundle:
    """Self-contained trace: the turn's graph plus the recorded steps."""

    graph_text: str
    steps: tuple[StepEvent, ...]
    task: str = ""

    def to_json(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "graph": self.graph_text,
            "steps": [s.to_json() for s in self.steps],
        }


@dataclass
class Session:
    id: str
    config: EngineConfig
    phase: Phase = IDLE
    graph: MetaProgramGraph | None = None
    store: VariableStore | None = None
    history: list[StepEvent] = field(default_factory=list)
    credentials: dict[str, CredentialSlot] = field(default_factory=dict)
    events: list[dict[str, Any]] = field(default_factory=list)
    chat: list[dict[str, Any]] = field(default_factory=list)
    task: str = ""
    turn: int = 0
    steps_this_turn: int = 0
    failures_in_row: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)

    def auth_services(self) -> frozenset[str]:
        return frozenset(self.credentials)


class CopilotEngine:
    """Coordinates registry, agents and tool runtime for many sessions.

    Each session's loop is strictly sequential; different sessions may run
    concurrently against the same registry and mock services.
    """

    def __init__(
        self,
        registry: Registry,
        adapters: AdapterRegistry,
        backends: AgentBackends,
        config: EngineConfig | None = None,
        sink_kind_overrides: Mapping[str, str] | None = None,
        record_sessions: bool = True,
    ) -> None:
        self.registry = registry
        self.adapters = adapters
        self.backends = backends
        self.config = (config or EngineConfig()).validated()
        self.sink_kind_overrides = dict(sink_kind_overrides or {})
        self.record_sessions = record_sessions
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    # -- session lifecycle ---------------------------------------------------

    def create_session(
        self,
        config: EngineConfig | None = None,
        credentials: Mapping[str, str] | None = None,
    ) -> str:
        """New idle session. ``credentials`` pre-authorizes services for
        non-interactive runs (the benchmark harness relies on this)."""
        session_config = (config or self.config).validated()
        session = Session(id=uuid.uuid4().hex, config=session_config)
        for service, token in (credentials or {}).items():
            if not token:
                raise EmptyTokenError()
            session.credentials[service] = CredentialSlot(service, token, time.time())
        with self._lock:
            self._sessions[session.id] = session
        return session.id

    def session(self, session_id: str) -> Session:
        with self._lock:
            try:
                return self._sessions[session_id]
            except KeyError:
                raise UnknownSessionError(session_id) from None

    def get_trace(self, session_id: str) -> TraceBundle:
        session = self.session(session_id)
        graph_text = serialize_graph(session.graph) if session.graph is not None else ""
        return TraceBundle(graph_text=graph_text, steps=tuple(session.history), task=session.task)

    # -- user actions ----------------------------------------------------------

    def submit_instruction(self, session_id: str, text: str) -> Phase:
        """Run one instruction to a terminal phase or a pause."""
        session = self.session(session_id)
        with session.lock:
            if session.phase.kind not in ("idle", "done"):
                raise WrongPhaseError("idle or done", session.phase.kind)
            session.task = text
            session.turn += 1
            session.steps_this_turn = 0
            session.failures_in_row = 0
            session.chat.append({"role": "user", "text": text})
            self._set_phase(session, Phase("running"))
            try:
                session.graph = self.registry.build_graph_for_task(
                    text, session.config.retrieval_k
                )
            except Exception as exc:
                return self._fail(session, f"graph-build: {exc}")
            session.store = VariableStore.initial(session.graph)
            try:
                self._run_input_formatter(session)
            except BackendUnreachableError as exc:
                return self._fail(session, f"backend-unreachable: {exc}")
            return self._run_loop(session)

    def provide_clarification(self, session_id: str, variable_id: str, value: str) -> Phase:
        session = self.session(session_id)
        with session.lock:
            if session.phase.kind != "awaiting_clarification":
                raise WrongPhaseError("awaiting_clarification", session.phase.kind)
            if session.phase.variable != variable_id:
                raise UnknownVariableError(variable_id)
            assert session.store is not None and session.graph is not None
            started = time.perf_counter_ns()
            session.store = bind_variable(
                session.store,
                variable_id,
                value,
                Provenance(Provenance.USER_CLARIFICATION),
            )
            session.chat.append({"role": "user", "text": value, "clarifies": variable_id})
            # The supplied value is a step of its own so traces stay
            # self-contained and replayable.
            entry = session.graph.entry
            self._record_step(
                session,
                entry.id if entry is not None else "user_input",
                "ok",
                args={"variable": variable_id},
                arg_types={},
                outputs={variable_id: value},
                output_types={variable_id: session.store.types[variable_id]},
                started_ns=started,
            )
            self._set_phase(session, Phase("running"))
            return self._run_loop(session)

    def provide_credentials(self, session_id: str, service: str, token: str) -> Phase:
        session = self.session(session_id)
        with session.lock:
            if session.phase.kind != "awaiting_credentials":
                raise WrongPhaseError("awaiting_credentials", session.phase.kind)
            if session.phase.service != service:
                raise WrongPhaseError(f"awaiting_credentials({session.phase.service})", service)
            if not token:
                raise EmptyTokenError()
            session.credentials[service] = CredentialSlot(service, token, time.time())
            self._set_phase(session, Phase("running"))
            return self._run_loop(session)

    # -- internals ---------------------------------------------------------

    def _set_phase(self, session: Session, phase: Phase) -> None:
        allowed = _TRANSITIONS[session.phase.kind]
        assert phase.kind in allowed, f"illegal transition {session.phase.kind} -> {phase.kind}"
        session.phase = phase
        session.events.append({"event": "phase", "data": phase.to_json()})

    def _fail(self, session: Session, error: str) -> Phase:
        phase = Phase("failed", error=error)
        self._set_phase(session, phase)
        return phase

    def _history_lines(self, session: Session) -> list[str]:
        return [f"  {e.seq} {e.tool} {e.status}" for e in session.history]

    def _record_step(
        self,
        session: Session,
        tool_id: str,
        status: str,
        args: Mapping[str, Any],
        arg_types: Mapping[str, SemanticType],
        outputs: Mapping[str, Any],
        output_types: Mapping[str, SemanticType],
        started_ns: int,
        error: str | None = None,
    ) -> StepEvent:
        tokens = tuple(slot.token for slot in session.credentials.values())
        event = StepEvent(
            seq=len(session.history) + 1,
            turn=session.turn,
            tool=tool_id,
            status=status,
            args=redact_snapshot(args, arg_types, tokens),
            outputs=redact_snapshot(outputs, output_types, tokens),
            started_ns=started_ns,
            ended_ns=time.perf_counter_ns(),
            error=error,
        )
        session.history.append(event)
        session.steps_this_turn += 1
        session.events.append({"event": "step", "data": event.to_json()})
        return event

    def _run_input_formatter(self, session: Session) -> None:
        assert session.graph is not None and session.store is not None
        started = time.perf_counter_ns()
        proposal = format_input(session.task, session.graph, self.backends.input_formatter)
        bound: dict[str, Any] = {}
        types: dict[str, SemanticType] = {}
        for variable_id, raw in proposal.bindings:
            try:
                session.store = bind_variable(
                    session.store, variable_id, raw, Provenance(Provenance.INPUT_FORMATTER)
                )
            except TypeMismatchError:
                continue  # structured payloads cannot come from raw text
            bound[variable_id] = raw
            types[variable_id] = session.store.types[variable_id]
        entry = session.graph.entry
        entry_id = entry.id if entry is not None else "user_input"
        self._record_step(
            session,
            entry_id,
            "ok",
            args={"text": session.task},
            arg_types={},
            outputs=bound,
            output_types=types,
            started_ns=started,
        )

    def _run_loop(self, session: Session) -> Phase:
        assert session.graph is not None and session.store is not None
        graph = session.graph
        while True:
            if session.steps_this_turn >= session.config.max_steps:
                return self._fail(session, "budget-exceeded")
            auth = session.auth_services()
            legal = legal_tools(graph, session.store, auth)
            ctx = AgentContext.build(
                session.task, graph, session.store, self._history_lines(session), auth
            )
            try:
                decision: ControllerDecision = controller_decide(
                    ctx,
                    legal,
                    self.backends.controller,
                    session.store,
                    graph,
                    attempts=session.config.controller_retries,
                )
            except DecisionUnparseableError as exc:
                return self._fail(session, f"decision-unparseable: {exc}")
            except BackendUnreachableError as exc:
                return self._fail(session, f"backend-unreachable: {exc}")

            if isinstance(decision, AskUser):
                phase = Phase(
                    "awaiting_clarification",
                    variable=decision.variable_id,
                    prompt=decision.prompt,
                )
                self._set_phase(session, phase)
                session.chat.append(
                    {"role": "copilot", "text": decision.prompt, "asks": decision.variable_id}
                )
                return phase

            if isinstance(decision, Finish):
                sink = graph.tool(decision.tool_id)
                started = time.perf_counter_ns()
                output = format_output(
                    ctx,
                    sink,
                    session.store,
                    self.backends.output_formatter,
                    graph,
                    self.sink_kind_overrides,
                )
                args = {
                    i.param: session.store.value(i.var)
                    for i in sink.inputs
                    if session.store.is_bound(i.var)
                }
                arg_types = {
                    i.param: session.store.types[i.var]
                    for i in sink.inputs
                    if session.store.is_bound(i.var)
                }
                self._record_step(
                    session,
                    sink.id,
                    "ok",
                    args=args,
                    arg_types=arg_types,
                    outputs={"rendered": output.to_json()},
                    output_types={},
                    started_ns=started,
                )
                phase = Phase("done", output=output)
                self._set_phase(session, phase)
                session.chat.append({"role": "copilot", "output": output.to_json()})
                self._persist_session(session)
                return phase

            # CallTool
            spec = graph.tool(decision.tool_id)
            started = time.perf_counter_ns()
            arg_types = {i.param: session.store.types[i.var] for i in spec.inputs}
            try:
                outputs = execute_tool(
                    spec,
                    graph,
                    session.store,
                    session.credentials,
                    self.adapters,
                    timeout=session.config.tool_timeout,
                )
            except AuthMissingError as exc:
                phase = Phase("awaiting_credentials", service=exc.service)
                self._set_phase(session, phase)
                session.chat.append({"role": "copilot", "auth_request": exc.service})
                return phase
            except UnboundArgumentError as exc:
                # Unreachable through legality; treat as a hard engine fault.
                return self._fail(session, f"engine-bug: {exc}")
            except ToolError as exc:
                args = {
                    i.param: session.store.value(i.var)
                    for i in spec.inputs
                    if session.store.is_bound(i.var)
                }
                self._record_step(
                    session,
                    spec.id,
                    "failed",
                    args=args,
                    arg_types=arg_types,
                    outputs={},
                    output_types={},
                    started_ns=started,
                    error=str(exc),
                )
                session.failures_in_row += 1
                if session.failures_in_row > 1:
                    return self._fail(session, f"tool-failure: {exc}")
                continue  # re-consult the controller once with the failure on record

            session.failures_in_row = 0
            args = {i.param: session.store.value(i.var) for i in spec.inputs if session.store.is_bound(i.var)}
            for variable_id, value in outputs.items():
                session.store = bind_variable(
                    session.store,
                    variable_id,
                    value,
                    Provenance(Provenance.TOOL_OUTPUT, tool_id=spec.id),
                )
            output_types = {vid: session.store.types[vid] for vid in outputs}
            self._record_step(
                session,
                spec.id,
                "ok",
                args=args,
                arg_types=arg_types,
                outputs=outputs,
                output_types=output_types,
                started_ns=started,
            )

    def _persist_session(self, session: Session) -> None:
        if not self.record_sessions:
            return
        instructions = tuple(
            turn["text"] for turn in session.chat if turn.get("role") == "user" and "text" in turn
        )
        outcomes = tuple(
            turn["output"]["kind"]
            for turn in session.chat
            if turn.get("role") == "copilot" and "output" in turn
        )
        self.registry.record_session(
            SessionRecord(session.id, instructions=instructions, outcomes=outcomes)
        )


# ---------------------------------------------------------------------------
# Replay


def replay(
    trace: TraceBundle,
    fixture_dir: str | Path,
    sink_kind_overrides: Mapping[str, str] | None = None,
) -> tuple[VariableStore | None, RenderedOutput | None]:
    """Re-execute a recorded trace over a fresh fixture bundle.

    Deterministic mocks mean identical fixtures reproduce the identical final
    store and rendered output; any divergence raises ``FixtureMismatchError``.
    """
    from .services import MockServiceState, builtin_adapters

    if not trace.graph_text:
        return VariableStore(states={}, types={}, next_seq=0), None
    graph = deserialize_graph(trace.graph_text)
    state = MockServiceState.from_dir(fixture_dir)
    adapters = builtin_adapters(state)
    store = VariableStore.initial(graph)
    output: RenderedOutput | None = None
    # Mock auth gates accept any nonempty token; recorded traces never carry
    # real ones.
    credentials = {
        t.protected_service: CredentialSlot(t.protected_service, "replay-token", 0.0)
        for t in graph.tools
        if t.protected_service is not None
    }
    silent = ScriptedBackend()
    formatted_turns: set[int] = set()

    for step in trace.steps:
        if step.tool not in graph.tools_by_id:
            raise FixtureMismatchError(f"trace step {step.seq} names unknown tool {step.tool!r}")
        spec = graph.tool(step.tool)
        if spec.kind is ToolKind.USER_INPUT:
            # First entry step of a turn carries formatter bindings; later
            # ones are clarification answers.
            if step.turn in formatted_turns:
                provenance = Provenance(Provenance.USER_CLARIFICATION)
            else:
                provenance = Provenance(Provenance.INPUT_FORMATTER)
                formatted_turns.add(step.turn)
            for variable_id, value in step.outputs.items():
                store = bind_variable(store, variable_id, value, provenance)
            continue
        if spec.is_sink:
            ctx = AgentContext.build(trace.task, graph, store, [], frozenset(credentials))
            output = format_output(ctx, spec, store, silent, graph, sink_kind_overrides)
            recorded = step.outputs.get("rendered")
            if recorded is not None and recorded != output.to_json():
                raise FixtureMismatchError(
                    f"step {step.seq}: rendered output diverged from the recorded trace"
                )
            continue
        try:
            outputs = execute_tool(spec, graph, store, credentials, adapters, timeout=None)
        except ToolError as exc:
            if step.status == "failed":
                continue
            raise FixtureMismatchError(f"step {step.seq}: {exc}") from exc
        if step.status == "ok" and outputs != step.outputs:
            raise FixtureMismatchError(
                f"step {step.seq}: outputs diverged from the recorded trace"
            )
        for variable_id, value in outputs.items():
            store = bind_variable(
                store, variable_id, value, Provenance(Provenance.TOOL_OUTPUT, tool_id=spec.id)
            )
    return store, output
