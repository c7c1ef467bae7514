"""Tool execution layer: adapters, credential gating and argument plumbing.

Every argument a tool receives is read from the variable store at call time;
nothing ever comes from agent text. Protected tools are refused without a
matching credential slot, and auth gates turn a missing slot into a pause
instead of a failure.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeoutError
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Protocol, runtime_checkable

from .graph import (
    MetaProgramGraph,
    SemanticType,
    ToolKind,
    ToolSpec,
    VariableStore,
    payload_matches,
)

REDACTED = "***"


class ToolError(Exception):
    """Base class for execution failures."""


class AuthMissingError(ToolError):
    """No credential slot for the service this tool needs. The engine turns
    this into an awaiting_credentials pause rather than a failure."""

    def __init__(self, service: str):
        super().__init__(f"credentials required for service {service!r}")
        self.service = service


class ToolFailureError(ToolError):
    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ToolTimeoutError(ToolError):
    def __init__(self, tool_id: str, timeout: float):
        super().__init__(f"tool {tool_id!r} exceeded {timeout}s")
        self.tool_id = tool_id


class NotFoundError(ToolFailureError):
    pass


class AmbiguousMatchError(ToolFailureError):
    pass


class UnboundArgumentError(ToolError):
    """A required argument was unbound at execution time. Legality checks
    make this unreachable from the engine loop; it flags an engine bug."""

    def __init__(self, tool_id: str, variable_id: str):
        super().__init__(f"tool {tool_id!r} called with unbound required input {variable_id!r}")
        self.tool_id = tool_id
        self.variable_id = variable_id


class DuplicateRegistrationError(ToolError):
    def __init__(self, binding: str):
        super().__init__(f"adapter already registered for {binding!r}")
        self.binding = binding


@dataclass(frozen=True)
class CredentialSlot:
    """One authenticated service. Tokens are redacted everywhere they could
    be serialized."""

    service: str
    token: str
    acquired_at: float

    def __repr__(self) -> str:  # keep tokens out of logs and tracebacks
        return f"CredentialSlot(service={self.service!r}, token='{REDACTED}')"


@runtime_checkable
class ToolAdapter(Protocol):
    def execute(self, args: Mapping[str, Any], credentials: str | None) -> dict[str, Any]: ...


@dataclass
class FunctionAdapter:
    """Adapter over a plain callable. Arguments arrive keyed by param name;
    the single result is mapped onto ``output_var`` (or dropped if None)."""

    fn: Callable[..., Any]
    output_var: str | None = None

    def execute(self, args: Mapping[str, Any], credentials: str | None = None) -> dict[str, Any]:
        result = self.fn(**dict(args))
        if self.output_var is None:
            return {}
        return {self.output_var: result}


class AdapterRegistry:
    """Dispatch table from tool id (or tool kind) to adapter."""

    def __init__(self) -> None:
        self._by_tool: dict[str, ToolAdapter] = {}
        self._by_kind: dict[ToolKind, ToolAdapter] = {}

    def register(self, binding: str | ToolKind, adapter: ToolAdapter) -> str:
        if isinstance(binding, ToolKind):
            if binding in self._by_kind:
                raise DuplicateRegistrationError(binding.value)
            self._by_kind[binding] = adapter
            return f"kind:{binding.value}"
        if binding in self._by_tool:
            raise DuplicateRegistrationError(binding)
        self._by_tool[binding] = adapter
        return f"tool:{binding}"

    def resolve(self, spec: ToolSpec) -> ToolAdapter | None:
        adapter = self._by_tool.get(spec.id)
        if adapter is not None:
            return adapter
        return self._by_kind.get(spec.kind)


def collect_args(spec: ToolSpec, store: VariableStore) -> dict[str, Any]:
    """Read the tool's arguments from the store. Required inputs must be
    bound; optional unbound inputs are simply omitted."""
    args: dict[str, Any] = {}
    for i in spec.inputs:
        if not store.is_bound(i.var):
            if i.required:
                raise UnboundArgumentError(spec.id, i.var)
            continue
        args[i.param] = store.value(i.var)
    return args


def execute_tool(
    spec: ToolSpec,
    graph: MetaProgramGraph,
    store: VariableStore,
    credentials: Mapping[str, CredentialSlot],
    adapters: AdapterRegistry,
    timeout: float | None = 10.0,
) -> dict[str, Any]:
    """Execute one tool and return its output bindings.

    Raises ``AuthMissingError`` before any adapter code runs when the tool's
    service has no credential slot, ``UnboundArgumentError`` on missing
    required inputs, and ``ToolFailureError``/``ToolTimeoutError`` from the
    adapter itself. Outputs must cover exactly the declared output variables
    and match their semantic types.
    """
    args = collect_args(spec, store)

    if spec.kind is ToolKind.AUTH_GATE:
        service = spec.protected_service or spec.id
        if service not in credentials:
            raise AuthMissingError(service)
        return {}

    if spec.protected_service is not None and spec.protected_service not in credentials:
        raise AuthMissingError(spec.protected_service)

    adapter = adapters.resolve(spec)
    if adapter is None:
        raise ToolFailureError(f"no adapter for tool {spec.id!r}")

    token = None
    if spec.protected_service is not None:
        token = credentials[spec.protected_service].token

    if timeout is None:
        outputs = _run_adapter(adapter, args, token)
    else:
        pool = ThreadPoolExecutor(max_workers=1)
        future = pool.submit(_run_adapter, adapter, args, token)
        try:
            outputs = future.result(timeout=timeout)
        except FutureTimeoutError:
            # Leave the worker to finish on its own; waiting here would block
            # past the deadline we just enforced.
            pool.shutdown(wait=False)
            raise ToolTimeoutError(spec.id, timeout) from None
        pool.shutdown(wait=True)

    declared = set(spec.outputs)
    if set(outputs) != declared:
        raise ToolFailureError(
            f"tool {spec.id!r} outputs {sorted(outputs)} do not cover declared {sorted(declared)}"
        )
    for vid, value in outputs.items():
        semantic_type = graph.variable(vid).semantic_type
        if not payload_matches(semantic_type, value):
            raise ToolFailureError(
                f"tool {spec.id!r} produced a payload for {vid!r} that is not a {semantic_type.value}"
            )
    return outputs


def _run_adapter(
    adapter: ToolAdapter, args: Mapping[str, Any], token: str | None
) -> dict[str, Any]:
    try:
        return adapter.execute(args, token)
    except ToolError:
        raise
    except Exception as exc:  # adapter bugs surface as tool failures
        raise ToolFailureError(str(exc)) from exc


# Tokens shorter than this are not treated as scrubbable secrets: replacing
# every 1-2 character substring would corrupt ordinary payloads.
MIN_SCRUB_LENGTH = 6


def redact_snapshot(
    values: Mapping[str, Any],
    types: Mapping[str, SemanticType],
    tokens: tuple[str, ...] = (),
) -> dict[str, Any]:
    """Copy a param/variable snapshot with credential material replaced.

    Values of credential-typed variables are dropped wholesale, and any exact
    token string appearing inside string payloads is scrubbed.
    """
    scrub_tokens = tuple(t for t in tokens if len(t) >= MIN_SCRUB_LENGTH)
    out: dict[str, Any] = {}
    for key, value in values.items():
        if types.get(key) is SemanticType.CREDENTIAL:
            out[key] = REDACTED
            continue
        out[key] = _scrub(value, scrub_tokens)
    return out


def _scrub(value: Any, tokens: tuple[str, ...]) -> Any:
    if isinstance(value, str):
        for token in tokens:
            value = value.replace(token, REDACTED)
        return value
    if isinstance(value, dict):
        return {k: _scrub(v, tokens) for k, v in value.items()}
    if isinstance(value, list):
        return [_scrub(v, tokens) for v in value]
    return value


def now_monotonic() -> float:
    return time.monotonic()
