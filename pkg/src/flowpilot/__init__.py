"""Copilot orchestration engine separating control flow from data flow.

Tools and variables form a meta-program graph; a controller agent picks the
next tool from a legality-constrained menu while argument values only ever
flow through the variable store. Missing information pauses the run for
clarification or credentials instead of being invented.
"""

from .agents import (
    AgentContext,
    AskUser,
    BindingProposal,
    CallTool,
    ControllerDecision,
    DecisionParseError,
    DecisionUnparseableError,
    Finish,
    RenderedOutput,
    build_controller_prompt,
    controller_decide,
    format_input,
    format_output,
    parse_decision,
)
from .backends import (
    AgentBackends,
    BackendUnreachableError,
    CompletionBackend,
    RemoteBackend,
    ScriptedBackend,
    ScriptedEntry,
)
from .engine import (
    ConfigInvalidError,
    CopilotEngine,
    EmptyTokenError,
    EngineConfig,
    FixtureMismatchError,
    Phase,
    Session,
    StepEvent,
    TraceBundle,
    WrongPhaseError,
    replay,
)
from .graph import (
    GraphParseError,
    GraphValidationError,
    IdCollisionError,
    MetaProgramGraph,
    Provenance,
    SemanticType,
    ToolInput,
    ToolKind,
    ToolSpec,
    TypeMismatchError,
    UnknownVariableError,
    VariableSpec,
    VariableState,
    VariableStore,
    Violation,
    bind_variable,
    deserialize_graph,
    legal_tools,
    merge_subgraph,
    serialize_graph,
    validate_graph,
)
from .registry import (
    DuplicateEntryError,
    EntryNotFoundError,
    GraphBuildError,
    Registry,
    RegistryEntry,
    SessionRecord,
)
from .runtime import (
    AdapterRegistry,
    AuthMissingError,
    CredentialSlot,
    DuplicateRegistrationError,
    FunctionAdapter,
    NotFoundError,
    AmbiguousMatchError,
    ToolAdapter,
    ToolFailureError,
    ToolTimeoutError,
    UnboundArgumentError,
    execute_tool,
)
from .services import MockServiceState, builtin_adapters

__version__ = "0.1.0"
