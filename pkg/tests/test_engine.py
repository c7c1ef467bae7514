"""Engine: session lifecycle, the decision loop, pauses, replay, safety."""

from __future__ import annotations

import base64
import json
import random

import pytest

from flowpilot.backends import AgentBackends, ScriptedBackend
from flowpilot.engine import (
    ConfigInvalidError,
    EmptyTokenError,
    EngineConfig,
    FixtureMismatchError,
    TraceBundle,
    WrongPhaseError,
    replay,
)
from flowpilot.fixtures import (
    SCENARIO_OUTPUT_KINDS,
    SCENARIO_PLANS,
    SINK_KIND_OVERRIDES,
    TASK_A,
    TASK_B,
    TASK_C,
    TASK_D,
    TASK_DOCS,
    TASK_DRIVE_LIST,
    TASK_E,
    TASK_E2,
    TASK_MAP,
    TASK_PLOT,
    TASK_PRIVATE_DOWNLOAD,
    TASK_REALM5_PAGE,
    map_tool_entry,
    realm5_fixture_rows,
    scripted_backends,
)
from flowpilot.graph import UnknownVariableError
from flowpilot.runtime import ToolFailureError

from conftest import PREAUTH


def store_bytes(session) -> str:
    return json.dumps(session.store.to_json(), sort_keys=True)


# ---------------------------------------------------------------------------
# create_session


def test_create_session_starts_idle_with_empty_trace(engine):
    sid = engine.create_session()
    assert engine.session(sid).phase.kind == "idle"
    assert engine.get_trace(sid).steps == ()


def test_two_sessions_get_distinct_ids(engine):
    assert engine.create_session() != engine.create_session()


def test_zero_max_steps_is_config_invalid(engine):
    with pytest.raises(ConfigInvalidError):
        engine.create_session(config=EngineConfig(max_steps=0))


# ---------------------------------------------------------------------------
# scenario flows


@pytest.mark.parametrize(
    "task",
    [TASK_A, TASK_B, TASK_C, TASK_D, TASK_E, TASK_E2, TASK_REALM5_PAGE, TASK_DOCS],
)
def test_scenarios_follow_authored_plans(engine, task):
    sid = engine.create_session(credentials=PREAUTH)
    phase = engine.submit_instruction(sid, task)
    assert phase.kind == "done"
    assert phase.output.kind == SCENARIO_OUTPUT_KINDS[task]
    trace = engine.get_trace(sid)
    assert tuple(s.tool for s in trace.steps) == SCENARIO_PLANS[task]
    assert all(s.status == "ok" for s in trace.steps)


def test_realm5_page_task_step_sequence(engine):
    sid = engine.create_session(credentials=PREAUTH)
    phase = engine.submit_instruction(sid, TASK_REALM5_PAGE)
    assert phase.kind == "done"
    tools = tuple(s.tool for s in engine.get_trace(sid).steps)
    assert tools == ("user_input", "realm5_path_gen", "adma_page_url", "open_page")
    assert phase.output.kind == "page_view"


def test_transfer_decision_sequence_matches_demo(engine):
    sid = engine.create_session(credentials=PREAUTH)
    engine.submit_instruction(sid, TASK_E)
    tools = tuple(s.tool for s in engine.get_trace(sid).steps)
    assert tools == (
        "user_input",
        "gdrive_auth",
        "gdrive_download",
        "adma_upload",
        "adma_page_url",
        "open_page",
    )


# ---------------------------------------------------------------------------
# clarification


def test_plot_task_pauses_for_date_then_completes(engine):
    sid = engine.create_session()
    phase = engine.submit_instruction(sid, TASK_PLOT)
    assert phase.kind == "awaiting_clarification"
    assert phase.variable == "date"
    assert phase.prompt == "Please input a data string for Realm5."

    phase = engine.provide_clarification(sid, "date", "2024/5/1")
    assert phase.kind == "done"
    assert phase.output.kind == "plot_spec"
    date_state = engine.session(sid).store.state("date")
    assert date_state.provenance.kind == "user_clarification"


def test_plot_series_byte_match_fixture_csv(engine):
    sid = engine.create_session()
    engine.submit_instruction(sid, TASK_PLOT)
    phase = engine.provide_clarification(sid, "date", "2024/5/1")
    header, rows = realm5_fixture_rows()
    payload = phase.output.payload
    assert payload["x"] == [r[0] for r in rows]
    by_name = {s["name"]: s["values"] for s in payload["series"]}
    for metric in ("temperature", "humidity", "wind_speed"):
        column = header.index(metric)
        assert by_name[metric] == [r[column] for r in rows]


def test_clarification_while_idle_is_wrong_phase(engine):
    sid = engine.create_session()
    with pytest.raises(WrongPhaseError):
        engine.provide_clarification(sid, "date", "2024/5/1")


def test_clarification_for_other_variable_is_unknown_variable(engine):
    sid = engine.create_session()
    engine.submit_instruction(sid, TASK_PLOT)
    with pytest.raises(UnknownVariableError):
        engine.provide_clarification(sid, "menu", "Realm5")


# ---------------------------------------------------------------------------
# credentials


def test_drive_list_needs_google_then_completes(engine):
    sid = engine.create_session()
    phase = engine.submit_instruction(sid, TASK_DRIVE_LIST)
    assert phase.kind == "awaiting_credentials"
    assert phase.service == "google"
    phase = engine.provide_credentials(sid, "google", "gd-secret-token-99")
    assert phase.kind == "done"
    assert phase.output.kind == "table"
    assert phase.output.payload["rows"] == [["adma_test/test.txt", "27"]]


def test_private_download_needs_adma_token(engine):
    sid = engine.create_session()
    phase = engine.submit_instruction(sid, TASK_PRIVATE_DOWNLOAD)
    assert phase.kind == "awaiting_credentials"
    assert phase.service == "adma"
    phase = engine.provide_credentials(sid, "adma", "adma-secret-token-99")
    assert phase.kind == "done"
    assert phase.output.kind == "download_button"


def test_empty_token_rejected(engine):
    sid = engine.create_session()
    engine.submit_instruction(sid, TASK_DRIVE_LIST)
    with pytest.raises(EmptyTokenError):
        engine.provide_credentials(sid, "google", "")


def test_token_for_other_service_is_wrong_phase(engine):
    sid = engine.create_session()
    engine.submit_instruction(sid, TASK_DRIVE_LIST)
    with pytest.raises(WrongPhaseError):
        engine.provide_credentials(sid, "adma", "some-token")


def test_tokens_never_appear_in_traces_or_events(engine):
    sid = engine.create_session()
    engine.submit_instruction(sid, TASK_DRIVE_LIST)
    engine.provide_credentials(sid, "google", "gd-very-secret-token")
    session = engine.session(sid)
    blob = json.dumps(engine.get_trace(sid).to_json()) + json.dumps(session.events)
    assert "gd-very-secret-token" not in blob


# ---------------------------------------------------------------------------
# multi-turn sessions and the phase machine


def test_history_is_preserved_and_gap_free_across_turns(engine):
    sid = engine.create_session(credentials=PREAUTH)
    engine.submit_instruction(sid, TASK_A)
    engine.submit_instruction(sid, TASK_B)
    engine.submit_instruction(sid, TASK_PLOT)
    engine.provide_clarification(sid, "date", "2024/5/1")
    steps = engine.get_trace(sid).steps
    assert [s.seq for s in steps] == list(range(1, len(steps) + 1))
    first_turn = SCENARIO_PLANS[TASK_A]
    assert tuple(s.tool for s in steps[: len(first_turn)]) == first_turn
    chat = engine.session(sid).chat
    assert [c["text"] for c in chat if c.get("role") == "user" and "clarifies" not in c] == [
        TASK_A,
        TASK_B,
        TASK_PLOT,
    ]


def test_submit_while_awaiting_is_wrong_phase(engine):
    sid = engine.create_session()
    engine.submit_instruction(sid, TASK_PLOT)
    with pytest.raises(WrongPhaseError):
        engine.submit_instruction(sid, TASK_A)


def test_random_interleavings_never_break_the_phase_machine(make_engine):
    """Model check: arbitrary user action sequences only ever produce legal
    transitions and expected errors."""
    allowed = {
        "idle": {"running"},
        "running": {"awaiting_clarification", "awaiting_credentials", "done", "failed"},
        "awaiting_clarification": {"running"},
        "awaiting_credentials": {"running"},
        "done": {"running"},
        "failed": set(),
    }
    rng = random.Random(7)
    tasks = [TASK_A, TASK_PLOT, TASK_DRIVE_LIST, TASK_PRIVATE_DOWNLOAD]
    for _ in range(25):
        engine = make_engine()
        sid = engine.create_session()
        observed = [engine.session(sid).phase.kind]

        def watch(result_phase):
            observed.append(result_phase.kind)

        for _ in range(rng.randint(1, 6)):
            action = rng.choice(["submit", "clarify", "credentials"])
            try:
                if action == "submit":
                    watch(engine.submit_instruction(sid, rng.choice(tasks)))
                elif action == "clarify":
                    watch(engine.provide_clarification(sid, "date", "2024/5/1"))
                else:
                    service = rng.choice(["google", "adma"])
                    watch(engine.provide_credentials(sid, service, "tok-123456"))
            except (WrongPhaseError, UnknownVariableError, EmptyTokenError):
                continue
        session = engine.session(sid)
        # walk the event log and verify every recorded transition
        kinds = [e["data"]["phase"] for e in session.events if e["event"] == "phase"]
        current = "idle"
        for kind in kinds:
            assert kind in allowed[current], f"illegal {current} -> {kind}"
            current = kind


# ---------------------------------------------------------------------------
# failure handling


def adversarial_backends():
    return AgentBackends(
        controller=ScriptedBackend(fallback="CALL nonexistent_tool"),
        input_formatter=ScriptedBackend(),
        output_formatter=ScriptedBackend(),
    )


def test_adversarial_controller_fails_run_without_executing_tools(make_engine):
    backends = adversarial_backends()
    engine = make_engine(backends=backends)
    sid = engine.create_session(credentials=PREAUTH)
    phase = engine.submit_instruction(sid, TASK_A)
    assert phase.kind == "failed"
    assert "decision-unparseable" in phase.error
    assert backends.controller.calls == 3
    steps = engine.get_trace(sid).steps
    assert tuple(s.tool for s in steps) == ("user_input",)  # nothing executed


def test_budget_exceeded_stops_looping_backend(make_engine):
    # a controller that loops forever between two legal transforms
    backends = AgentBackends(
        controller=ScriptedBackend(fallback="CALL adma_docs_url"),
        input_formatter=ScriptedBackend(),
        output_formatter=ScriptedBackend(),
    )
    engine = make_engine(backends=backends, config=EngineConfig(max_steps=5))
    sid = engine.create_session()
    phase = engine.submit_instruction(sid, TASK_DOCS)
    assert phase.kind == "failed"
    assert phase.error == "budget-exceeded"
    assert len(engine.get_trace(sid).steps) == 5


def test_tool_failure_reconsults_once_then_aborts(make_engine):
    # realm5_fetch with an unknown date fails; a failed step is not progress,
    # so the scripted controller re-issues the same call and the second
    # failure aborts the run.
    from flowpilot.backends import ScriptedEntry

    backends = scripted_backends()
    backends.input_formatter.entries.insert(
        0,
        ScriptedEntry(
            "plot temperature, humidity and wind speed",
            "BIND metrics temperature,humidity,wind speed\nBIND date 1900/1/1",
        ),
    )
    engine = make_engine(backends=backends)
    sid = engine.create_session()
    phase = engine.submit_instruction(sid, TASK_PLOT)
    assert phase.kind == "failed"
    assert "tool-failure" in phase.error
    statuses = [s.status for s in engine.get_trace(sid).steps if s.tool == "realm5_fetch"]
    assert statuses == ["failed", "failed"]


# ---------------------------------------------------------------------------
# extensibility


def test_registered_map_descriptor_completes_map_task(make_engine, registry):
    registry.register(map_tool_entry())
    engine = make_engine()
    sid = engine.create_session()
    phase = engine.submit_instruction(sid, TASK_MAP)
    assert phase.kind == "done"
    assert phase.output.kind == "map_view"
    assert phase.output.payload == "1863N"
    assert tuple(s.tool for s in engine.get_trace(sid).steps) == SCENARIO_PLANS[TASK_MAP]


# ---------------------------------------------------------------------------
# replay


def run_to_trace(engine, task, clarify=None):
    sid = engine.create_session(credentials=PREAUTH)
    phase = engine.submit_instruction(sid, task)
    if clarify is not None:
        phase = engine.provide_clarification(sid, *clarify)
    assert phase.kind == "done"
    return sid, phase, engine.get_trace(sid)


@pytest.mark.parametrize("task", [TASK_A, TASK_B, TASK_C, TASK_D, TASK_E])
def test_replay_reproduces_final_store_and_output(engine, bundle_dir, task):
    sid, phase, trace = run_to_trace(engine, task)
    store, output = replay(trace, bundle_dir, SINK_KIND_OVERRIDES)
    assert json.dumps(store.to_json(), sort_keys=True) == store_bytes(engine.session(sid))
    assert output.to_json() == phase.output.to_json()


def test_replay_of_clarified_trace(engine, bundle_dir):
    sid, phase, trace = run_to_trace(engine, TASK_PLOT, clarify=("date", "2024/5/1"))
    store, output = replay(trace, bundle_dir, SINK_KIND_OVERRIDES)
    assert json.dumps(store.to_json(), sort_keys=True) == store_bytes(engine.session(sid))
    assert output.to_json() == phase.output.to_json()


def test_replay_flags_altered_fixture(engine, bundle_dir, tmp_path):
    import shutil

    _, _, trace = run_to_trace(engine, TASK_D)
    altered = tmp_path / "altered"
    shutil.copytree(bundle_dir, altered)
    target = altered / "adma" / "realm5" / "2024-05-01.csv"
    target.write_text(target.read_text().replace("12.4", "99.9"), encoding="utf-8")
    with pytest.raises(FixtureMismatchError):
        replay(trace, altered, SINK_KIND_OVERRIDES)


def test_replay_of_empty_trace_gives_empty_store(bundle_dir):
    store, output = replay(TraceBundle(graph_text="", steps=()), bundle_dir)
    assert store.to_json() == {}
    assert output is None


# ---------------------------------------------------------------------------
# safety: arguments always come from the store


def test_recorded_arguments_equal_store_values(engine):
    sid = engine.create_session(credentials=PREAUTH)
    engine.submit_instruction(sid, TASK_E)
    session = engine.session(sid)
    graph = session.graph
    # rebuild the store step by step and compare each recorded argument
    from flowpilot.graph import Provenance, VariableStore, bind_variable

    store = VariableStore.initial(graph)
    for step in session.history:
        spec = graph.tool(step.tool)
        if spec.kind.value == "user_input":
            for vid, value in step.outputs.items():
                store = bind_variable(store, vid, value, Provenance(Provenance.INPUT_FORMATTER))
            continue
        for i in spec.inputs:
            if i.param in step.args:
                assert step.args[i.param] == store.value(i.var)
        for vid, value in step.outputs.items():
            if vid in store.states:
                store = bind_variable(
                    store, vid, value, Provenance(Provenance.TOOL_OUTPUT, tool_id=spec.id)
                )


def test_download_button_payload_matches_fixture_bytes(engine):
    sid = engine.create_session(credentials=PREAUTH)
    phase = engine.submit_instruction(sid, TASK_E2)
    payload = phase.output.payload
    assert base64.b64decode(payload["content_b64"]) == b"hello from the cloud drive\n"
