"""Graph model: validation, legality, binding, serialization, merging."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowpilot.graph import (
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
    VariableStore,
    bind_variable,
    deserialize_graph,
    legal_tools,
    merge_subgraph,
    serialize_graph,
    validate_graph,
)


def v(vid, semantic_type=SemanticType.TEXT):
    return VariableSpec(id=vid, name=vid, description=f"variable {vid}", semantic_type=semantic_type)


def t(tid, kind=ToolKind.TRANSFORM, inputs=(), outputs=(), protected=None):
    return ToolSpec(
        id=tid,
        name=tid,
        description=f"tool {tid}",
        kind=kind,
        inputs=tuple(ToolInput(param=f"p_{var}", var=var, required=req) for var, req in inputs),
        outputs=tuple(outputs),
        protected_service=protected,
    )


ENTRY = t("user_input", ToolKind.USER_INPUT)


def minimal_graph(*extra_tools, variables=()):
    return MetaProgramGraph(tools=(ENTRY, *extra_tools), variables=variables)


# ---------------------------------------------------------------------------
# validate_graph


def test_minimal_graph_is_valid():
    assert validate_graph(minimal_graph()) == []


def test_missing_variable_reference_is_named():
    graph = minimal_graph(t("worker", inputs=(("x9", True),)))
    report = validate_graph(graph)
    assert len(report) == 1
    assert "x9" in report[0].message
    assert report[0].element_id == "worker"


def test_two_entry_tools_violate_single_entry_rule():
    second = ToolSpec(
        id="user_input_2", name="n", description="", kind=ToolKind.USER_INPUT
    )
    report = validate_graph(minimal_graph(second))
    assert any(r.rule == "single-entry" for r in report)


def test_zero_entry_tools_violate_single_entry_rule():
    report = validate_graph(MetaProgramGraph(tools=(t("a"),), variables=()))
    assert any(r.rule == "single-entry" for r in report)


def test_sink_with_outputs_is_flagged():
    sink = t("out", ToolKind.UI_OUTPUT, inputs=(("a", True),), outputs=("a",))
    report = validate_graph(minimal_graph(sink, variables=(v("a"),)))
    assert any(r.rule == "sink-with-outputs" for r in report)


def test_duplicate_variable_ids_flagged():
    graph = MetaProgramGraph(tools=(ENTRY,), variables=(v("a"), v("a", SemanticType.DATE)))
    assert any(r.rule == "duplicate-id" for r in validate_graph(graph))


def test_bad_id_format_flagged():
    graph = MetaProgramGraph(tools=(ENTRY,), variables=(v("Bad-Id"),))
    assert any(r.rule == "id-format" for r in validate_graph(graph))


# ---------------------------------------------------------------------------
# legal_tools


def brute_force_legal(graph, store, auth):
    """Independent oracle: check the legality predicate tool by tool."""
    result = set()
    for tool in graph.tools:
        if tool.kind is ToolKind.USER_INPUT:
            continue
        ok = all(store.is_bound(i.var) for i in tool.inputs if i.required)
        if tool.protected_service is not None and tool.kind is not ToolKind.AUTH_GATE:
            ok = ok and tool.protected_service in auth
        if ok:
            result.add(tool.id)
    return frozenset(result)


def test_empty_tool_set_gives_empty_result():
    graph = MetaProgramGraph(tools=(ENTRY,), variables=())
    store = VariableStore.initial(graph)
    assert legal_tools(graph, store, frozenset()) == frozenset()


def test_tool_needs_all_required_inputs():
    graph = minimal_graph(
        t("worker", inputs=(("a", True), ("b", True))), variables=(v("a"), v("b"))
    )
    store = VariableStore.initial(graph)
    store = bind_variable(store, "a", "1", Provenance(Provenance.INPUT_FORMATTER))
    assert legal_tools(graph, store, frozenset()) == brute_force_legal(graph, store, frozenset())
    assert "worker" not in legal_tools(graph, store, frozenset())
    store = bind_variable(store, "b", "2", Provenance(Provenance.INPUT_FORMATTER))
    assert legal_tools(graph, store, frozenset()) == frozenset({"worker"})


def test_unbound_date_excludes_download_tool():
    graph = minimal_graph(
        t("realm5_download", inputs=(("date", True),), outputs=("table",)),
        variables=(v("date", SemanticType.DATE), v("table", SemanticType.TABLE)),
    )
    store = VariableStore.initial(graph)
    assert "realm5_download" not in legal_tools(graph, store, frozenset())
    store = bind_variable(store, "date", "2024/5/1", Provenance(Provenance.USER_CLARIFICATION))
    assert "realm5_download" in legal_tools(graph, store, frozenset())


def test_protected_tool_needs_auth_but_gate_does_not():
    graph = minimal_graph(
        t("fetch", ToolKind.EXTERNAL_API, protected="svc"),
        t("gate", ToolKind.AUTH_GATE, protected="svc"),
    )
    store = VariableStore.initial(graph)
    assert legal_tools(graph, store, frozenset()) == frozenset({"gate"})
    assert legal_tools(graph, store, frozenset({"svc"})) == frozenset({"fetch", "gate"})


_ids = st.sampled_from([f"v{i}" for i in range(8)])


@st.composite
def random_graph_and_bindings(draw):
    var_ids = sorted(draw(st.sets(_ids, min_size=1, max_size=6)))
    variables = tuple(v(vid) for vid in var_ids)
    tools = [ENTRY]
    for i in range(draw(st.integers(0, 5))):
        n_inputs = draw(st.integers(0, min(3, len(var_ids))))
        chosen = draw(st.permutations(var_ids))[:n_inputs]
        required = [draw(st.booleans()) for _ in chosen]
        protected = draw(st.sampled_from([None, "s1", "s2"]))
        tools.append(
            t(
                f"tool{i}",
                draw(st.sampled_from([ToolKind.EXTERNAL_API, ToolKind.TRANSFORM, ToolKind.AUTH_GATE])),
                inputs=tuple(zip(chosen, required)),
                protected=protected,
            )
        )
    bind_order = draw(st.permutations(var_ids))
    auth = frozenset(draw(st.sets(st.sampled_from(["s1", "s2"]), max_size=2)))
    return MetaProgramGraph(tools=tools, variables=variables), list(bind_order), auth


@given(random_graph_and_bindings())
@settings(max_examples=120, deadline=None)
def test_legality_matches_oracle_and_is_monotone(case):
    graph, bind_order, auth = case
    store = VariableStore.initial(graph)
    previous = legal_tools(graph, store, auth)
    assert previous == brute_force_legal(graph, store, auth)
    for vid in bind_order:
        store = bind_variable(store, vid, "x", Provenance(Provenance.INPUT_FORMATTER))
        current = legal_tools(graph, store, auth)
        assert current == brute_force_legal(graph, store, auth)
        # binding more variables never shrinks the legal set
        assert previous <= current
        previous = current


def test_legal_tools_is_deterministic():
    graph = minimal_graph(t("a"), t("b", inputs=(("x", True),)), variables=(v("x"),))
    store = VariableStore.initial(graph)
    results = {legal_tools(graph, store, frozenset()) for _ in range(5)}
    assert len(results) == 1


# ---------------------------------------------------------------------------
# bind_variable


def test_bind_date_and_read_back():
    graph = minimal_graph(variables=(v("date", SemanticType.DATE),))
    store = VariableStore.initial(graph)
    store = bind_variable(store, "date", "2024/5/1", Provenance(Provenance.INPUT_FORMATTER))
    state = store.state("date")
    assert state.bound
    assert state.value == "2024/5/1"
    assert state.provenance.kind == Provenance.INPUT_FORMATTER


def test_bind_unknown_variable_errors():
    store = VariableStore.initial(minimal_graph())
    with pytest.raises(UnknownVariableError):
        bind_variable(store, "missing", "x", Provenance(Provenance.INPUT_FORMATTER))


def test_bind_table_payload_into_date_variable_errors():
    graph = minimal_graph(variables=(v("date", SemanticType.DATE),))
    store = VariableStore.initial(graph)
    with pytest.raises(TypeMismatchError):
        bind_variable(
            store,
            "date",
            {"columns": ["a"], "rows": []},
            Provenance(Provenance.INPUT_FORMATTER),
        )


def test_bind_leaves_other_entries_unchanged_and_old_store_intact():
    graph = minimal_graph(variables=(v("a"), v("b")))
    store0 = VariableStore.initial(graph)
    store1 = bind_variable(store0, "a", "1", Provenance(Provenance.INPUT_FORMATTER))
    assert not store0.is_bound("a")
    assert not store1.is_bound("b")
    assert store1.is_bound("a")


def test_rebinding_replaces_provenance():
    graph = minimal_graph(variables=(v("a"),))
    store = VariableStore.initial(graph)
    store = bind_variable(store, "a", "1", Provenance(Provenance.INPUT_FORMATTER))
    store = bind_variable(store, "a", "2", Provenance(Provenance.TOOL_OUTPUT, tool_id="w"))
    assert store.value("a") == "2"
    assert store.state("a").provenance.tool_id == "w"


# ---------------------------------------------------------------------------
# serialization


def realm5_fixture_graph():
    return minimal_graph(
        t("realm5_fetch", ToolKind.EXTERNAL_API, inputs=(("date", True),), outputs=("table",)),
        t("show", ToolKind.UI_OUTPUT, inputs=(("table", True),)),
        variables=(v("date", SemanticType.DATE), v("table", SemanticType.TABLE)),
    )


def test_round_trip_on_fixture_graph():
    graph = realm5_fixture_graph()
    assert deserialize_graph(serialize_graph(graph)) == graph


def test_deserialize_empty_text_is_parse_error():
    with pytest.raises(GraphParseError):
        deserialize_graph("")


def test_two_serializations_are_identical_bytes():
    graph = realm5_fixture_graph()
    assert serialize_graph(graph) == serialize_graph(graph)


def test_element_order_does_not_change_canonical_form():
    a = minimal_graph(t("b"), t("a"))
    b = minimal_graph(t("a"), t("b"))
    assert serialize_graph(a) == serialize_graph(b)
    assert a == b


def test_deserialize_invalid_graph_reports_validation_failure():
    graph = minimal_graph(t("w", inputs=(("ghost", True),)))
    text = serialize_graph(graph)
    with pytest.raises(GraphValidationError):
        deserialize_graph(text)


def random_valid_graph(rng: random.Random) -> MetaProgramGraph:
    """Build an arbitrary valid graph: any tool may reference any variable."""
    n_vars = rng.randint(0, 6)
    variables = tuple(
        v(f"var{i}", rng.choice(list(SemanticType))) for i in range(n_vars)
    )
    var_ids = [x.id for x in variables]
    tools = [ENTRY]
    for i in range(rng.randint(0, 6)):
        kind = rng.choice(
            [ToolKind.EXTERNAL_API, ToolKind.TRANSFORM, ToolKind.AUTH_GATE, ToolKind.UI_OUTPUT]
        )
        inputs = tuple(
            (vid, rng.random() < 0.7)
            for vid in rng.sample(var_ids, k=rng.randint(0, min(3, len(var_ids))))
        )
        outputs = ()
        if kind not in (ToolKind.UI_OUTPUT, ToolKind.RESPONSE_OUTPUT) and var_ids:
            outputs = tuple(rng.sample(var_ids, k=rng.randint(0, min(2, len(var_ids)))))
        tools.append(
            t(
                f"tool{i}",
                kind,
                inputs=inputs,
                outputs=outputs,
                protected=rng.choice([None, None, "svc"]),
            )
        )
    return MetaProgramGraph(tools=tools, variables=variables)


def test_round_trip_on_500_random_graphs():
    rng = random.Random(20240501)
    for _ in range(500):
        graph = random_valid_graph(rng)
        assert validate_graph(graph) == []
        text = serialize_graph(graph)
        restored = deserialize_graph(text)
        assert restored == graph
        assert serialize_graph(restored) == text


# ---------------------------------------------------------------------------
# merge_subgraph


def map_tool():
    return t("show_map", ToolKind.UI_OUTPUT, inputs=(("field_name", True),))


def test_merge_map_tool_extends_graph():
    base = minimal_graph()
    merged = merge_subgraph(
        base, [map_tool()], [v("field_name", SemanticType.GEO_FIELD)]
    )
    assert "show_map" in merged.tools_by_id
    assert validate_graph(merged) == []
    # original untouched
    assert "show_map" not in base.tools_by_id
    # new tool participates in legality immediately
    store = VariableStore.initial(merged)
    store = bind_variable(store, "field_name", "1863N", Provenance(Provenance.INPUT_FORMATTER))
    assert "show_map" in legal_tools(merged, store, frozenset())


def test_merge_empty_lists_is_identity():
    base = realm5_fixture_graph()
    assert merge_subgraph(base, [], []) == base


def test_merge_duplicate_id_collides():
    base = minimal_graph(map_tool(), variables=(v("field_name", SemanticType.GEO_FIELD),))
    with pytest.raises(IdCollisionError):
        merge_subgraph(base, [map_tool()], [])


def test_merge_invalid_result_rejected():
    base = minimal_graph()
    with pytest.raises(GraphValidationError):
        merge_subgraph(base, [t("w", inputs=(("ghost", True),))], [])
