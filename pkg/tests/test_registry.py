"""Registry: store semantics, persistence, retrieval ranking, graph builds."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowpilot.fixtures import (
    TASK_REALM5_PAGE,
    default_registry_entries,
    map_tool_entry,
    seed_registry,
)
from flowpilot.graph import (
    SemanticType,
    ToolInput,
    ToolKind,
    ToolSpec,
    VariableSpec,
    validate_graph,
)
from flowpilot.registry import (
    DuplicateEntryError,
    EntryNotFoundError,
    GraphBuildError,
    Registry,
    RegistryEntry,
    SessionRecord,
    overlap_score,
    tokenize,
)


def entry(tool_id, tags=(), doc="", kind=ToolKind.EXTERNAL_API, variables=()):
    tool = ToolSpec(id=tool_id, name=tool_id, description="", kind=kind)
    return RegistryEntry(descriptor=tool, tags=tuple(tags), doc=doc, variables=tuple(variables))


# ---------------------------------------------------------------------------
# store semantics


def test_register_then_lookup_returns_same_entry(tmp_path):
    registry = Registry(tmp_path)
    e = entry("realm5_fetch", tags=("realm5", "weather"))
    registry.register(e)
    assert registry.lookup("realm5_fetch") == e


def test_lookup_unknown_raises(tmp_path):
    registry = Registry(tmp_path)
    with pytest.raises(EntryNotFoundError):
        registry.lookup("ghost")


def test_register_duplicate_raises(tmp_path):
    registry = Registry(tmp_path)
    registry.register(entry("x"))
    with pytest.raises(DuplicateEntryError):
        registry.register(entry("x"))


def test_remove_then_lookup_raises(tmp_path):
    registry = Registry(tmp_path)
    registry.register(entry("x"))
    registry.remove("x")
    with pytest.raises(EntryNotFoundError):
        registry.lookup("x")
    with pytest.raises(EntryNotFoundError):
        registry.remove("x")


def test_persistence_round_trip_is_byte_identical(tmp_path):
    first = Registry(tmp_path)
    for e in default_registry_entries():
        first.register(e)
    files = {p.name: p.read_bytes() for p in (tmp_path / "tools").glob("*.json")}

    second = Registry(tmp_path)  # fresh process view
    assert second.entries() == first.entries()
    # re-register into a new directory: identical bytes per entry document
    other = Registry(tmp_path / "copy")
    for e in second.entries():
        other.register(e)
    copies = {p.name: p.read_bytes() for p in (tmp_path / "copy" / "tools").glob("*.json")}
    assert copies == files


def test_session_records_persisted_without_credentials(tmp_path):
    registry = Registry(tmp_path)
    registry.record_session(SessionRecord("s1", ("do a thing",), ("page_view",)))
    doc = json.loads((tmp_path / "sessions" / "s1.json").read_text())
    assert doc["instructions"] == ["do a thing"]
    assert "token" not in json.dumps(doc).lower()


# ---------------------------------------------------------------------------
# retrieval


def brute_force_retrieve(entries, task, k):
    """Oracle: score every entry, sort by (-score, id), keep mandatory always
    and at most k positive-score others."""
    tokens = tokenize(task)
    scored = sorted(
        ((overlap_score(tokens, e), e) for e in entries),
        key=lambda pair: (-pair[0], pair[1].entry_id),
    )
    result, picked = [], 0
    for score, e in scored:
        mandatory = e.is_tool and e.descriptor.kind in (
            ToolKind.USER_INPUT,
            ToolKind.UI_OUTPUT,
            ToolKind.RESPONSE_OUTPUT,
            ToolKind.AUTH_GATE,
        )
        if mandatory:
            result.append(e)
        elif score > 0 and picked < k:
            result.append(e)
            picked += 1
    return result


def test_hand_computed_ranking():
    # task tokens {download, realm5, data}; realm5_fetch shares {realm5},
    # gdrive_list shares nothing.
    registry = Registry()
    registry.register(entry("realm5_fetch", tags=("realm5", "weather")))
    registry.register(entry("gdrive_list", tags=("drive",)))
    result = registry.retrieve_relevant("download Realm5 data", k=5)
    assert [e.entry_id for e in result] == ["realm5_fetch"]


def test_k_zero_returns_only_mandatory():
    registry = Registry()
    registry.register(entry("user_input", kind=ToolKind.USER_INPUT))
    registry.register(entry("sink", kind=ToolKind.UI_OUTPUT))
    registry.register(entry("scored", tags=("alpha",)))
    result = registry.retrieve_relevant("alpha task", k=0)
    assert sorted(e.entry_id for e in result) == ["sink", "user_input"]


def test_k_at_least_registry_size_returns_all_positive():
    registry = Registry()
    registry.register(entry("a", tags=("alpha",)))
    registry.register(entry("b", tags=("alpha", "beta")))
    registry.register(entry("c", tags=("gamma",)))
    result = registry.retrieve_relevant("alpha beta", k=100)
    assert [e.entry_id for e in result] == ["b", "a"]  # 2 shared beats 1, none for c


def test_ties_break_by_ascending_id():
    registry = Registry()
    registry.register(entry("zeta", tags=("alpha",)))
    registry.register(entry("beta", tags=("alpha",)))
    result = registry.retrieve_relevant("alpha", k=10)
    assert [e.entry_id for e in result] == ["beta", "zeta"]


def test_negative_k_rejected():
    registry = Registry()
    registry.register(entry("a"))
    with pytest.raises(ValueError):
        registry.retrieve_relevant("x", k=-1)


_words = st.sampled_from(
    ["alpha", "beta", "gamma", "delta", "drive", "realm5", "plot", "data", "field", "map"]
)


@st.composite
def random_registry_and_task(draw):
    registry = Registry()
    n = draw(st.integers(1, 10))
    for i in range(n):
        kind = draw(
            st.sampled_from(
                [
                    ToolKind.EXTERNAL_API,
                    ToolKind.TRANSFORM,
                    ToolKind.USER_INPUT,
                    ToolKind.UI_OUTPUT,
                    ToolKind.AUTH_GATE,
                ]
            )
        )
        tags = tuple(draw(st.lists(_words, max_size=4)))
        doc = " ".join(draw(st.lists(_words, max_size=5)))
        registry.register(entry(f"e{i:02d}", tags=tags, doc=doc, kind=kind))
    task = " ".join(draw(st.lists(_words, min_size=1, max_size=6)))
    return registry, task


@given(random_registry_and_task())
@settings(max_examples=100, deadline=None)
def test_unbounded_retrieval_equals_brute_force_oracle(case):
    registry, task = case
    got = registry.retrieve_relevant(task, k=len(registry) + 10)
    expected = brute_force_retrieve(registry.entries(), task, k=len(registry) + 10)
    assert [e.entry_id for e in got] == [e.entry_id for e in expected]


# ---------------------------------------------------------------------------
# build_graph_for_task


def test_realm5_task_graph_contains_expected_tools(registry):
    graph = registry.build_graph_for_task(TASK_REALM5_PAGE, k=12)
    ids = set(graph.tools_by_id)
    assert {"realm5_fetch", "adma_page_url", "download_btn", "user_input"} <= ids
    assert validate_graph(graph) == []


def test_zero_score_task_gets_mandatory_graph(registry):
    graph = registry.build_graph_for_task("xyzzy qwerty", k=12)
    kinds = {t.kind for t in graph.tools}
    assert kinds <= {
        ToolKind.USER_INPUT,
        ToolKind.UI_OUTPUT,
        ToolKind.RESPONSE_OUTPUT,
        ToolKind.AUTH_GATE,
    }
    assert validate_graph(graph) == []


def test_every_built_graph_validates(registry):
    for task in (
        "Download the file for Realm5 data on 2024/5/1",
        "list my Google drive root folder",
        "plot temperature, humidity and wind speed",
        "I want to know how to use ADMA.",
    ):
        assert validate_graph(registry.build_graph_for_task(task, k=12)) == []


def test_conflicting_variable_declarations_invalidate_graph():
    registry = Registry()
    var_a = VariableSpec(id="x", name="x", description="", semantic_type=SemanticType.TEXT)
    var_b = VariableSpec(id="x", name="x", description="", semantic_type=SemanticType.DATE)
    t1 = ToolSpec(
        id="t1", name="t1", description="", kind=ToolKind.USER_INPUT,
    )
    t2 = ToolSpec(
        id="t2",
        name="t2",
        description="",
        kind=ToolKind.EXTERNAL_API,
        inputs=(ToolInput(param="x", var="x"),),
    )
    registry.register(RegistryEntry(descriptor=t1, tags=("alpha",), variables=(var_a,)))
    registry.register(RegistryEntry(descriptor=t2, tags=("alpha",), variables=(var_b,)))
    with pytest.raises(GraphBuildError):
        registry.build_graph_for_task("alpha", k=5)


def test_empty_registry_cannot_build():
    with pytest.raises(GraphBuildError):
        Registry().build_graph_for_task("anything", k=3)


def test_map_entry_becomes_mandatory_once_registered(tmp_path):
    registry = seed_registry(tmp_path / "reg")
    before = registry.build_graph_for_task("I want to see the map for the field named 1863N", k=12)
    assert "show_map" not in before.tools_by_id
    registry.register(map_tool_entry())
    after = registry.build_graph_for_task("I want to see the map for the field named 1863N", k=12)
    assert "show_map" in after.tools_by_id
    assert validate_graph(after) == []
