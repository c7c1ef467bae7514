"""Built-in descriptors, fixture bundle and scripted agent tables.

Everything here is data: the default tool/variable registry, the on-disk
state of the mock services, and the pattern tables that drive the scripted
backends through each supported scenario. ``fixtures init`` writes all of it
out; tests build the same objects in memory.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .backends import AgentBackends, ScriptedBackend, ScriptedEntry
from .graph import SemanticType, ToolInput, ToolKind, ToolSpec, VariableSpec
from .registry import Registry, RegistryEntry

# Rendering overrides for sinks whose kind cannot be derived from their
# payload variable's semantic type.
SINK_KIND_OVERRIDES = {"show_plot": "plot_spec"}

REALM5_DATE = "2024-05-01"

REALM5_CSV = (
    "timestamp,temperature,humidity,wind_speed\n"
    "2024-05-01T00:00,12.4,71,3.1\n"
    "2024-05-01T04:00,11.8,74,2.6\n"
    "2024-05-01T08:00,15.3,62,4.2\n"
    "2024-05-01T12:00,19.7,48,5.8\n"
    "2024-05-01T16:00,21.2,43,6.1\n"
    "2024-05-01T20:00,16.9,55,4.0\n"
)


def _v(vid: str, name: str, description: str, semantic_type: SemanticType) -> VariableSpec:
    return VariableSpec(id=vid, name=name, description=description, semantic_type=semantic_type)


VARIABLES: dict[str, VariableSpec] = {
    v.id: v
    for v in (
        _v("menu", "Menu name", "Section of the data platform holding the file", SemanticType.TEXT),
        _v("date", "Date", "Date of interest, e.g. 2024/5/1", SemanticType.DATE),
        _v("metrics", "Metrics", "Comma separated sensor metrics to plot", SemanticType.TEXT),
        _v("drive_path", "Drive path", "Path of a file on the cloud drive", SemanticType.PATH),
        _v("folder", "Drive folder", "Folder on the cloud drive to list", SemanticType.PATH),
        _v("dest_path", "Destination folder", "Destination folder on ADMA", SemanticType.PATH),
        _v("file", "File payload", "Downloaded or uploaded file contents", SemanticType.FILE_REF),
        _v("adma_path", "ADMA path", "Path of a file or directory on ADMA", SemanticType.PATH),
        _v("page_url", "Page URL", "Web page address to open", SemanticType.URL),
        _v("table_view", "Table", "Tabular result to display", SemanticType.TABLE),
        _v("sensor_table", "Sensor table", "Raw sensor series for one day", SemanticType.TABLE),
        _v("plot_series", "Plot series", "Projected series ready for charting", SemanticType.TABLE),
        _v("keyword", "Keyword", "Search keyword for file names", SemanticType.TEXT),
        _v("answer", "Answer text", "Free-text answer for the user", SemanticType.TEXT),
        _v("field_name", "Field name", "Named field on the extension farm", SemanticType.GEO_FIELD),
    )
}


def _tool(
    tool_id: str,
    name: str,
    description: str,
    kind: ToolKind,
    inputs: tuple[tuple[str, str], ...] = (),
    outputs: tuple[str, ...] = (),
    protected_service: str | None = None,
) -> ToolSpec:
    return ToolSpec(
        id=tool_id,
        name=name,
        description=description,
        kind=kind,
        inputs=tuple(ToolInput(param=p, var=v) for p, v in inputs),
        outputs=outputs,
        protected_service=protected_service,
    )


def _entry(tool: ToolSpec, tags: tuple[str, ...], doc: str) -> RegistryEntry:
    vars_used = {i.var for i in tool.inputs} | set(tool.outputs)
    return RegistryEntry(
        descriptor=tool,
        tags=tags,
        doc=doc,
        variables=tuple(VARIABLES[v] for v in sorted(vars_used)),
    )


def default_registry_entries() -> list[RegistryEntry]:
    """The shipped tool set: entry node, external services, transforms and
    output sinks, each tagged for lexical retrieval."""
    return [
        _entry(
            _tool("user_input", "User input", "Entry node fed by the chat box", ToolKind.USER_INPUT),
            ("input", "instruction", "chat"),
            "Entry node; binds variable values extracted from each instruction.",
        ),
        _entry(
            _tool(
                "gdrive_auth",
                "Google Drive sign-in",
                "Authenticate the session against Google Drive",
                ToolKind.AUTH_GATE,
                protected_service="google",
            ),
            ("google", "drive", "auth", "authenticate", "credentials", "token", "login"),
            "Pauses sessions lacking Google credentials.",
        ),
        _entry(
            _tool(
                "adma_auth",
                "ADMA sign-in",
                "Authenticate the session against ADMA",
                ToolKind.AUTH_GATE,
                protected_service="adma",
            ),
            ("adma", "auth", "authenticate", "credentials", "token", "login"),
            "Pauses sessions lacking ADMA credentials.",
        ),
        _entry(
            _tool(
                "gdrive_list",
                "List drive folder",
                "List the files in a Google Drive folder",
                ToolKind.EXTERNAL_API,
                inputs=(("folder", "folder"),),
                outputs=("table_view",),
                protected_service="google",
            ),
            ("google", "drive", "list", "folder", "files"),
            "Tabulates file names plus sizes under that folder.",
        ),
        _entry(
            _tool(
                "gdrive_download",
                "Download from drive",
                "Fetch a file from Google Drive",
                ToolKind.EXTERNAL_API,
                inputs=(("path", "drive_path"),),
                outputs=("file",),
                protected_service="google",
            ),
            ("google", "drive", "download", "file", "fetch"),
            "Fetches drive file content by path.",
        ),
        _entry(
            _tool(
                "adma_upload",
                "Upload to ADMA",
                "Store a file under a destination folder on ADMA",
                ToolKind.EXTERNAL_API,
                inputs=(("file", "file"), ("dest", "dest_path")),
                outputs=("adma_path",),
                protected_service="adma",
            ),
            ("adma", "upload", "transfer", "file", "store"),
            "Creates exactly one new platform entry, returning its path.",
        ),
        _entry(
            _tool(
                "adma_download",
                "Download from ADMA",
                "Fetch a file stored on ADMA",
                ToolKind.EXTERNAL_API,
                inputs=(("path", "adma_path"),),
                outputs=("file",),
                protected_service="adma",
            ),
            ("adma", "download", "file", "data", "fetch"),
            "Fetches stored file content by path.",
        ),
        _entry(
            _tool(
                "adma_page_url",
                "ADMA page url",
                "Build the web page address for an entry on ADMA",
                ToolKind.EXTERNAL_API,
                inputs=(("path", "adma_path"),),
                outputs=("page_url",),
            ),
            ("adma", "page", "url", "open", "go", "directory", "folder", "view"),
            "Builds web addresses covering files plus directories.",
        ),
        _entry(
            _tool(
                "adma_metadata",
                "ADMA metadata",
                "Read the metadata record of an ADMA entry",
                ToolKind.EXTERNAL_API,
                inputs=(("path", "adma_path"),),
                outputs=("table_view",),
            ),
            ("adma", "metadata", "meta", "data", "check", "information"),
            "Tabulates key/value metadata records.",
        ),
        _entry(
            _tool(
                "adma_search",
                "ADMA search",
                "Find the unique file whose name contains a keyword",
                ToolKind.EXTERNAL_API,
                inputs=(("keyword", "keyword"),),
                outputs=("adma_path",),
            ),
            ("adma", "search", "keyword", "find", "name", "contains"),
            "Errors unless exactly one file name contains that keyword.",
        ),
        _entry(
            _tool(
                "adma_docs_url",
                "ADMA documentation",
                "Address of the ADMA documentation page",
                ToolKind.TRANSFORM,
                outputs=("page_url",),
            ),
            ("adma", "docs", "documentation", "how", "use", "help", "know"),
            "Documentation landing page; answers how-do-I questions.",
        ),
        _entry(
            _tool(
                "adma_home_url",
                "ADMA home",
                "Address of the ADMA main page",
                ToolKind.TRANSFORM,
                outputs=("page_url",),
            ),
            ("adma", "home", "main", "page", "go"),
            "Main landing page address.",
        ),
        _entry(
            _tool(
                "realm5_path_gen",
                "Realm5 path generator",
                "Derive the ADMA path of a Realm5 data file from menu and date",
                ToolKind.TRANSFORM,
                inputs=(("menu", "menu"), ("date", "date")),
                outputs=("adma_path",),
            ),
            ("realm5", "path", "date", "menu", "generate", "data", "file"),
            "Maps menu name plus date onto its stored file path.",
        ),
        _entry(
            _tool(
                "realm5_fetch",
                "Realm5 fetch",
                "Fetch one day of weather sensor readings from Realm5",
                ToolKind.EXTERNAL_API,
                inputs=(("date", "date"),),
                outputs=("sensor_table",),
            ),
            ("realm5", "weather", "sensor", "temperature", "humidity", "wind", "speed", "data"),
            "Daily series: timestamp, temperature, humidity, wind_speed.",
        ),
        _entry(
            _tool(
                "plot",
                "Plot metrics",
                "Project a sensor table down to the requested metrics",
                ToolKind.TRANSFORM,
                inputs=(("table", "sensor_table"), ("metrics", "metrics")),
                outputs=("plot_series",),
            ),
            ("plot", "chart", "draw", "metrics", "series", "temperature", "humidity", "wind", "speed"),
            "Prepares chart-ready series.",
        ),
        _entry(
            _tool(
                "jd_operations",
                "John Deere operations",
                "Field operation records for a date",
                ToolKind.EXTERNAL_API,
                inputs=(("date", "date"),),
                outputs=("table_view",),
                protected_service="johndeere",
            ),
            ("john", "deere", "operations", "machinery", "equipment"),
            "Stub integration; yields empty operation tables.",
        ),
        _entry(
            _tool(
                "open_page",
                "Open page",
                "Show a web page to the user",
                ToolKind.UI_OUTPUT,
                inputs=(("url", "page_url"),),
            ),
            ("page", "open", "web", "view"),
            "Embeds whatever address got bound.",
        ),
        _entry(
            _tool(
                "show_table",
                "Show table",
                "Display a table to the user",
                ToolKind.UI_OUTPUT,
                inputs=(("table", "table_view"),),
            ),
            ("table", "display", "grid"),
            "Grid view over bound tables.",
        ),
        _entry(
            _tool(
                "show_plot",
                "Show plot",
                "Display a chart of the prepared series",
                ToolKind.UI_OUTPUT,
                inputs=(("plot", "plot_series"),),
            ),
            ("plot", "chart", "display"),
            "Charts bound series; values pass through verbatim.",
        ),
        _entry(
            _tool(
                "download_btn",
                "Download button",
                "Offer a file to the user as a download",
                ToolKind.UI_OUTPUT,
                inputs=(("file", "file"),),
            ),
            ("download", "button", "file", "save"),
            "Pops up download buttons over bound files.",
        ),
        _entry(
            _tool(
                "respond",
                "Respond",
                "Answer the user in natural language",
                ToolKind.RESPONSE_OUTPUT,
                inputs=(("text", "answer"),),
            ),
            ("respond", "answer", "text", "reply"),
            "Phrases bound answer text conversationally.",
        ),
    ]


def map_tool_entry() -> RegistryEntry:
    """The extension descriptor from the map demo: registering it (no engine
    change) makes map tasks renderable."""
    tool = _tool(
        "show_map",
        "Field map",
        "Draw the map for a named field on the extension farm",
        ToolKind.UI_OUTPUT,
        inputs=(("field", "field_name"),),
    )
    return RegistryEntry(
        descriptor=tool,
        tags=("map", "field", "farm", "draw", "see"),
        doc="Renders that field's polygon.",
        variables=(VARIABLES["field_name"],),
    )


# ---------------------------------------------------------------------------
# Scenario tasks


TASK_A = "Go to directory 1 under root folder of ADMA"
TASK_B = "Check the meta data of calculate_ndvi.py on ADMA"
TASK_C = "Open the page on ADMA, the name of which contains the keyword soil"
TASK_D = "Download the file for Realm5 data on 2024/5/1"
TASK_E = (
    "Transfer the adma_test/test.txt on my google drive to my ADMA root folder, "
    "and open the uploaded file"
)
TASK_E2 = (
    "Transfer the adma_test/test.txt on my google drive to my ADMA root folder, "
    "and then download the uploaded file"
)
TASK_REALM5_PAGE = "go to the file for Realm5 data on 2024/5/1"
TASK_PLOT = "plot temperature, humidity and wind speed"
TASK_DOCS = "I want to know how to use ADMA."
TASK_HOME = "go to ADMA"
TASK_MAP = "I want to see the map for the field named 1863N"
TASK_DRIVE_LIST = "list my Google drive root folder"
TASK_PRIVATE_DOWNLOAD = "download the Realm5 data on 2024/5/1 on ADMA"
TASK_FLEX_1 = "download the file adma_test/test.txt on Google drive"
TASK_FLEX_2 = "I need to check the file adma_test/test.txt on Google drive"

BENCH_TASKS = (TASK_A, TASK_B, TASK_C, TASK_D, TASK_E)

# Authored step plans: tool sequence recorded in the trace for each scenario
# (entry step, tool executions, then the finishing sink).
SCENARIO_PLANS: dict[str, tuple[str, ...]] = {
    TASK_A: ("user_input", "adma_page_url", "open_page"),
    TASK_B: ("user_input", "adma_search", "adma_metadata", "show_table"),
    TASK_C: ("user_input", "adma_search", "adma_page_url", "open_page"),
    TASK_D: ("user_input", "realm5_path_gen", "adma_download", "download_btn"),
    TASK_E: (
        "user_input",
        "gdrive_auth",
        "gdrive_download",
        "adma_upload",
        "adma_page_url",
        "open_page",
    ),
    TASK_E2: (
        "user_input",
        "gdrive_auth",
        "gdrive_download",
        "adma_upload",
        "download_btn",
    ),
    TASK_REALM5_PAGE: ("user_input", "realm5_path_gen", "adma_page_url", "open_page"),
    # Includes the clarification answer the run pauses for.
    TASK_PLOT: ("user_input", "user_input", "realm5_fetch", "plot", "show_plot"),
    TASK_DOCS: ("user_input", "adma_docs_url", "open_page"),
    TASK_MAP: ("user_input", "show_map"),
}

SCENARIO_OUTPUT_KINDS: dict[str, str] = {
    TASK_A: "page_view",
    TASK_B: "table",
    TASK_C: "page_view",
    TASK_D: "download_button",
    TASK_E: "page_view",
    TASK_E2: "download_button",
    TASK_REALM5_PAGE: "page_view",
    TASK_PLOT: "plot_spec",
    TASK_DOCS: "page_view",
    TASK_MAP: "map_view",
}

CLARIFY_DATE_PROMPT = "Please input a data string for Realm5."


def controller_table() -> list[ScriptedEntry]:
    """Controller decisions keyed on the prompt's task/state fingerprint.

    Task-specific rules come first; the generic rules key on bound-variable
    sets and the last executed tool, so paraphrased instructions reuse them.
    """
    e = ScriptedEntry
    return [
        # -- task-disambiguated rules (same state, different goals) ---------
        e(f"task: {TASK_B}\nstate: bound=[keyword] last=[user_input]", "CALL adma_search"),
        e(f"task: {TASK_B}\nstate: bound=[adma_path,keyword] last=[adma_search]", "CALL adma_metadata"),
        e(f"task: {TASK_C}\nstate: bound=[keyword] last=[user_input]", "CALL adma_search"),
        e(f"task: {TASK_C}\nstate: bound=[adma_path,keyword] last=[adma_search]", "CALL adma_page_url"),
        e(
            f"task: {TASK_E}\nstate: bound=[adma_path,dest_path,drive_path,file] last=[adma_upload]",
            "CALL adma_page_url",
        ),
        e(
            f"task: {TASK_E2}\nstate: bound=[adma_path,dest_path,drive_path,file] last=[adma_upload]",
            "FINISH download_btn",
        ),
        e(f"task: {TASK_DOCS}\nstate: bound=[] last=[user_input]", "CALL adma_docs_url"),
        e(f"task: {TASK_HOME}\nstate: bound=[] last=[user_input]", "CALL adma_home_url"),
        e(
            "plot the sensor data\nstate: bound=[] last=[user_input]",
            "ASK metrics Please list the metrics to plot",
        ),
        e(
            f"task: {TASK_REALM5_PAGE}\nstate: bound=[adma_path,date,menu] last=[realm5_path_gen]",
            "CALL adma_page_url",
        ),
        # -- generic routing keyed on state --------------------------------
        e("state: bound=[adma_path] last=[user_input]", "CALL adma_page_url"),
        e("state: bound=[date,menu] last=[user_input]", "CALL realm5_path_gen"),
        e("last=[realm5_path_gen] auth=[]", "CALL adma_auth"),
        e("last=[realm5_path_gen] auth=[adma", "CALL adma_download"),
        e("state: bound=[dest_path,drive_path] last=[user_input]", "CALL gdrive_auth"),
        e("state: bound=[dest_path,drive_path] last=[gdrive_auth]", "CALL gdrive_download"),
        e("state: bound=[dest_path,drive_path,file] last=[gdrive_download]", "CALL adma_upload"),
        e("state: bound=[drive_path] last=[user_input]", "CALL gdrive_auth"),
        e("state: bound=[drive_path] last=[gdrive_auth]", "CALL gdrive_download"),
        e("state: bound=[drive_path,file] last=[gdrive_download]", "FINISH download_btn"),
        e("state: bound=[folder] last=[user_input]", "CALL gdrive_auth"),
        e("state: bound=[folder] last=[gdrive_auth]", "CALL gdrive_list"),
        e("state: bound=[metrics] last=[user_input]", f"ASK date {CLARIFY_DATE_PROMPT}"),
        e("state: bound=[menu] last=[user_input]", f"ASK date {CLARIFY_DATE_PROMPT}"),
        e("state: bound=[date,metrics] last=[user_input]", "CALL realm5_fetch"),
        e("last=[realm5_fetch]", "CALL plot"),
        e("last=[plot]", "FINISH show_plot"),
        e("state: bound=[field_name] last=[user_input]", "FINISH show_map"),
        # -- finishing rules -------------------------------------------------
        e("last=[adma_page_url]", "FINISH open_page"),
        e("last=[adma_docs_url]", "FINISH open_page"),
        e("last=[adma_home_url]", "FINISH open_page"),
        e("last=[adma_metadata]", "FINISH show_table"),
        e("last=[gdrive_list]", "FINISH show_table"),
        e("last=[adma_download]", "FINISH download_btn"),
    ]


def input_formatter_table() -> list[ScriptedEntry]:
    """Instruction fragments to binding proposals. Longer, more specific
    fragments come first so combined phrases win over their parts."""
    e = ScriptedEntry
    return [
        e(
            "temperature, humidity and wind speed on 2024/5/1",
            "BIND metrics temperature,humidity,wind speed\nBIND date 2024/5/1",
        ),
        e("temperature, humidity and wind speed", "BIND metrics temperature,humidity,wind speed"),
        e("Realm5 data on 2024/5/1", "BIND menu Realm5\nBIND date 2024/5/1"),
        e("Realm5 data", "BIND menu Realm5"),
        e("directory 1 under root folder", "BIND adma_path directory 1"),
        e("calculate_ndvi.py", "BIND keyword calculate_ndvi.py"),
        e("keyword soil", "BIND keyword soil"),
        e(
            "adma_test/test.txt on my google drive to my ADMA root folder",
            "BIND drive_path adma_test/test.txt\nBIND dest_path /",
        ),
        e("adma_test/test.txt on Google drive", "BIND drive_path adma_test/test.txt"),
        e("list my Google drive root folder", "BIND folder /"),
        e("field named 1863N", "BIND field_name 1863N"),
    ]


def output_formatter_table() -> list[ScriptedEntry]:
    # No authored phrasings: the fallback passes bound values through verbatim.
    return []


def scripted_backends() -> AgentBackends:
    return AgentBackends(
        controller=ScriptedBackend(controller_table()),
        input_formatter=ScriptedBackend(input_formatter_table()),
        output_formatter=ScriptedBackend(output_formatter_table()),
    )


def scripted_backends_from_dir(path: str | Path) -> AgentBackends:
    root = Path(path)
    return AgentBackends(
        controller=ScriptedBackend.from_file(root / "controller.json"),
        input_formatter=ScriptedBackend.from_file(root / "input_formatter.json"),
        output_formatter=ScriptedBackend.from_file(root / "output_formatter.json"),
    )


# ---------------------------------------------------------------------------
# On-disk artifacts


ADMA_FIXTURE_FILES: dict[str, str] = {
    "calculate_ndvi.py": "import sys\n\n# compute NDVI from red and NIR bands\n",
    "soil_report.txt": "Soil sampling summary for the north plots.\n",
    f"realm5/{REALM5_DATE}.csv": REALM5_CSV,
    "directory 1/readme.txt": "Files shared by the field crew.\n",
}

ADMA_FIXTURE_META: dict[str, dict[str, str]] = {
    "calculate_ndvi.py": {
        "owner": "research",
        "format": "python",
        "modified": "2024-04-18",
        "description": "NDVI calculator tool",
    },
    "soil_report.txt": {
        "owner": "field-crew",
        "format": "text",
        "modified": "2024-03-02",
        "description": "Soil sampling summary",
    },
    f"realm5/{REALM5_DATE}.csv": {
        "owner": "sensors",
        "format": "csv",
        "modified": REALM5_DATE,
        "description": "Realm5 weather series",
    },
}

DRIVE_FIXTURE_FILES: dict[str, str] = {
    "adma_test/test.txt": "hello from the cloud drive\n",
}


def write_fixture_bundle(bundle_dir: str | Path) -> Path:
    """Materialize the mock-service state: drive files, the data-platform
    tree with metadata sidecars, and the sensor CSVs."""
    bundle = Path(bundle_dir)
    for rel, content in DRIVE_FIXTURE_FILES.items():
        path = bundle / "drive" / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
    for rel, content in ADMA_FIXTURE_FILES.items():
        path = bundle / "adma" / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
    for rel, meta in ADMA_FIXTURE_META.items():
        path = bundle / "adma" / f"{rel}.meta.json"
        path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    realm5_dir = bundle / "realm5"
    realm5_dir.mkdir(parents=True, exist_ok=True)
    (realm5_dir / f"{REALM5_DATE}.csv").write_text(REALM5_CSV, encoding="utf-8")
    return bundle


def seed_registry(registry_dir: str | Path, include_map_tool: bool = False) -> Registry:
    registry = Registry(registry_dir)
    for entry in default_registry_entries():
        registry.register(entry)
    if include_map_tool:
        registry.register(map_tool_entry())
    return registry


def write_scripted_tables(scripted_dir: str | Path) -> Path:
    root = Path(scripted_dir)
    root.mkdir(parents=True, exist_ok=True)
    ScriptedBackend(controller_table()).dump(root / "controller.json")
    ScriptedBackend(input_formatter_table()).dump(root / "input_formatter.json")
    ScriptedBackend(output_formatter_table()).dump(root / "output_formatter.json")
    return root


def realm5_fixture_rows() -> tuple[list[str], list[list[str]]]:
    """The fixture CSV parsed with values kept as strings (byte-faithful)."""
    rows = [row for row in csv.reader(io.StringIO(REALM5_CSV)) if row]
    return rows[0], rows[1:]
