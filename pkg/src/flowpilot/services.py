"""In-process mock services standing in for the external systems.

State is loaded from an on-disk fixture bundle into memory; reads never
mutate anything and uploads touch only the in-memory view, so a bundle can
be shared and reloaded freely. The same operations are exposable over HTTP
for UI and system tests.
"""

from __future__ import annotations

import base64
import csv
import io
import json
import threading
import urllib.parse
from pathlib import Path
from typing import Any

from .runtime import (
    AdapterRegistry,
    AmbiguousMatchError,
    FunctionAdapter,
    NotFoundError,
    ToolFailureError,
)

ADMA_BASE_URL = "http://adma.local"

SERVICES = ("google", "adma", "realm5", "johndeere")


def normalize_date(raw: str) -> str:
    """Accept YYYY/M/D or YYYY-M-D and produce zero-padded YYYY-MM-DD."""
    cleaned = raw.strip().replace("/", "-")
    parts = cleaned.split("-")
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise ToolFailureError(f"unrecognized date: {raw!r}")
    year, month, day = parts
    return f"{int(year):04d}-{int(month):02d}-{int(day):02d}"


def file_ref(name: str, content: bytes) -> dict[str, str]:
    return {"name": name, "content_b64": base64.b64encode(content).decode("ascii")}


def file_ref_bytes(ref: dict[str, str]) -> bytes:
    return base64.b64decode(ref["content_b64"])


def _csv_table(text: str) -> dict[str, Any]:
    reader = csv.reader(io.StringIO(text))
    rows = [row for row in reader if row]
    if not rows:
        return {"columns": [], "rows": []}
    return {"columns": rows[0], "rows": rows[1:]}


class MockServiceState:
    """Fixture-backed state for every mock service.

    Layout of a bundle directory:
      drive/              cloud-drive files
      adma/               data-platform tree, ``*.meta.json`` sidecars
      realm5/<date>.csv   sensor series (timestamp, temperature, humidity,
                          wind_speed)
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.drive_files: dict[str, bytes] = {}
        self.adma_files: dict[str, bytes] = {}
        self.adma_meta: dict[str, dict[str, Any]] = {}
        self.adma_dirs: set[str] = set()
        self.realm5_series: dict[str, str] = {}

    @classmethod
    def from_dir(cls, bundle_dir: str | Path) -> "MockServiceState":
        bundle = Path(bundle_dir)
        if not bundle.is_dir():
            raise FileNotFoundError(f"fixture bundle not found: {bundle}")
        state = cls()
        drive_root = bundle / "drive"
        if drive_root.is_dir():
            for path in sorted(drive_root.rglob("*")):
                if path.is_file():
                    state.drive_files[path.relative_to(drive_root).as_posix()] = path.read_bytes()
        adma_root = bundle / "adma"
        if adma_root.is_dir():
            for path in sorted(adma_root.rglob("*")):
                rel = path.relative_to(adma_root).as_posix()
                if path.is_dir():
                    state.adma_dirs.add(rel)
                elif rel.endswith(".meta.json"):
                    target = rel[: -len(".meta.json")]
                    state.adma_meta[target] = json.loads(path.read_text(encoding="utf-8"))
                else:
                    state.adma_files[rel] = path.read_bytes()
        realm5_root = bundle / "realm5"
        if realm5_root.is_dir():
            for path in sorted(realm5_root.glob("*.csv")):
                state.realm5_series[path.stem] = path.read_text(encoding="utf-8")
        return state

    # -- drive ------------------------------------------------------------

    def drive_download(self, path: str) -> dict[str, str]:
        key = path.strip("/")
        content = self.drive_files.get(key)
        if content is None:
            raise NotFoundError(f"no drive file at {path!r}")
        return file_ref(key.rsplit("/", 1)[-1], content)

    def drive_list(self, folder: str) -> dict[str, Any]:
        prefix = folder.strip("/")
        rows = []
        for key in sorted(self.drive_files):
            if not prefix or key.startswith(prefix + "/"):
                rows.append([key, str(len(self.drive_files[key]))])
        return {"columns": ["name", "size"], "rows": rows}

    # -- data platform -----------------------------------------------------

    def _adma_exists(self, key: str) -> bool:
        return key in self.adma_files or key in self.adma_dirs

    def adma_upload(self, file: dict[str, str], dest: str) -> str:
        name = file["name"]
        prefix = dest.strip("/")
        key = f"{prefix}/{name}" if prefix else name
        with self._lock:
            self.adma_files[key] = file_ref_bytes(file)
            self.adma_meta[key] = {"origin": "upload", "size": str(len(self.adma_files[key]))}
        return key

    def adma_download(self, path: str) -> dict[str, str]:
        key = path.strip("/")
        content = self.adma_files.get(key)
        if content is None:
            raise NotFoundError(f"no file at {path!r}")
        return file_ref(key.rsplit("/", 1)[-1], content)

    def adma_page_url(self, path: str) -> str:
        key = path.strip("/")
        if not self._adma_exists(key):
            raise NotFoundError(f"no entry at {path!r}")
        return f"{ADMA_BASE_URL}/view/{urllib.parse.quote(key)}"

    def adma_metadata(self, path: str) -> dict[str, Any]:
        key = path.strip("/")
        if not self._adma_exists(key):
            raise NotFoundError(f"no entry at {path!r}")
        meta = dict(self.adma_meta.get(key, {}))
        meta.setdefault("path", key)
        rows = [[k, str(v)] for k, v in sorted(meta.items())]
        return {"columns": ["key", "value"], "rows": rows}

    def adma_search(self, keyword: str) -> str:
        needle = keyword.strip().lower()
        matches = [
            key
            for key in sorted(self.adma_files)
            if needle in key.rsplit("/", 1)[-1].lower()
        ]
        if not matches:
            raise NotFoundError(f"no file name contains {keyword!r}")
        if len(matches) > 1:
            raise AmbiguousMatchError(f"keyword {keyword!r} matches {len(matches)} files: {matches}")
        return matches[0]

    # -- sensors ------------------------------------------------------------

    def realm5_fetch(self, date: str) -> dict[str, Any]:
        key = normalize_date(date)
        text = self.realm5_series.get(key)
        if text is None:
            raise NotFoundError(f"no sensor data for {date!r}")
        return _csv_table(text)

    def johndeere_operations(self, date: str) -> dict[str, Any]:
        # Stub integration: the registry advertises it, but no scenario
        # exercises real behavior yet.
        normalize_date(date)
        return {"columns": ["operation", "field", "time"], "rows": []}


# ---------------------------------------------------------------------------
# Pure transforms (no service state)


def realm5_path_gen(menu: str, date: str) -> str:
    return f"{menu.strip().lower()}/{normalize_date(date)}.csv"


def select_metrics(table: dict[str, Any], metrics: str) -> dict[str, Any]:
    """Project a sensor table down to timestamp plus the requested metric
    columns. Metric names tolerate spaces ('wind speed' -> wind_speed)."""
    wanted = [m.strip().replace(" ", "_") for m in metrics.split(",") if m.strip()]
    if not wanted:
        raise ToolFailureError("no metrics requested")
    columns = table["columns"]
    missing = [m for m in wanted if m not in columns]
    if missing:
        raise NotFoundError(f"metrics not in table: {missing}")
    keep = [0] + [columns.index(m) for m in wanted]
    return {
        "columns": [columns[i] for i in keep],
        "rows": [[row[i] for i in keep] for row in table["rows"]],
    }


def identity_text(text: str) -> str:
    return text


# ---------------------------------------------------------------------------
# Adapter wiring


def builtin_adapters(state: MockServiceState) -> AdapterRegistry:
    """Adapter registry covering every built-in tool descriptor."""
    registry = AdapterRegistry()
    registry.register("gdrive_download", FunctionAdapter(state.drive_download, "file"))
    registry.register("gdrive_list", FunctionAdapter(state.drive_list, "table_view"))
    registry.register("adma_upload", FunctionAdapter(state.adma_upload, "adma_path"))
    registry.register("adma_download", FunctionAdapter(state.adma_download, "file"))
    registry.register("adma_page_url", FunctionAdapter(state.adma_page_url, "page_url"))
    registry.register("adma_metadata", FunctionAdapter(state.adma_metadata, "table_view"))
    registry.register("adma_search", FunctionAdapter(state.adma_search, "adma_path"))
    registry.register("adma_docs_url", FunctionAdapter(lambda: f"{ADMA_BASE_URL}/docs", "page_url"))
    registry.register("adma_home_url", FunctionAdapter(lambda: f"{ADMA_BASE_URL}/", "page_url"))
    registry.register("realm5_path_gen", FunctionAdapter(realm5_path_gen, "adma_path"))
    registry.register("realm5_fetch", FunctionAdapter(state.realm5_fetch, "sensor_table"))
    registry.register("plot", FunctionAdapter(select_metrics, "plot_series"))
    registry.register("jd_operations", FunctionAdapter(state.johndeere_operations, "table_view"))
    return registry


# Operations reachable over HTTP when the mocks run as local servers.
_HTTP_OPS = (
    "drive_download",
    "drive_list",
    "adma_upload",
    "adma_download",
    "adma_page_url",
    "adma_metadata",
    "adma_search",
    "realm5_fetch",
)


def create_mock_service_app(state: MockServiceState):
    """FastAPI app exposing each mock operation under its own path."""
    from fastapi import FastAPI, HTTPException

    app = FastAPI(title="flowpilot mock services")

    @app.get("/healthz")
    def healthz() -> dict[str, str]:
        return {"status": "ok"}

    def _make_handler(op_name: str):
        method = getattr(state, op_name)

        def handler(args: dict[str, Any]) -> dict[str, Any]:
            try:
                return {"result": method(**args)}
            except (NotFoundError, AmbiguousMatchError) as exc:
                raise HTTPException(status_code=404, detail=str(exc))
            except (ToolFailureError, TypeError) as exc:
                raise HTTPException(status_code=400, detail=str(exc))

        return handler

    for op in _HTTP_OPS:
        app.post(f"/{op}")(_make_handler(op))
    return app
