"""Headless driver: run single tasks, benchmark, serve, and seed fixtures.

Exit codes: 0 done, 10 clarification needed, 11 credentials needed,
12 failed. Interactive mode answers pauses from stdin; --no-interactive
turns them into the corresponding exit code instead.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .backends import AgentBackends, RemoteBackend
from .bench import BenchReport, render_figure, render_plot_spec, run_bench, write_csv
from .engine import CopilotEngine, EngineConfig, Phase
from .fixtures import (
    SINK_KIND_OVERRIDES,
    scripted_backends,
    scripted_backends_from_dir,
    seed_registry,
    write_fixture_bundle,
    write_scripted_tables,
)
from .registry import Registry
from .services import MockServiceState, builtin_adapters, create_mock_service_app

EXIT_OK = 0
EXIT_CLARIFICATION = 10
EXIT_AUTH = 11
EXIT_FAILED = 12


def build_engine(
    fixtures_dir: str,
    registry_dir: str,
    backend: str = "scripted",
    scripted_dir: str | None = None,
    remote_url: str | None = None,
    max_steps: int = 32,
    record_sessions: bool = True,
) -> CopilotEngine:
    """Wire registry, mock services and backends into an engine."""
    state = MockServiceState.from_dir(fixtures_dir)
    registry = Registry(registry_dir)
    if not len(registry):
        raise click.ClickException(f"registry at {registry_dir!r} is empty; run `fixtures init`")
    if backend == "scripted":
        backends = (
            scripted_backends_from_dir(scripted_dir) if scripted_dir else scripted_backends()
        )
    elif backend == "remote":
        if not remote_url:
            raise click.ClickException("--remote-url is required with --backend remote")
        backends = AgentBackends.shared(RemoteBackend(remote_url))
    else:
        raise click.ClickException(f"unknown backend {backend!r}")
    return CopilotEngine(
        registry=registry,
        adapters=builtin_adapters(state),
        backends=backends,
        config=EngineConfig(max_steps=max_steps),
        sink_kind_overrides=SINK_KIND_OVERRIDES,
        record_sessions=record_sessions,
    )


def _phase_exit_code(phase: Phase) -> int:
    return {
        "done": EXIT_OK,
        "awaiting_clarification": EXIT_CLARIFICATION,
        "awaiting_credentials": EXIT_AUTH,
    }.get(phase.kind, EXIT_FAILED)


@click.group()
def main() -> None:
    """Copilot engine for data-management tasks over a tool/variable graph."""


@main.command()
@click.argument("task")
@click.option("--fixtures", "fixtures_dir", required=True, type=click.Path(), envvar="FLOWPILOT_FIXTURES", help="Fixture bundle directory.")
@click.option("--registry", "registry_dir", required=True, type=click.Path(), envvar="FLOWPILOT_REGISTRY", help="Registry directory.")
@click.option("--backend", type=click.Choice(["scripted", "remote"]), default="scripted", envvar="FLOWPILOT_BACKEND")
@click.option("--scripted-dir", type=click.Path(), default=None, help="Scripted table directory (defaults to built-in tables).")
@click.option("--remote-url", default=None, help="Chat-completion endpoint for --backend remote.")
@click.option("--auth", "auth_pairs", multiple=True, help="Pre-authorize service=token (repeatable).")
@click.option("--max-steps", default=32, show_default=True, envvar="FLOWPILOT_MAX_STEPS")
@click.option("--trace", is_flag=True, help="Print the execution trace too.")
@click.option("--no-interactive", is_flag=True, help="Never prompt; exit with a pause code instead.")
@click.option("--plot-out", type=click.Path(), default=None, help="Render a plot_spec result to this image file.")
def run(
    task: str,
    fixtures_dir: str,
    registry_dir: str,
    backend: str,
    scripted_dir: str | None,
    remote_url: str | None,
    auth_pairs: tuple[str, ...],
    max_steps: int,
    trace: bool,
    no_interactive: bool,
    plot_out: str | None,
) -> None:
    """Run one TASK against the fixtures and print the rendered output."""
    try:
        engine = build_engine(
            fixtures_dir, registry_dir, backend, scripted_dir, remote_url, max_steps
        )
    except FileNotFoundError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FAILED)

    credentials = {}
    for pair in auth_pairs:
        service, _, token = pair.partition("=")
        if not service or not token:
            raise click.ClickException(f"--auth expects service=token, got {pair!r}")
        credentials[service] = token

    session_id = engine.create_session(credentials=credentials)
    phase = engine.submit_instruction(session_id, task)
    while phase.kind in ("awaiting_clarification", "awaiting_credentials") and not no_interactive:
        if phase.kind == "awaiting_clarification":
            answer = click.prompt(phase.prompt or f"value for {phase.variable}")
            phase = engine.provide_clarification(session_id, phase.variable or "", answer)
        else:
            token = click.prompt(f"token for {phase.service}", hide_input=True)
            phase = engine.provide_credentials(session_id, phase.service or "", token)

    click.echo(json.dumps(phase.to_json(), indent=2, sort_keys=True))
    if trace:
        click.echo(json.dumps(engine.get_trace(session_id).to_json(), indent=2, sort_keys=True))
    if plot_out and phase.kind == "done" and phase.output and phase.output.kind == "plot_spec":
        render_plot_spec(phase.output.payload, plot_out)
        click.echo(f"plot written to {plot_out}", err=True)
    sys.exit(_phase_exit_code(phase))


@main.command()
@click.argument("tasks_file", type=click.Path(exists=True))
@click.option("--reps", default=20, show_default=True, help="Repetitions per task.")
@click.option("--out", "out_csv", default="bench_report.csv", show_default=True, type=click.Path())
@click.option("--fixtures", "fixtures_dir", required=True, type=click.Path(), envvar="FLOWPILOT_FIXTURES")
@click.option("--registry", "registry_dir", required=True, type=click.Path(), envvar="FLOWPILOT_REGISTRY")
@click.option("--scripted-dir", type=click.Path(), default=None)
@click.option("--no-figure", is_flag=True, help="Skip the rendered figure.")
def bench(
    tasks_file: str,
    reps: int,
    out_csv: str,
    fixtures_dir: str,
    registry_dir: str,
    scripted_dir: str | None,
    no_figure: bool,
) -> None:
    """Benchmark the tasks (one per line) and write CSV plus figure."""
    tasks = [line.strip() for line in Path(tasks_file).read_text(encoding="utf-8").splitlines()]
    tasks = [t for t in tasks if t and not t.startswith("#")]

    def factory() -> CopilotEngine:
        return build_engine(
            fixtures_dir, registry_dir, "scripted", scripted_dir, record_sessions=False
        )

    report = run_bench(tasks, reps, factory) if tasks else BenchReport(rows=())
    path = write_csv(report, out_csv)
    click.echo(f"report written to {path}")
    if report.rows and not no_figure:
        figure_path = Path(out_csv).with_suffix(".png")
        render_figure(report, figure_path)
        click.echo(f"figure written to {figure_path}")
    if report.aborted is not None:
        click.echo(f"aborted: {report.aborted} (partial report flagged)", err=True)
        sys.exit(EXIT_FAILED)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8040, show_default=True)
@click.option("--fixtures", "fixtures_dir", required=True, type=click.Path(), envvar="FLOWPILOT_FIXTURES")
@click.option("--registry", "registry_dir", required=True, type=click.Path(), envvar="FLOWPILOT_REGISTRY")
@click.option("--backend", type=click.Choice(["scripted", "remote"]), default="scripted", envvar="FLOWPILOT_BACKEND")
@click.option("--scripted-dir", type=click.Path(), default=None)
@click.option("--remote-url", default=None)
@click.option("--max-steps", default=32, show_default=True, envvar="FLOWPILOT_MAX_STEPS")
@click.option("--mock-port", default=None, type=int, help="Also expose the mock services on this port.")
def serve(
    host: str,
    port: int,
    fixtures_dir: str,
    registry_dir: str,
    backend: str,
    scripted_dir: str | None,
    remote_url: str | None,
    max_steps: int,
    mock_port: int | None,
) -> None:
    """Start the copilot server (and optionally the mock-service server)."""
    import threading

    import uvicorn

    from .api import create_app

    engine = build_engine(fixtures_dir, registry_dir, backend, scripted_dir, remote_url, max_steps)
    app = create_app(engine)

    if mock_port is not None:
        mock_app = create_mock_service_app(MockServiceState.from_dir(fixtures_dir))
        thread = threading.Thread(
            target=uvicorn.run,
            args=(mock_app,),
            kwargs={"host": host, "port": mock_port, "log_level": "warning"},
            daemon=True,
        )
        thread.start()
        click.echo(f"mock services on http://{host}:{mock_port}")

    click.echo(f"copilot server on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="info")


@main.group()
def fixtures() -> None:
    """Fixture bundle and registry management."""


@fixtures.command("init")
@click.option("--dir", "target_dir", default="fixtures", show_default=True, type=click.Path())
@click.option("--with-map-tool", is_flag=True, help="Also register the field-map UI descriptor.")
def fixtures_init(target_dir: str, with_map_tool: bool) -> None:
    """Write the fixture bundle, seed the registry and dump scripted tables."""
    root = Path(target_dir)
    bundle = write_fixture_bundle(root / "bundle")
    seed_registry(root / "registry", include_map_tool=with_map_tool)
    scripted = write_scripted_tables(root / "scripted")
    click.echo(f"bundle:   {bundle}")
    click.echo(f"registry: {root / 'registry'}")
    click.echo(f"scripted: {scripted}")
