"""Benchmark harness: repeat each task, time it, and report step counts,
wall time and per-step engine overhead (wall time minus summed tool time).

Reports are a CSV plus a rendered figure saved next to it. Mock-service
state is rebuilt for every repetition, so runs never contaminate fixtures
or each other.
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .engine import CopilotEngine, TraceBundle

PREAUTH = {"google": "bench-token", "adma": "bench-token", "realm5": "bench-token"}

CSV_COLUMNS = ("task", "steps", "mean_ms", "stddev_ms", "mean_engine_overhead_ms")


class BenchTaskFailed(Exception):
    def __init__(self, task: str, phase_kind: str, detail: str):
        super().__init__(f"task {task!r} ended {phase_kind}: {detail}")
        self.task = task
        self.phase_kind = phase_kind


@dataclass(frozen=True)
class BenchRow:
    task: str
    steps: int
    mean_ms: float
    stddev_ms: float
    mean_engine_overhead_ms: float

    def as_csv_row(self) -> list[str]:
        return [
            self.task,
            str(self.steps),
            f"{self.mean_ms:.3f}",
            f"{self.stddev_ms:.3f}",
            f"{self.mean_engine_overhead_ms:.4f}",
        ]


@dataclass(frozen=True)
class BenchReport:
    rows: tuple[BenchRow, ...]
    aborted: str | None = None  # task that failed, when partial

    def overhead_ratio(self) -> float:
        """max/min of mean per-step engine overhead across tasks."""
        values = [r.mean_engine_overhead_ms for r in self.rows if r.mean_engine_overhead_ms > 0]
        if len(values) < 2:
            return 1.0
        return max(values) / min(values)


def _time_once(engine: CopilotEngine, task: str) -> tuple[float, float, TraceBundle]:
    """Run one pre-authorized session; return (wall_ms, tool_ms, trace)."""
    import time

    session_id = engine.create_session(credentials=PREAUTH)
    start = time.perf_counter_ns()
    phase = engine.submit_instruction(session_id, task)
    wall_ns = time.perf_counter_ns() - start
    if phase.kind != "done":
        raise BenchTaskFailed(task, phase.kind, phase.error or phase.prompt or phase.service or "")
    trace = engine.get_trace(session_id)
    tool_ns = sum(step.duration_ns() for step in trace.steps)
    return wall_ns / 1e6, tool_ns / 1e6, trace


def run_bench(
    tasks: Sequence[str],
    repetitions: int,
    engine_factory: Callable[[], CopilotEngine],
    warmup: int = 1,
) -> BenchReport:
    """Benchmark each task ``repetitions`` times on fresh engines.

    A warmup pass (excluded from stats) absorbs first-call costs. Any failing
    task aborts the run; rows gathered so far are returned flagged partial.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    rows: list[BenchRow] = []
    for task in tasks:
        walls: list[float] = []
        overheads: list[float] = []
        steps = 0
        try:
            for _ in range(warmup):
                _time_once(engine_factory(), task)
            for _ in range(repetitions):
                wall_ms, tool_ms, trace = _time_once(engine_factory(), task)
                steps = len(trace.steps)
                walls.append(wall_ms)
                overheads.append((wall_ms - tool_ms) / max(1, steps))
        except BenchTaskFailed as exc:
            return BenchReport(rows=tuple(rows), aborted=str(exc))
        stddev = statistics.stdev(walls) if len(walls) > 1 else 0.0
        rows.append(
            BenchRow(
                task=task,
                steps=steps,
                mean_ms=statistics.mean(walls),
                stddev_ms=stddev,
                mean_engine_overhead_ms=statistics.mean(overheads),
            )
        )
    return BenchReport(rows=tuple(rows))


def write_csv(report: BenchReport, path: str | Path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for row in report.rows:
            writer.writerow(row.as_csv_row())
        if report.aborted is not None:
            writer.writerow(["# aborted", report.aborted, "", "", ""])
    return out


def render_figure(report: BenchReport, path: str | Path) -> Path:
    """Render the report: completion-time bars with a step-count line, and
    per-step engine overhead bars."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [chr(ord("A") + i) for i in range(len(report.rows))]
    means = [r.mean_ms for r in report.rows]
    errs = [r.stddev_ms for r in report.rows]
    steps = [r.steps for r in report.rows]
    overheads = [r.mean_engine_overhead_ms for r in report.rows]

    fig, (ax_time, ax_overhead) = plt.subplots(1, 2, figsize=(10, 4))

    ax_time.bar(labels, means, yerr=errs, color="#4c72b0", label="mean wall time")
    ax_time.set_xlabel("task")
    ax_time.set_ylabel("completion time (ms)")
    ax_steps = ax_time.twinx()
    ax_steps.plot(labels, steps, color="#55a868", marker="o", label="steps")
    ax_steps.set_ylabel("steps")
    ax_time.set_title("task completion time and step count")

    ax_overhead.bar(labels, overheads, color="#c44e52")
    ax_overhead.set_xlabel("task")
    ax_overhead.set_ylabel("per-step engine overhead (ms)")
    ax_overhead.set_title("orchestration overhead per step")

    fig.tight_layout()
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_plot_spec(plot_spec: dict, path: str | Path) -> Path:
    """Draw a plot_spec payload (series over a shared x axis) to a file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 4))
    x = list(range(len(plot_spec.get("x", []))))
    for series in plot_spec.get("series", []):
        ax.plot(x, [float(v) for v in series["values"]], marker="o", label=series["name"])
    ax.set_xticks(x)
    ax.set_xticklabels(plot_spec.get("x", []), rotation=30, ha="right", fontsize=8)
    ax.set_xlabel(plot_spec.get("x_label", ""))
    ax.legend()
    fig.tight_layout()
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
