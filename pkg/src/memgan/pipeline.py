"""Event-driven schedule simulator for one training iteration's task graph.

Steps a..f of the data flow (d split into d1/d2/d3, e and f into
transmission + update halves) run on three blocks:

    discriminator: a (real forward), c (artificial forward),
                   d1/d2 (score transmissions out), e2 (weight update)
    generator:     b (sample generation), f2 (weight update)
    diff:          d3 (gradient computation + transmission),
                   e1/f1 (gradient transmissions out)

The basic mode chains every step sequentially; the cross-parallel mode
starts a and b together, stages d1 while b still runs, updates both
blocks concurrently (e2 with f2), and lets the next iteration's a begin
as soon as e2 finishes, re-synchronising before the next c.

Scheduling is greedy earliest-start with deterministic tie-breaking,
which is optimal for this static DAG.  Latency is the steady-state
period measured after a warm-up; per-block idle is the gap time inside
the block's busy window of an iteration.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

BASIC = "basic"
CROSS_PARALLEL = "cross_parallel"
MODES = (BASIC, CROSS_PARALLEL)

TASK_IDS = ("a", "b", "c", "d1", "d2", "d3", "e1", "e2", "f1", "f2")
BLOCKS = ("discriminator", "generator", "diff")

TASK_BLOCK = {
    "a": "discriminator",
    "b": "generator",
    "c": "discriminator",
    "d1": "discriminator",
    "d2": "discriminator",
    "d3": "diff",
    "e1": "diff",
    "e2": "discriminator",
    "f1": "diff",
    "f2": "generator",
}

_BASIC_DEPS = {
    "a": (("e2", -1), ("f2", -1)),
    "b": (("a", 0),),
    "c": (("b", 0),),
    "d1": (("c", 0),),
    "d2": (("d1", 0),),
    "d3": (("d2", 0),),
    "e1": (("d3", 0),),
    "e2": (("e1", 0),),
    "f1": (("d3", 0),),
    "f2": (("f1", 0),),
}

_CROSS_DEPS = {
    "a": (("e2", -1),),
    "b": (("f2", -1),),
    "c": (("b", 0),),
    "d1": (("a", 0),),
    "d2": (("c", 0),),
    "d3": (("d1", 0), ("d2", 0)),
    "e1": (("d3", 0),),
    "e2": (("e1", 0),),
    "f1": (("d3", 0),),
    "f2": (("f1", 0),),
}


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class Task:
    id: str
    block: str
    deps: tuple  # ((task_id, iteration_offset), ...)


@dataclass(frozen=True)
class TaskGraph:
    mode: str
    tasks: tuple  # Task per id, one instance per iteration

    def task_ids(self):
        return tuple(t.id for t in self.tasks)


def build_task_graph(mode: str) -> TaskGraph:
    if mode not in MODES:
        raise PipelineError(f"mode must be one of {MODES}, got {mode!r}")
    deps = _BASIC_DEPS if mode == BASIC else _CROSS_DEPS
    tasks = tuple(Task(id=t, block=TASK_BLOCK[t], deps=deps[t]) for t in TASK_IDS)
    return TaskGraph(mode=mode, tasks=tasks)


def custom_task_graph(mode: str, tasks: list[Task]) -> TaskGraph:
    """Arbitrary graph, mainly for tests of the scheduler itself."""
    return TaskGraph(mode=mode, tasks=tuple(tasks))


@dataclass(frozen=True)
class StepTimeTable:
    """Per-task durations in seconds; calibration data, not code."""

    durations: dict

    def __post_init__(self):
        for tid, dur in self.durations.items():
            if not (dur > 0.0):
                raise PipelineError(f"duration for {tid!r} must be > 0, got {dur}")

    def __getitem__(self, tid):
        try:
            return self.durations[tid]
        except KeyError:
            raise PipelineError(f"no duration for task {tid!r}") from None

    def scaled(self, factors: dict) -> "StepTimeTable":
        return StepTimeTable({t: d * factors.get(t, 1.0) for t, d in self.durations.items()})


@dataclass
class TaskRun:
    task: str
    block: str
    iteration: int
    start: float
    end: float


@dataclass
class ScheduleTrace:
    mode: str
    runs: list
    iterations: int
    warmup: int
    table: StepTimeTable
    iteration_latency: float = 0.0
    block_busy: dict = field(default_factory=dict)
    block_idle: dict = field(default_factory=dict)
    block_usage: dict = field(default_factory=dict)
    makespan: float = 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["task", "block", "iteration", "start", "end"])
            for r in self.runs:
                w.writerow([r.task, r.block, r.iteration, f"{r.start:.12g}", f"{r.end:.12g}"])

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "iterations": self.iterations,
            "warmup": self.warmup,
            "iteration_latency_s": self.iteration_latency,
            "makespan_s": self.makespan,
            "blocks": {
                b: {
                    "busy_s": self.block_busy[b],
                    "idle_s": self.block_idle[b],
                    "usage_rate": self.block_usage[b],
                }
                for b in BLOCKS
            },
        }

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def simulate(graph: TaskGraph, times: StepTimeTable, iterations: int,
             warmup: int | None = None) -> ScheduleTrace:
    """Greedy earliest-start schedule over ``iterations`` repetitions."""
    if iterations < 1:
        raise PipelineError(f"iterations must be >= 1, got {iterations}")
    for t in graph.tasks:
        times[t.id]  # raises if missing; positivity checked on construction

    order = {t.id: i for i, t in enumerate(graph.tasks)}
    by_id = {t.id: t for t in graph.tasks}
    pending = {(it, t.id) for it in range(iterations) for t in graph.tasks}
    end_at: dict = {}
    block_free = {b: 0.0 for b in BLOCKS}
    runs = []

    def feasible_start(it, tid):
        task = by_id[tid]
        start = block_free[task.block]
        for dep_id, off in task.deps:
            dep_it = it + off
            if dep_it < 0:
                continue
            key = (dep_it, dep_id)
            if key not in end_at:
                return None
            start = max(start, end_at[key])
        return start

    while pending:
        best = None
        for it, tid in pending:
            s = feasible_start(it, tid)
            if s is None:
                continue
            cand = (s, it, order[tid])
            if best is None or cand < best[0]:
                best = (cand, it, tid)
        if best is None:
            raise PipelineError("task graph deadlocked (unsatisfiable dependencies)")
        (_, it, tid) = best
        start = feasible_start(it, tid)
        end = start + times[tid]
        task = by_id[tid]
        runs.append(TaskRun(task=tid, block=task.block, iteration=it, start=start, end=end))
        end_at[(it, tid)] = end
        block_free[task.block] = end
        pending.discard((it, tid))

    runs.sort(key=lambda r: (r.start, r.iteration, order[r.task]))
    trace = ScheduleTrace(mode=graph.mode, runs=runs, iterations=iterations,
                          warmup=0, table=times)
    _measure(trace)
    return trace


def _measure(trace: ScheduleTrace):
    n = trace.iterations
    warmup = max(0, min(3, n - 2))
    trace.warmup = warmup
    iter_end = {}
    for r in trace.runs:
        iter_end[r.iteration] = max(iter_end.get(r.iteration, 0.0), r.end)
    trace.makespan = max(iter_end.values())
    if n == 1:
        trace.iteration_latency = iter_end[0]
    else:
        trace.iteration_latency = (iter_end[n - 1] - iter_end[warmup]) / (n - 1 - warmup)

    steady = range(warmup + 1, n) if n > 1 else range(0, 1)
    for b in BLOCKS:
        busy_vals, idle_vals = [], []
        for it in steady:
            rs = [r for r in trace.runs if r.block == b and r.iteration == it]
            if not rs:
                busy_vals.append(0.0)
                idle_vals.append(0.0)
                continue
            busy = sum(r.end - r.start for r in rs)
            window = max(r.end for r in rs) - min(r.start for r in rs)
            busy_vals.append(busy)
            idle_vals.append(window - busy)
        trace.block_busy[b] = float(np.mean(busy_vals))
        trace.block_idle[b] = float(np.mean(idle_vals))
        period = trace.iteration_latency
        trace.block_usage[b] = trace.block_busy[b] / period if period > 0 else 0.0


def utilization_report(trace_basic: ScheduleTrace, trace_cross: ScheduleTrace) -> dict:
    """Usage rates per block and the cross/basic improvement ratios."""
    if trace_basic.table.durations != trace_cross.table.durations:
        raise PipelineError("traces were produced from different StepTimeTables")
    report = {"blocks": {}, "speedup": trace_basic.iteration_latency / trace_cross.iteration_latency}
    for b in BLOCKS:
        idle_b, idle_c = trace_basic.block_idle[b], trace_cross.block_idle[b]
        usage_b, usage_c = trace_basic.block_usage[b], trace_cross.block_usage[b]
        report["blocks"][b] = {
            "usage_basic": usage_b,
            "usage_cross": usage_c,
            "usage_improvement": usage_c / usage_b if usage_b > 0 else 0.0,
            "idle_basic_s": idle_b,
            "idle_cross_s": idle_c,
            "idle_improvement": idle_b / idle_c if idle_c > 0 else float("inf"),
        }
    return report
