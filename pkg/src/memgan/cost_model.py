"""Analytic area, energy and wall-clock models of the accelerator.

Area is linear in the forward-flow parallelism s: a fixed base plus one
discriminator and one generator forward replica per unit of s, with both
anchor points calibrated from the design (139 mm^2 at s=1, about
1644 mm^2 at s=32).

Energy is op-count based: per-iteration counts of crossbar reads,
programming events, LUT lookups and adder operations, each with a unit
cost.  The unit costs are calibrated aggregates fixed once against the
ImageNet workload's total energy and then held; they are config data,
not physical claims.  Per-iteration counts depend on batch size and
network depth but not on image resolution, which is what makes the
model transfer across workloads.

Iteration time scales the forward steps by ceil(m/s) (sample waves per
replica); backward propagation and weight updating do not benefit from
parallelism.  The scaled step table feeds the pipeline simulator, whose
steady-state latency is the reported iteration time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

from . import pipeline
from .pipeline import BASIC, CROSS_PARALLEL, StepTimeTable, build_task_graph, simulate

PROCEDURES = ("D_forward", "D_back", "G_forward", "G_back")

# every task's energy and time are attributed to training procedures;
# d3 computes both error sets so it splits evenly
TASK_PROCEDURE = {
    "a": {"D_forward": 1.0},
    "b": {"G_forward": 1.0},
    "c": {"D_forward": 1.0},
    "d1": {"D_forward": 1.0},
    "d2": {"D_forward": 1.0},
    "d3": {"D_back": 0.5, "G_back": 0.5},
    "e1": {"D_back": 1.0},
    "e2": {"D_back": 1.0},
    "f1": {"G_back": 1.0},
    "f2": {"G_back": 1.0},
}

KWH_PER_JOULE = 1.0 / 3.6e6


class CostModelError(ValueError):
    pass


@dataclass(frozen=True)
class Workload:
    """Dataset descriptor driving epoch-level projections."""

    name: str
    images: int
    image_hw: tuple[int, int]
    batch: int = 64

    @property
    def iterations_per_epoch(self) -> int:
        return math.ceil(self.images / self.batch)


@dataclass
class CostParams:
    area_base_mm2: float
    area_d_fwd_mm2: float
    area_g_fwd_mm2: float
    unit_energy_j: dict  # op kind -> joules
    task_op_counts: dict  # task id -> {op kind: count per iteration}
    step_times: StepTimeTable
    ref_parallelism: int = 32
    batch: int = 64

    def validate(self):
        for name in ("area_base_mm2", "area_d_fwd_mm2", "area_g_fwd_mm2"):
            if getattr(self, name) < 0:
                raise CostModelError(f"{name} must be >= 0")
        for op, e in self.unit_energy_j.items():
            if e < 0:
                raise CostModelError(f"unit energy for {op!r} must be >= 0")
        return self


def load_calibration() -> dict:
    with resources.files("memgan.data").joinpath("calibration.json").open() as fh:
        return json.load(fh)


def default_params() -> CostParams:
    cal = load_calibration()
    return CostParams(
        area_base_mm2=cal["area"]["base_mm2"],
        area_d_fwd_mm2=cal["area"]["disc_forward_replica_mm2"],
        area_g_fwd_mm2=cal["area"]["gen_forward_replica_mm2"],
        unit_energy_j=cal["energy"]["unit_energy_joules"],
        task_op_counts=cal["energy"]["task_op_counts"],
        step_times=StepTimeTable(cal["step_times"]),
        ref_parallelism=cal["parallelism"]["reference"],
        batch=cal["batch_size"],
    ).validate()


def load_workloads() -> dict:
    cal = load_calibration()
    out = {}
    for name, w in cal["workloads"].items():
        out[name] = Workload(name=name, images=w["images"],
                             image_hw=tuple(w["image_hw"]), batch=w["batch"])
    return out


def reference_baselines() -> dict:
    """Published accelerator baselines, used only for ratio reporting."""
    return load_calibration()["reference_baselines"]


# ---------------------------------------------------------------------------
# area


def area(s: int, params: CostParams) -> float:
    """Total die area in mm^2 at forward-flow parallelism s."""
    if s < 1:
        raise CostModelError(f"parallelism must be >= 1, got {s}")
    return params.area_base_mm2 + s * (params.area_d_fwd_mm2 + params.area_g_fwd_mm2)


def forward_flow_fractions(s: int, params: CostParams) -> tuple[float, float]:
    """(discriminator, generator) forward-flow shares of total area."""
    total = area(s, params)
    return s * params.area_d_fwd_mm2 / total, s * params.area_g_fwd_mm2 / total


# ---------------------------------------------------------------------------
# time


def forward_wave_factor(s: int, params: CostParams) -> float:
    """How the forward steps stretch relative to the calibrated table."""
    if s < 1:
        raise CostModelError(f"parallelism must be >= 1, got {s}")
    m = params.batch
    return math.ceil(m / s) / math.ceil(m / params.ref_parallelism)


def scaled_step_times(s: int, workload: Workload, params: CostParams) -> StepTimeTable:
    f = forward_wave_factor(s, params)
    pixel = (workload.image_hw[0] * workload.image_hw[1]) / (32 * 32)
    fwd = f * pixel
    return params.step_times.scaled({"a": fwd, "b": fwd, "c": fwd})


@dataclass
class IterationTime:
    total_s: float
    forward_s: float
    backward_s: float
    fractions: dict
    table: StepTimeTable


def iteration_time(s: int, workload: Workload, params: CostParams,
                   mode: str = CROSS_PARALLEL, sim_iterations: int = 10) -> IterationTime:
    table = scaled_step_times(s, workload, params)
    trace = simulate(build_task_graph(mode), table, sim_iterations)
    per_proc = {p: 0.0 for p in PROCEDURES}
    for tid, dur in table.durations.items():
        for proc, w in TASK_PROCEDURE[tid].items():
            per_proc[proc] += w * dur
    busy_total = sum(per_proc.values())
    fractions = {p: v / busy_total for p, v in per_proc.items()}
    forward_s = sum(table[t] for t in ("a", "b", "c"))
    backward_s = busy_total - forward_s - sum(table[t] for t in ("d1", "d2", "d3"))
    return IterationTime(total_s=trace.iteration_latency, forward_s=forward_s,
                         backward_s=backward_s, fractions=fractions, table=table)


def marginal_latency_share(procedure: str, mode: str, params: CostParams,
                           sim_iterations: int = 10) -> float:
    """Fraction of iteration latency attributable to a procedure's tasks,
    measured by shrinking those tasks to (near) zero and re-simulating."""
    tasks = [t for t, w in TASK_PROCEDURE.items() if procedure in w]
    base = simulate(build_task_graph(mode), params.step_times, sim_iterations)
    shrunk = params.step_times.scaled({t: 1e-9 for t in tasks})
    zeroed = simulate(build_task_graph(mode), shrunk, sim_iterations)
    return (base.iteration_latency - zeroed.iteration_latency) / base.iteration_latency


# ---------------------------------------------------------------------------
# energy


@dataclass
class CostReport:
    area_mm2: float
    iteration_latency_s: float
    energy_per_iteration_j: float
    energy_per_epoch_kwh: float
    energy_fractions: dict
    time_fractions: dict
    workload: str
    parallelism: int
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "workload": self.workload,
            "parallelism": self.parallelism,
            "area_mm2": self.area_mm2,
            "iteration_latency_s": self.iteration_latency_s,
            "energy_per_iteration_j": self.energy_per_iteration_j,
            "energy_per_epoch_kwh": self.energy_per_epoch_kwh,
            "energy_fractions": self.energy_fractions,
            "time_fractions": self.time_fractions,
            **self.extras,
        }


def iteration_energy_j(params: CostParams) -> float:
    total = 0.0
    for counts in params.task_op_counts.values():
        for op, n in counts.items():
            total += n * params.unit_energy_j[op]
    return total


def energy_by_procedure(params: CostParams) -> dict:
    out = {p: 0.0 for p in PROCEDURES}
    for tid, counts in params.task_op_counts.items():
        task_j = sum(n * params.unit_energy_j[op] for op, n in counts.items())
        for proc, w in TASK_PROCEDURE[tid].items():
            out[proc] += w * task_j
    return out


def epoch_energy_kwh(workload: Workload, params: CostParams) -> float:
    return workload.iterations_per_epoch * iteration_energy_j(params) * KWH_PER_JOULE


def energy_report(trace: pipeline.ScheduleTrace, task_op_counts: dict,
                  params: CostParams, workload: Workload, s: int) -> CostReport:
    """Combine a schedule trace with op counts into the full report."""
    params_counts = CostParams(
        area_base_mm2=params.area_base_mm2, area_d_fwd_mm2=params.area_d_fwd_mm2,
        area_g_fwd_mm2=params.area_g_fwd_mm2, unit_energy_j=params.unit_energy_j,
        task_op_counts=task_op_counts, step_times=params.step_times,
        ref_parallelism=params.ref_parallelism, batch=params.batch)
    e_iter = iteration_energy_j(params_counts)
    by_proc = energy_by_procedure(params_counts)
    e_fracs = {p: (v / e_iter if e_iter > 0 else 0.0) for p, v in by_proc.items()}
    t = iteration_time(s, workload, params, mode=trace.mode)
    return CostReport(
        area_mm2=area(s, params),
        iteration_latency_s=trace.iteration_latency,
        energy_per_iteration_j=e_iter,
        energy_per_epoch_kwh=workload.iterations_per_epoch * e_iter * KWH_PER_JOULE,
        energy_fractions=e_fracs,
        time_fractions=t.fractions,
        workload=workload.name,
        parallelism=s,
    )


def format_report_table(report: CostReport, baselines: dict | None = None) -> str:
    """Human-readable summary mirroring the published comparison tables."""
    lines = [
        f"workload: {report.workload}   parallelism: {report.parallelism}",
        f"area: {report.area_mm2:.1f} mm^2",
        f"iteration latency: {report.iteration_latency_s:.4f} s",
        f"energy/iteration: {report.energy_per_iteration_j:.2f} J",
        f"energy/epoch: {report.energy_per_epoch_kwh:.3f} kWh",
        "",
        f"{'procedure':<12}{'time share':>12}{'energy share':>14}",
    ]
    for p in PROCEDURES:
        lines.append(
            f"{p:<12}{report.time_fractions[p]:>11.1%}{report.energy_fractions[p]:>13.1%}"
        )
    if baselines and report.workload in baselines.get("energy_kwh", {}):
        row = baselines["energy_kwh"][report.workload]
        lines.append("")
        lines.append(f"{'platform':<12}{'energy kWh':>12}{'saving':>10}")
        ours = report.energy_per_epoch_kwh
        lines.append(f"{'this work':<12}{ours:>12.2f}{'-':>10}")
        for plat in ("gpu", "fpga"):
            if plat in row:
                lines.append(f"{plat:<12}{row[plat]:>12.2f}{row[plat] / ours:>9.1f}x")
    return "\n".join(lines) + "\n"
