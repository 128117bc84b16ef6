"""Per-episode and aggregate measurement.

Planner steps count call actions only (finish excluded), so flat and
hierarchical runs compare rounds of tool interaction. Planner tokens charge
each step's visible payload plus the accumulated context re-presented to
the policy at every query, which is what actually grows with trajectory
length. Member invocations hidden inside agent calls are tallied
separately as internal calls and never enter planner tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .canonical import approx_tokens
from .errors import ConfigurationError, PipelineError
from .runtime import Trajectory, context_texts
from .toolset import HybridToolset

TokenCounter = Callable[[str], int]


@dataclass(frozen=True)
class EpisodeMetrics:
    task_id: str
    success: bool
    planner_steps: int
    internal_calls: int
    planner_tokens: int
    wall_time: float = 0.0
    category: str = ""

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "success": self.success,
            "planner_steps": self.planner_steps,
            "internal_calls": self.internal_calls,
            "planner_tokens": self.planner_tokens,
            "wall_time": self.wall_time,
            "category": self.category,
        }


def trajectory_tokens(trajectory: Trajectory, token_counter: TokenCounter = approx_tokens) -> int:
    """Step payload tokens plus the context tokens of every policy query."""
    step_tokens = sum(result.token_cost for _a, result in trajectory.steps)
    context_tokens = sum(token_counter(text) for text in context_texts(trajectory))
    return step_tokens + context_tokens


def episode_metrics(
    trajectory: Trajectory,
    success: bool,
    category: str = "",
    token_counter: TokenCounter = approx_tokens,
) -> EpisodeMetrics:
    calls = trajectory.call_steps()
    return EpisodeMetrics(
        task_id=trajectory.task_id,
        success=success,
        planner_steps=len(calls),
        internal_calls=sum(len(r.member_results) for _a, r in calls),
        planner_tokens=trajectory_tokens(trajectory, token_counter),
        wall_time=trajectory.wall_time,
        category=category,
    )


def score_run(
    trajectories: Sequence[Trajectory],
    tasks: Sequence,
    toolset: Optional[HybridToolset] = None,
    token_counter: TokenCounter = approx_tokens,
) -> list[EpisodeMetrics]:
    """Grade one trajectory per task.

    Simulated tasks are graded by replay against their ground truth (the
    per-task toolset is derived from the recorded digest when none is
    given); labeled tasks by normalized label match. A trajectory without
    a matching task id is a hard error.
    """
    from .envs.base import SimTask, answers_match, check_success
    from .envs.suite import task_toolset
    from .pipeline import LabeledTask

    by_id = {t.task_id: t for t in tasks}
    out: list[EpisodeMetrics] = []
    for trajectory in trajectories:
        task = by_id.get(trajectory.task_id)
        if task is None:
            raise ConfigurationError(f"no task matches trajectory {trajectory.task_id!r}")
        if isinstance(task, SimTask):
            resolved = toolset
            if resolved is None:
                for mode in ("flat", "hybrid"):
                    candidate = task_toolset(task, mode)
                    if candidate.digest() == trajectory.toolset_digest:
                        resolved = candidate
                        break
            success = check_success(trajectory, task, resolved)
            category = task.category
        elif isinstance(task, LabeledTask):
            success = answers_match(trajectory.final_answer, task.label)
            category = task.category
        else:
            raise ConfigurationError(f"unsupported task type {type(task).__name__}")
        out.append(episode_metrics(trajectory, success, category, token_counter))
    return out


@dataclass(frozen=True)
class AggregateReport:
    name: str
    task_ids: tuple
    accuracy: float
    accuracy_by_category: dict
    mean_planner_steps: float
    mean_planner_tokens: float
    mean_internal_calls: float
    ratios: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "task_ids": list(self.task_ids),
            "accuracy": self.accuracy,
            "accuracy_by_category": self.accuracy_by_category,
            "mean_planner_steps": self.mean_planner_steps,
            "mean_planner_tokens": self.mean_planner_tokens,
            "mean_internal_calls": self.mean_internal_calls,
            "ratios": self.ratios,
        }

    @staticmethod
    def from_dict(d: dict) -> "AggregateReport":
        return AggregateReport(
            name=d["name"],
            task_ids=tuple(d["task_ids"]),
            accuracy=d["accuracy"],
            accuracy_by_category=dict(d["accuracy_by_category"]),
            mean_planner_steps=d["mean_planner_steps"],
            mean_planner_tokens=d["mean_planner_tokens"],
            mean_internal_calls=d["mean_internal_calls"],
            ratios=dict(d.get("ratios", {})),
        )


def aggregate(metrics: Sequence[EpisodeMetrics], name: str = "run") -> AggregateReport:
    if not metrics:
        raise PipelineError("cannot aggregate an empty run")
    by_category: dict[str, list[bool]] = {}
    for m in metrics:
        by_category.setdefault(m.category or "uncategorized", []).append(m.success)
    n = len(metrics)
    return AggregateReport(
        name=name,
        task_ids=tuple(sorted(m.task_id for m in metrics)),
        accuracy=sum(m.success for m in metrics) / n,
        accuracy_by_category={
            cat: sum(flags) / len(flags) for cat, flags in sorted(by_category.items())
        },
        mean_planner_steps=sum(m.planner_steps for m in metrics) / n,
        mean_planner_tokens=sum(m.planner_tokens for m in metrics) / n,
        mean_internal_calls=sum(m.internal_calls for m in metrics) / n,
    )


def delta_percent(baseline_mean: float, treated_mean: float) -> float:
    """Token-efficiency delta between paired means, one-decimal rounded."""
    if baseline_mean == 0:
        raise ConfigurationError("efficiency delta undefined: baseline mean is zero")
    return round((baseline_mean - treated_mean) / baseline_mean * 100, 1)


def efficiency_delta(baseline: AggregateReport, treated: AggregateReport) -> float:
    if baseline.task_ids != treated.task_ids:
        raise ConfigurationError(
            "efficiency delta requires paired runs over identical task ids"
        )
    return delta_percent(baseline.mean_planner_tokens, treated.mean_planner_tokens)


def operational_ratios(
    outcomes: Sequence[dict],
    staff_capacity: float,
    baseline_staff: int,
) -> dict:
    """Deployment ratios for a batch of task outcomes.

    AR is the auto-resolved percentage; DTLR the residual manual share
    normalized to the all-manual baseline; NSRR the required-staff count
    (manual tasks over per-person capacity, rounded up) relative to the
    baseline headcount. The manual-task count stays integral so ceilings
    never suffer float drift.
    """
    if not outcomes:
        raise ConfigurationError("operational ratios need at least one outcome")
    if staff_capacity <= 0:
        raise ConfigurationError("staff capacity must be positive")
    if baseline_staff < 1:
        raise ConfigurationError("baseline staff must be at least 1")
    total = len(outcomes)
    auto = sum(1 for o in outcomes if o["auto_resolved"])
    manual = total - auto
    ar = auto / total * 100.0
    dtlr = 100.0 - ar
    nsrr = math.ceil(manual / staff_capacity) / baseline_staff * 100.0
    return {"AR": ar, "DTLR": dtlr, "NSRR": nsrr}


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------

def _table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [
        max(len(str(headers[i])), *(len(str(r[i])) for r in rows)) if rows else len(headers[i])
        for i in range(len(headers))
    ]
    def fmt(row):
        return "  ".join(str(cell).ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(r) for r in rows)
    return "\n".join(lines)


def render_report(report: AggregateReport) -> str:
    rows = [
        [cat, f"{acc * 100:.2f}%"] for cat, acc in report.accuracy_by_category.items()
    ]
    rows.append(["overall", f"{report.accuracy * 100:.2f}%"])
    header = (
        f"run: {report.name}  tasks: {len(report.task_ids)}  "
        f"mean steps: {report.mean_planner_steps:.2f}  "
        f"mean tokens: {report.mean_planner_tokens:.1f}  "
        f"mean internal calls: {report.mean_internal_calls:.2f}"
    )
    return header + "\n" + _table(["category", "accuracy"], rows)


def render_paired(baseline: AggregateReport, treated: AggregateReport) -> str:
    delta = efficiency_delta(baseline, treated)
    rows = [
        [
            report.name,
            f"{report.accuracy * 100:.2f}%",
            f"{report.mean_planner_steps:.2f}",
            f"{report.mean_planner_tokens:.1f}",
        ]
        for report in (baseline, treated)
    ]
    table = _table(["run", "accuracy", "mean steps", "mean tokens"], rows)
    return table + f"\nEff. Δ%: {delta:.1f}%"


def render_ratios(named_ratios: dict) -> str:
    rows = [
        [name, f"{r['AR']:.2f}%", f"{r['DTLR']:.2f}%", f"{r['NSRR']:.2f}%"]
        for name, r in named_ratios.items()
    ]
    return _table(["approach", "AR", "DTLR", "NSRR"], rows)


PAIRED_CHECKS = ("steps-lt", "tokens-le", "delta-pos")


def assert_paired(
    baseline: AggregateReport, treated: AggregateReport, checks: Sequence[str]
) -> list[str]:
    """Acceptance-gate checks on a paired evaluation; returns failures."""
    failures = []
    for check in checks:
        if check == "steps-lt":
            if not treated.mean_planner_steps < baseline.mean_planner_steps:
                failures.append(
                    f"steps-lt: {treated.mean_planner_steps:.2f} !< {baseline.mean_planner_steps:.2f}"
                )
        elif check == "tokens-le":
            if not treated.mean_planner_tokens <= baseline.mean_planner_tokens:
                failures.append(
                    f"tokens-le: {treated.mean_planner_tokens:.1f} !<= {baseline.mean_planner_tokens:.1f}"
                )
        elif check == "delta-pos":
            if not efficiency_delta(baseline, treated) > 0:
                failures.append("delta-pos: efficiency delta is not positive")
        else:
            raise ConfigurationError(f"unknown paired check {check!r}")
    return failures
