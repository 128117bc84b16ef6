"""Breadth-first planning oracle over the finite argument lattice.

Test infrastructure: exhaustively searches action sequences for a minimal
plan satisfying a task's terminal-state predicate. States are deduplicated
by canonical serialization, which keeps the search tractable because
read-only tools collapse onto their parent state. Budget overflow is an
explicit result, distinct from "no plan exists within the depth bound".
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from ..canonical import dumps
from ..errors import ConfigurationError, ToolExecutionError
from ..policies import action_lattice
from ..runtime import Action
from ..toolset import HybridToolset
from .base import SimTask, evaluate_predicate
from .scenarios import OP_TABLES

SubCall = tuple[str, Callable, dict]


@dataclass(frozen=True)
class OracleResult:
    status: str  # solved | unsolved | overflow
    plan: Optional[tuple] = None
    nodes: int = 0

    @property
    def length(self) -> int:
        if self.plan is None:
            raise ConfigurationError("no plan recorded")
        return len(self.plan)


def _subcalls(action: Action, toolset: HybridToolset, by_name: dict) -> list[SubCall]:
    """Atomic (part, op-fn, args) applications for one planner action."""
    def one(tool_name: str, broadcast: dict) -> SubCall:
        spec = by_name[tool_name]
        part_key, op = tool_name.split(".", 1)
        scenario = spec.domain_tag.split("_")[0]
        fn = OP_TABLES[scenario][op].fn
        args = {
            k: v
            for k, v in broadcast.items()
            if k in spec.param_schema.get("properties", {})
        }
        return part_key, fn, args

    if action.kind == "call_basic":
        return [one(action.target, action.arguments)]
    agent = toolset.lookup_agent(action.target or "")
    if agent is None:
        raise ConfigurationError(f"oracle: unknown agent {action.target!r}")
    return [one(m, action.arguments) for m in agent.group.member_names]


def brute_force_solve(
    task: SimTask,
    toolset: HybridToolset,
    max_depth: int = 12,
    node_budget: int = 1_000_000,
) -> OracleResult:
    """Minimal plan over the toolset's action lattice, or why there is none.

    Only final-state-predicate tasks are searchable: an answer-match task
    has no state goal to test. Failed sub-calls leave state untouched (the
    scenario ops validate before mutating), so a useless action simply
    collapses back onto a visited state.
    """
    if task.ground_truth.kind != "final_state_predicate":
        raise ConfigurationError("oracle requires a final-state-predicate task")
    predicate = task.ground_truth.predicate or {}

    by_name = {t.name: t for t in task.environment.manifest}
    lattice = action_lattice(toolset)
    unresolved = [
        a.target for a in lattice if a.kind == "call_basic" and a.target not in by_name
    ]
    if unresolved:
        raise ConfigurationError(
            f"oracle: toolset tools missing from the environment: {sorted(set(unresolved))}"
        )
    appliers = [(_subcalls(a, toolset, by_name), a) for a in lattice]

    initial = task.environment.initial_state()
    if evaluate_predicate(predicate, initial):
        return OracleResult(status="solved", plan=(), nodes=0)

    start = dumps(initial)
    visited = {start}
    queue: deque = deque([(start, ())])
    nodes = 0

    while queue:
        state_str, plan = queue.popleft()
        if len(plan) >= max_depth:
            continue
        for subcalls, action in appliers:
            nodes += 1
            if nodes > node_budget:
                return OracleResult(status="overflow", nodes=nodes)
            state = json.loads(state_str)
            for part_key, fn, args in subcalls:
                try:
                    fn(state[part_key], args)
                except ToolExecutionError:
                    pass  # same semantics as the runtime: error observed, no abort
            child = dumps(state)
            if child in visited:
                continue
            visited.add(child)
            child_plan = plan + (action,)
            if evaluate_predicate(predicate, state):
                return OracleResult(status="solved", plan=child_plan, nodes=nodes)
            queue.append((child, child_plan))

    return OracleResult(status="unsolved", nodes=nodes)


def solve_both(
    task: SimTask,
    flat: HybridToolset,
    hybrid: HybridToolset,
    max_depth: int = 12,
    node_budget: int = 1_000_000,
) -> dict:
    """Minimal plan lengths under both action spaces, for paired analysis."""
    flat_result = brute_force_solve(task, flat, max_depth, node_budget)
    hybrid_result = brute_force_solve(task, hybrid, max_depth, node_budget)
    out: dict = {"flat": flat_result, "hybrid": hybrid_result}
    if flat_result.status == "solved" and hybrid_result.status == "solved":
        out["flat_length"] = flat_result.length
        out["hybrid_length"] = hybrid_result.length
    return out
