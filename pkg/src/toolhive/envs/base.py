"""Deterministic simulated environments and ground-truth checking.

Environments are value-typed: a ScenarioConfig carries an initial state
document plus the tools it exposes, and composition is a disjoint union
keyed by part. Instantiating an environment yields a fresh mutable state
and a registry of implementations bound to it, so concurrent episodes
never share state. Ground truth is either a declarative predicate over the
terminal state or a normalized answer match; both are checkable offline.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from ..canonical import digest, dumps
from ..errors import (
    ConfigurationError,
    DigestMismatchError,
    ManifestError,
    PipelineError,
)
from ..registry import ToolRegistry
from ..runtime import Action, StepResult, Trajectory, dispatch
from ..toolset import (
    AgentToolSpec,
    HybridToolset,
    ToolGroup,
    ToolSpec,
    assemble_hybrid,
    merge_schemas,
)

SCENARIOS = ("file", "vehicle", "trade", "travel")


# --------------------------------------------------------------------------
# Predicate DSL
# --------------------------------------------------------------------------

def _resolve_path(state: Mapping, path: Sequence[str]):
    node = state
    for key in path:
        if isinstance(node, Mapping) and key in node:
            node = node[key]
        else:
            return False, None
    return True, node


def evaluate_predicate(predicate: Mapping, state: Mapping) -> bool:
    """Evaluate a declarative condition document against a state document.

    Supported forms: {"all": [...]}, {"any": [...]}, {"not": p},
    {"eq"|"ne"|"gte"|"lte"|"contains": {"path": [...keys], "value": v}},
    {"exists"|"absent": {"path": [...]}}.
    """
    if len(predicate) != 1:
        raise ConfigurationError(f"malformed predicate: {predicate}")
    op, arg = next(iter(predicate.items()))
    if op == "all":
        return all(evaluate_predicate(p, state) for p in arg)
    if op == "any":
        return any(evaluate_predicate(p, state) for p in arg)
    if op == "not":
        return not evaluate_predicate(arg, state)
    found, value = _resolve_path(state, arg["path"])
    if op == "exists":
        return found
    if op == "absent":
        return not found
    if not found:
        return False
    if op == "eq":
        return value == arg["value"]
    if op == "ne":
        return value != arg["value"]
    if op == "gte":
        return value >= arg["value"]
    if op == "lte":
        return value <= arg["value"]
    if op == "contains":
        return arg["value"] in value
    raise ConfigurationError(f"unknown predicate op {op!r}")


def state_diff_predicate(initial: Mapping, terminal: Mapping) -> Optional[dict]:
    """Conjunction pinning every leaf the terminal state changed.

    Dicts are walked recursively; anything else (including lists) is a
    leaf compared by value. Returns None when nothing changed.
    """
    clauses: list[dict] = []

    def walk(before, after, path: tuple):
        if isinstance(before, Mapping) and isinstance(after, Mapping):
            for key in sorted(set(before) | set(after)):
                if key not in after:
                    clauses.append({"absent": {"path": list(path + (key,))}})
                elif key not in before:
                    if isinstance(after[key], Mapping):
                        walk({}, after[key], path + (key,))
                    else:
                        clauses.append({"eq": {"path": list(path + (key,)), "value": after[key]}})
                else:
                    walk(before[key], after[key], path + (key,))
            return
        if before != after:
            clauses.append({"eq": {"path": list(path), "value": after}})

    walk(initial, terminal, ())
    if not clauses:
        return None
    return {"all": clauses} if len(clauses) > 1 else clauses[0]


def normalize_answer(text: str) -> str:
    return " ".join(text.casefold().split())


def answers_match(got: str, expected: str) -> bool:
    """Case-fold, collapse whitespace, and allow 1e-9 numeric tolerance."""
    a, b = normalize_answer(got), normalize_answer(expected)
    if a == b:
        return True
    try:
        return math.isclose(float(a), float(b), rel_tol=1e-9, abs_tol=1e-9)
    except ValueError:
        return False


@dataclass(frozen=True)
class GroundTruth:
    """Either a terminal-state predicate or a canonical expected answer."""

    kind: str
    predicate: Optional[dict] = None
    expected_answer: Optional[str] = None

    def __post_init__(self):
        if self.kind == "final_state_predicate":
            if self.predicate is None:
                raise ConfigurationError("final_state_predicate requires a predicate")
        elif self.kind == "answer_match":
            if self.expected_answer is None:
                raise ConfigurationError("answer_match requires an expected answer")
        else:
            raise ConfigurationError(f"unknown ground-truth kind {self.kind!r}")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.predicate is not None:
            d["predicate"] = self.predicate
        if self.expected_answer is not None:
            d["expected_answer"] = self.expected_answer
        return d

    @staticmethod
    def from_dict(d: Mapping) -> "GroundTruth":
        return GroundTruth(
            kind=d["kind"],
            predicate=d.get("predicate"),
            expected_answer=d.get("expected_answer"),
        )


# --------------------------------------------------------------------------
# Scenario configuration and composition
# --------------------------------------------------------------------------

ImplFactory = Callable[[dict], dict]


@dataclass(frozen=True)
class ScenarioConfig:
    """One scenario instance: initial state plus the tools it exposes.

    `part_key` prefixes every tool name, so composed environments never
    collide as long as instances are suffixed.
    """

    scenario: str
    initial_state: dict
    exposed_tools: tuple
    instance: str = ""

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        prefix = self.part_key + "."
        for tool in self.exposed_tools:
            if not tool.name.startswith(prefix):
                raise ManifestError(
                    f"tool {tool.name!r} lacks the part prefix {prefix!r}"
                )

    @property
    def part_key(self) -> str:
        return f"{self.scenario}_{self.instance}" if self.instance else self.scenario

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "instance": self.instance,
            "initial_state": self.initial_state,
            "tools": [t.to_dict() for t in self.exposed_tools],
        }

    @staticmethod
    def from_dict(d: Mapping) -> "ScenarioConfig":
        return ScenarioConfig(
            scenario=d["scenario"],
            instance=d.get("instance", ""),
            initial_state=dict(d["initial_state"]),
            exposed_tools=tuple(ToolSpec.from_dict(t) for t in d["tools"]),
        )


@dataclass(frozen=True)
class ComposedEnvironment:
    """Disjoint union of scenario instances.

    The object is immutable; `instantiate` hands out a private deep copy of
    the state together with a registry bound to that copy, which is what
    keeps parts isolated and episodes independent.
    """

    parts: tuple

    def __post_init__(self):
        keys = [p.part_key for p in self.parts]
        dupes = sorted({k for k in keys if keys.count(k) > 1})
        if dupes:
            raise ManifestError(
                f"duplicate scenario instances without distinct suffixes: {dupes}"
            )

    @property
    def manifest(self) -> list[ToolSpec]:
        tools: list[ToolSpec] = []
        for part in self.parts:
            tools.extend(part.exposed_tools)
        return tools

    def initial_state(self) -> dict:
        return {p.part_key: copy.deepcopy(p.initial_state) for p in self.parts}

    def instantiate(self, state: Optional[dict] = None) -> tuple[dict, ToolRegistry]:
        from .scenarios import bind_implementations

        live_state = copy.deepcopy(state) if state is not None else self.initial_state()
        registry = ToolRegistry()
        for part in self.parts:
            bind_implementations(part, live_state[part.part_key], registry)
        return live_state, registry

    def digest(self) -> str:
        return digest(self.to_dict())

    def to_dict(self) -> dict:
        return {"parts": [p.to_dict() for p in self.parts]}

    @staticmethod
    def from_dict(d: Mapping) -> "ComposedEnvironment":
        return ComposedEnvironment(
            parts=tuple(ScenarioConfig.from_dict(p) for p in d["parts"])
        )


def compose(parts: Sequence[ScenarioConfig]) -> ComposedEnvironment:
    if not parts:
        raise ConfigurationError("compose requires at least one part")
    return ComposedEnvironment(parts=tuple(parts))


def flat_toolset(environment: ComposedEnvironment) -> HybridToolset:
    """The ungrouped planner action space for an environment."""
    return assemble_hybrid(environment.manifest, groups=[])


# --------------------------------------------------------------------------
# Tasks
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SimTask:
    """One benchmark task: an environment, a query, and checkable truth.

    `gold_plans` maps toolset mode ("flat"/"hybrid") to a scripted plan of
    {target, arguments} steps; `difficulty` is the measured minimal flat
    plan length.
    """

    task_id: str
    query: str
    environment: ComposedEnvironment
    ground_truth: GroundTruth
    difficulty: int = 0
    category: str = ""
    gold_plans: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "query": self.query,
            "parts": [p.to_dict() for p in self.environment.parts],
            "ground_truth": self.ground_truth.to_dict(),
            "difficulty": self.difficulty,
            "category": self.category,
            "gold": self.gold_plans,
        }

    @staticmethod
    def from_dict(d: Mapping) -> "SimTask":
        return SimTask(
            task_id=d["task_id"],
            query=d["query"],
            environment=ComposedEnvironment(
                parts=tuple(ScenarioConfig.from_dict(p) for p in d["parts"])
            ),
            ground_truth=GroundTruth.from_dict(d["ground_truth"]),
            difficulty=d.get("difficulty", 0),
            category=d.get("category", ""),
            gold_plans=dict(d.get("gold", {})),
        )


def save_task_suite(tasks: Sequence[SimTask], path: str | Path) -> None:
    doc = {"tasks": [t.to_dict() for t in tasks]}
    Path(path).write_text(dumps(doc) + "\n", encoding="utf-8")


def load_task_suite(path: str | Path) -> list[SimTask]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [SimTask.from_dict(t) for t in doc["tasks"]]


# --------------------------------------------------------------------------
# Replay and success checking
# --------------------------------------------------------------------------

def _replay_toolset(environment: ComposedEnvironment, trajectory: Trajectory) -> HybridToolset:
    """Reconstruct a toolset sufficient to re-dispatch a recorded trajectory:
    the environment manifest as basic tools, plus one agent per recorded
    agent target built from its recorded member list."""
    by_name = {t.name: t for t in environment.manifest}
    agents = []
    seen: set[str] = set()
    for action, result in trajectory.call_steps():
        if action.kind != "call_agent" or action.target in seen or action.target is None:
            continue
        seen.add(action.target)
        member_names = [m.name for m in result.member_results]
        missing = [m for m in member_names if m not in by_name]
        if missing:
            raise PipelineError(
                f"trajectory {trajectory.task_id}: agent {action.target} members "
                f"{missing} are not in the task environment"
            )
        group = ToolGroup(group_id=action.target, member_names=tuple(member_names))
        agents.append(
            AgentToolSpec(
                name=action.target,
                group=group,
                agg_mode="template",
                description="replay",
                param_schema=merge_schemas([by_name[m].param_schema for m in member_names]),
            )
        )
    return HybridToolset(
        basic=tuple(environment.manifest),
        agents=tuple(agents),
        members=(),
        threshold=0.0,
        provenance={"replay": True},
    )


def replay_trajectory(
    environment: ComposedEnvironment, trajectory: Trajectory
) -> tuple[dict, list[StepResult]]:
    """Re-execute a trajectory's call actions on a fresh environment.

    Returns the terminal state and the recomputed step results; callers
    compare the recomputed payloads against the recorded ones when they
    need replay fidelity, and use the state for predicate checks.
    """
    state, registry = environment.instantiate()
    toolset = _replay_toolset(environment, trajectory)
    results = []
    for action, _recorded in trajectory.call_steps():
        result = dispatch(action, toolset, registry)
        results.append(result)
    return state, results


def check_success(
    trajectory: Trajectory,
    task: SimTask,
    toolset: Optional[HybridToolset] = None,
) -> bool:
    """Grade a trajectory against its task's ground truth.

    The trajectory must have been produced against this task's environment:
    its recorded toolset digest has to match the given toolset (or the
    task's flat embedding when none is given), otherwise the pairing is a
    bug and a hard error is raised.
    """
    expected = (toolset or flat_toolset(task.environment)).digest()
    if trajectory.toolset_digest != expected:
        raise DigestMismatchError(
            f"trajectory {trajectory.task_id} digest {trajectory.toolset_digest[:12]} "
            f"does not match task {task.task_id} toolset {expected[:12]}"
        )
    if task.ground_truth.kind == "answer_match":
        return answers_match(trajectory.final_answer, task.ground_truth.expected_answer or "")
    terminal_state, _results = replay_trajectory(task.environment, trajectory)
    return evaluate_predicate(task.ground_truth.predicate or {}, terminal_state)
