"""Planner episode execution over a hybrid toolset.

A policy is queried once per step with a context holding the query, the
planner-facing toolset interface, and the visible history. Basic calls go
straight to the implementation registry; agent calls fan out to every
member of the group and come back as one aggregated payload, so the
planner never observes raw member outputs. Episodes record complete
trajectories suitable for replay, scoring, and dataset construction.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from .canonical import approx_tokens, derive_seed, dumps
from .errors import (
    ConfigurationError,
    SimulatedTimeout,
    ToolExecutionError,
    ToolhiveError,
)
from .registry import ToolRegistry, validate_arguments
from .toolset import AgentToolSpec, HybridToolset

logger = logging.getLogger(__name__)

ACTION_KINDS = ("call_basic", "call_agent", "finish")
OUTCOMES = ("success", "failure", "budget_exhausted", "aborted")
CALL_KINDS = ("call_basic", "call_agent")

TokenCounter = Callable[[str], int]


@dataclass(frozen=True)
class Action:
    """One planner decision: a tool call or the final answer."""

    kind: str
    target: Optional[str] = None
    arguments: dict = field(default_factory=dict)
    reasoning: str = ""
    answer: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ACTION_KINDS:
            raise ConfigurationError(f"unknown action kind {self.kind!r}")
        if self.kind == "finish" and self.target is not None:
            raise ConfigurationError("finish actions carry an answer, not a target")


@dataclass(frozen=True)
class MemberResult:
    name: str
    status: str
    payload: str

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "payload": self.payload}


@dataclass(frozen=True)
class StepResult:
    """Planner-visible outcome of one action.

    For agent calls `payload` is exactly the aggregation-operator output
    over `member_results`; for basic calls `member_results` is empty.
    `token_cost` counts only the planner-visible payload.
    """

    status: str
    payload: str
    member_results: tuple = ()
    token_cost: int = 0

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "payload": self.payload,
            "member_results": [m.to_dict() for m in self.member_results],
            "token_cost": self.token_cost,
        }


@dataclass
class Budget:
    t_max: int = 25
    max_tokens: Optional[int] = None

    def __post_init__(self):
        if self.t_max < 1:
            raise ConfigurationError("budget.t_max must be at least 1")


@dataclass(frozen=True)
class Trajectory:
    """Ordered (action, result) steps plus the final answer and outcome.

    `wall_time` is measured at run time and intentionally left out of the
    serialized form so identical runs produce byte-identical files.
    """

    task_id: str
    query: str
    steps: tuple
    final_answer: str
    outcome: str
    seed: int
    toolset_digest: str
    abort_reason: Optional[str] = None
    wall_time: float = field(default=0.0, compare=False)

    def call_steps(self) -> list:
        return [(a, r) for a, r in self.steps if a.kind in CALL_KINDS]

    def validate(self, t_max: Optional[int] = None) -> None:
        if self.outcome not in OUTCOMES:
            raise ToolhiveError(f"unknown outcome {self.outcome!r}")
        finishes = [i for i, (a, _) in enumerate(self.steps) if a.kind == "finish"]
        if len(finishes) > 1:
            raise ToolhiveError("trajectory contains more than one finish action")
        if finishes and finishes[0] != len(self.steps) - 1:
            raise ToolhiveError("finish action is not the last step")
        if t_max is not None and len(self.steps) > t_max:
            raise ToolhiveError(f"trajectory exceeds step budget {t_max}")
        for action, result in self.steps:
            if action.kind == "call_basic" and result.member_results:
                raise ToolhiveError("basic call carries member results")

    def to_dict(self) -> dict:
        d = {
            "task_id": self.task_id,
            "query": self.query,
            "seed": self.seed,
            "toolset_digest": self.toolset_digest,
            "steps": [
                {
                    "reasoning": action.reasoning,
                    "action": {
                        "kind": action.kind,
                        "target": action.target,
                        "arguments": action.arguments,
                    },
                    "result": result.to_dict(),
                }
                for action, result in self.steps
            ],
            "final_answer": self.final_answer,
            "outcome": self.outcome,
        }
        if self.abort_reason is not None:
            d["abort_reason"] = self.abort_reason
        return d

    @staticmethod
    def from_dict(d: dict) -> "Trajectory":
        steps = []
        for row in d["steps"]:
            action = Action(
                kind=row["action"]["kind"],
                target=row["action"]["target"],
                arguments=row["action"]["arguments"],
                reasoning=row.get("reasoning", ""),
                answer=d["final_answer"] if row["action"]["kind"] == "finish" else None,
            )
            result = StepResult(
                status=row["result"]["status"],
                payload=row["result"]["payload"],
                member_results=tuple(
                    MemberResult(m["name"], m["status"], m["payload"])
                    for m in row["result"]["member_results"]
                ),
                token_cost=row["result"]["token_cost"],
            )
            steps.append((action, result))
        return Trajectory(
            task_id=d["task_id"],
            query=d["query"],
            steps=tuple(steps),
            final_answer=d["final_answer"],
            outcome=d["outcome"],
            seed=d["seed"],
            toolset_digest=d["toolset_digest"],
            abort_reason=d.get("abort_reason"),
        )


def write_trajectories(path: str | Path, trajectories: Iterable[Trajectory]) -> None:
    lines = [dumps(t.to_dict()) for t in trajectories]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_trajectories(path: str | Path) -> list[Trajectory]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(Trajectory.from_dict(json.loads(line)))
    return out


# --------------------------------------------------------------------------
# Policy context
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HistoryStep:
    """One prior step as the planner may see it (no raw member outputs)."""

    reasoning: str
    kind: str
    target: Optional[str]
    arguments: dict
    payload: str
    status: str

    def to_dict(self) -> dict:
        return {
            "reasoning": self.reasoning,
            "kind": self.kind,
            "target": self.target,
            "arguments": self.arguments,
            "payload": self.payload,
            "status": self.status,
        }


@dataclass(frozen=True)
class PolicyContext:
    """Everything the policy is allowed to observe before one decision."""

    query: str
    history: tuple
    interface: tuple
    framing: Optional[str] = None

    def history_text(self) -> str:
        return dumps({"query": self.query, "history": [h.to_dict() for h in self.history]})

    def serialize(self) -> str:
        doc = {
            "query": self.query,
            "history": [h.to_dict() for h in self.history],
            "interface": list(self.interface),
        }
        if self.framing is not None:
            doc["framing"] = self.framing
        return dumps(doc)


def visible_history(steps: Sequence[tuple]) -> tuple:
    """Project executed steps onto the planner-visible view."""
    return tuple(
        HistoryStep(
            reasoning=action.reasoning,
            kind=action.kind,
            target=action.target,
            arguments=action.arguments,
            payload=result.payload,
            status=result.status,
        )
        for action, result in steps
    )


def context_texts(trajectory: Trajectory) -> list[str]:
    """Reconstruct the visible pre-step context text for every policy query.

    Used by metrics to charge accumulated-context tokens; the toolset
    interface is constant per episode and excluded here because trajectory
    files only carry its digest.
    """
    texts = []
    for i in range(len(trajectory.steps)):
        ctx = PolicyContext(
            query=trajectory.query,
            history=visible_history(trajectory.steps[:i]),
            interface=(),
        )
        texts.append(ctx.history_text())
    return texts


# --------------------------------------------------------------------------
# Aggregation operator
# --------------------------------------------------------------------------

DUPLICATE_NOTE = " (reported by {count} sources)"


def member_section(member: MemberResult) -> str:
    if member.status == "ok":
        return f"[{member.name}] → {member.payload}"
    return f"[{member.name}] → error: {member.payload}"


def template_aggregate(member_results: Sequence[MemberResult], dedup: bool = True) -> str:
    """Deterministic aggregation: one section per member, in member order,
    with exact-duplicate successful payloads collapsed into a single
    annotated line. Failed members contribute a one-line error note."""
    slots: list[tuple[int, str]] = []
    buckets: dict[str, list[int]] = {}
    for i, member in enumerate(member_results):
        if dedup and member.status == "ok":
            buckets.setdefault(member.payload, []).append(i)
        else:
            slots.append((i, member_section(member)))
    for payload, indices in buckets.items():
        if len(indices) == 1:
            slots.append((indices[0], member_section(member_results[indices[0]])))
        else:
            slots.append(
                (indices[0], payload + DUPLICATE_NOTE.format(count=len(indices)))
            )
    slots.sort(key=lambda pair: pair[0])
    return "\n".join(line for _, line in slots)


def removed_sections(member_results: Sequence[MemberResult], aggregate: str) -> list[str]:
    """Member sections the aggregation dropped; used by opacity checks."""
    return [
        section
        for section in (member_section(m) for m in member_results)
        if section not in aggregate
    ]


# --------------------------------------------------------------------------
# Dispatch
# --------------------------------------------------------------------------

def _invoke_member(registry: ToolRegistry, impl_key: str, name: str, arguments: dict) -> MemberResult:
    try:
        payload = registry.invoke(impl_key, arguments)
        return MemberResult(name=name, status="ok", payload=payload)
    except SimulatedTimeout as exc:
        return MemberResult(name=name, status="timeout", payload=str(exc))
    except ToolExecutionError as exc:
        return MemberResult(name=name, status="tool_error", payload=str(exc))


def run_agent_tool(
    agent: AgentToolSpec,
    arguments: dict,
    registry: ToolRegistry,
    toolset: HybridToolset,
    seed: int = 0,
    token_counter: TokenCounter = approx_tokens,
    backend=None,
    fan_out: bool = False,
) -> StepResult:
    """Invoke every member on the shared argument document and aggregate.

    Each member receives the broadcast document filtered to its own
    declared parameters. Results are ordered by the group member list no
    matter how execution interleaves, so fan-out cannot change the output.
    """
    members = []
    for member_name in agent.group.member_names:
        spec = toolset.lookup_member(member_name) or toolset.lookup_basic(member_name)
        if spec is None:
            raise ConfigurationError(
                f"agent {agent.name}: member {member_name!r} does not resolve"
            )
        members.append(spec)

    def call_one(spec) -> MemberResult:
        member_args = {
            k: v
            for k, v in arguments.items()
            if k in spec.param_schema.get("properties", {})
        }
        try:
            validate_arguments(spec.name, spec.param_schema, member_args)
        except ToolExecutionError as exc:
            return MemberResult(name=spec.name, status="tool_error", payload=str(exc))
        return _invoke_member(registry, spec.impl_key, spec.name, member_args)

    if fan_out and len(members) > 1:
        with ThreadPoolExecutor(max_workers=len(members)) as pool:
            member_results = tuple(pool.map(call_one, members))
    else:
        member_results = tuple(call_one(spec) for spec in members)

    any_ok = any(m.status == "ok" for m in member_results)
    if agent.agg_mode == "llm_summarize" and any_ok:
        if backend is None:
            raise ConfigurationError(
                f"agent {agent.name} uses llm_summarize but no backend is configured"
            )
        response = backend.complete(
            role="aggregator",
            context={
                "instruction": "Summarize these member tool outputs into one concise report.",
                "members": [m.to_dict() for m in member_results],
            },
        )
        payload = response.text
    else:
        payload = template_aggregate(member_results)

    return StepResult(
        status="ok" if any_ok else "tool_error",
        payload=payload,
        member_results=member_results,
        token_cost=token_counter(payload),
    )


def dispatch(
    action: Action,
    toolset: HybridToolset,
    registry: ToolRegistry,
    seed: int = 0,
    token_counter: TokenCounter = approx_tokens,
    backend=None,
    fan_out: bool = False,
) -> StepResult:
    """Execute one call action: basic goes straight to the registry, agent
    orchestrates its group. Errors become observations, not exceptions."""
    if action.kind not in CALL_KINDS:
        raise ConfigurationError(f"dispatch got non-call action {action.kind!r}")

    basic = toolset.lookup_basic(action.target or "")
    agent = toolset.lookup_agent(action.target or "")

    if action.kind == "call_basic" and basic is not None:
        try:
            validate_arguments(basic.name, basic.param_schema, action.arguments)
            payload = registry.invoke(basic.impl_key, action.arguments)
            status = "ok"
        except SimulatedTimeout as exc:
            payload, status = str(exc), "timeout"
        except ToolExecutionError as exc:
            payload, status = str(exc), "tool_error"
        return StepResult(
            status=status, payload=payload, member_results=(), token_cost=token_counter(payload)
        )

    if action.kind == "call_agent" and agent is not None:
        try:
            validate_arguments(agent.name, agent.param_schema, action.arguments)
        except ToolExecutionError as exc:
            payload = str(exc)
            return StepResult(
                status="tool_error", payload=payload, member_results=(),
                token_cost=token_counter(payload),
            )
        return run_agent_tool(
            agent,
            action.arguments,
            registry,
            toolset,
            seed=seed,
            token_counter=token_counter,
            backend=backend,
            fan_out=fan_out,
        )

    payload = f"unknown tool: {action.target}"
    return StepResult(
        status="tool_error", payload=payload, member_results=(), token_cost=token_counter(payload)
    )


def synthesize_answer(query: str, collected_results: Sequence[str], policy, action: Optional[Action] = None) -> str:
    """Final-answer synthesis: scripted policies embed the answer in the
    finish action; policies with a `synthesize` hook (remote) build it from
    the query and the planner-visible results collected so far."""
    if action is not None and action.answer is not None:
        return action.answer
    synthesize = getattr(policy, "synthesize", None)
    if synthesize is not None:
        return synthesize(query, list(collected_results))
    return ""


def check_registry(toolset: HybridToolset, registry: ToolRegistry) -> None:
    """Configuration check before the first step: every impl key resolves."""
    missing = [t.name for t in toolset.source_tools() if t.impl_key not in registry]
    if missing:
        raise ConfigurationError(f"unresolvable tool implementations: {sorted(set(missing))}")


def run_episode(
    query: str,
    toolset: HybridToolset,
    policy,
    registry: ToolRegistry,
    budget: Budget,
    seed: int,
    task_id: str = "",
    framing: Optional[str] = None,
    token_counter: TokenCounter = approx_tokens,
    outcome_eval: Optional[Callable[[Trajectory], bool]] = None,
    backend=None,
    fan_out: bool = False,
) -> Trajectory:
    """Run one planner episode to completion, budget exhaustion, or abort.

    The policy is queried exactly once per step; the toolset stays frozen
    for the whole episode (asserted by digest before and after). When
    `outcome_eval` is given, a finished trajectory is graded success or
    failure by it; otherwise finishing counts as success.
    """
    check_registry(toolset, registry)
    digest_before = toolset.digest()
    interface = tuple(toolset.interface())

    started = time.perf_counter()
    steps: list[tuple[Action, StepResult]] = []
    collected: list[str] = []
    final_answer = ""
    abort_reason: Optional[str] = None
    finished = False
    spent_tokens = 0

    for step_index in range(budget.t_max):
        context = PolicyContext(
            query=query,
            history=visible_history(steps),
            interface=interface,
            framing=framing,
        )
        try:
            action = policy.decide(context)
        except Exception as exc:  # policy backends may fail mid-episode
            abort_reason = f"policy failure: {exc}"
            break

        if action.kind == "finish":
            try:
                final_answer = synthesize_answer(query, collected, policy, action)
            except Exception as exc:
                abort_reason = f"answer synthesis failure: {exc}"
                break
            result = StepResult(
                status="ok",
                payload=final_answer,
                member_results=(),
                token_cost=token_counter(final_answer),
            )
            steps.append((action, result))
            finished = True
            break

        result = dispatch(
            action,
            toolset,
            registry,
            seed=derive_seed(seed, task_id, str(step_index)),
            token_counter=token_counter,
            backend=backend,
            fan_out=fan_out,
        )
        steps.append((action, result))
        collected.append(result.payload)
        spent_tokens += result.token_cost
        if budget.max_tokens is not None and spent_tokens > budget.max_tokens:
            break

    if abort_reason is not None:
        outcome = "aborted"
    elif finished:
        outcome = "success"
    else:
        outcome = "budget_exhausted"

    trajectory = Trajectory(
        task_id=task_id,
        query=query,
        steps=tuple(steps),
        final_answer=final_answer,
        outcome=outcome,
        seed=seed,
        toolset_digest=digest_before,
        abort_reason=abort_reason,
        wall_time=time.perf_counter() - started,
    )
    trajectory.validate(budget.t_max)

    if finished and outcome_eval is not None:
        graded = "success" if outcome_eval(trajectory) else "failure"
        trajectory = replace(trajectory, outcome=graded)

    if toolset.digest() != digest_before:
        raise ToolhiveError("toolset mutated during episode; freeze contract violated")
    return trajectory
