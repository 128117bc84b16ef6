"""Planner policy implementations.

Policies are queried once per step with a PolicyContext and return an
Action. The step cursor is derived from the visible history length, so one
policy object can serve concurrent episodes without shared mutable state
(RandomPolicy is the exception: it owns an RNG and is built per episode).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .backends import Backend
from .canonical import dumps
from .errors import BackendProtocolError
from .runtime import Action, PolicyContext
from .toolset import HybridToolset


def action_lattice(toolset: HybridToolset) -> list[Action]:
    """Every (target, candidate-arguments) pair the planner could choose.

    Basic tools contribute their declared argument candidates; agent tools
    contribute the de-duplicated union of their members' candidates, since
    an agent call broadcasts one document to the whole group.
    """
    actions: list[Action] = []
    for tool in toolset.basic:
        for args in tool.arg_candidates or ({},):
            actions.append(Action(kind="call_basic", target=tool.name, arguments=dict(args)))
    for agent in toolset.agents:
        seen: set[str] = set()
        candidates: list[dict] = []
        for name in agent.group.member_names:
            member = toolset.lookup_member(name) or toolset.lookup_basic(name)
            for args in (member.arg_candidates if member else ()) or ({},):
                key = dumps(args)
                if key not in seen:
                    seen.add(key)
                    candidates.append(dict(args))
        if not candidates:
            candidates = [{}]
        for args in candidates:
            actions.append(Action(kind="call_agent", target=agent.name, arguments=args))
    return actions


@dataclass(frozen=True)
class ScriptedPolicy:
    """Replays a fixed plan, then finishes with an embedded answer."""

    script: tuple
    answer: str = ""
    reasoning_prefix: str = "step"

    def decide(self, context: PolicyContext) -> Action:
        cursor = len(context.history)
        if cursor < len(self.script):
            planned = self.script[cursor]
            if isinstance(planned, Action):
                return planned
            return Action(
                kind=planned.get("kind", "call_basic"),
                target=planned["target"],
                arguments=dict(planned.get("arguments", {})),
                reasoning=planned.get("reasoning", f"{self.reasoning_prefix} {cursor + 1}"),
            )
        return Action(kind="finish", answer=self.answer, reasoning="done")


class RandomPolicy:
    """Uniform choice over the action lattice; finishes with a small seeded
    probability each step so episodes terminate on their own."""

    def __init__(self, toolset: HybridToolset, seed: int, finish_prob: float = 0.1):
        self._lattice = action_lattice(toolset)
        self._rng = random.Random(seed)
        self._finish_prob = finish_prob

    def decide(self, context: PolicyContext) -> Action:
        if not self._lattice or self._rng.random() < self._finish_prob:
            return Action(kind="finish", answer="", reasoning="random stop")
        choice = self._rng.choice(self._lattice)
        return Action(
            kind=choice.kind,
            target=choice.target,
            arguments=dict(choice.arguments),
            reasoning="random choice",
        )


class NoisyScriptPolicy:
    """Follows a gold script but corrupts each step with probability
    `noise` (random action or premature empty finish). Used by the task
    synthesis sampler to obtain pass@k strictly between 0 and 1."""

    def __init__(self, script: Sequence, answer: str, toolset: HybridToolset, seed: int, noise: float = 0.35):
        self._gold = ScriptedPolicy(script=tuple(script), answer=answer)
        self._lattice = action_lattice(toolset)
        self._rng = random.Random(seed)
        self._noise = noise

    def decide(self, context: PolicyContext) -> Action:
        if self._rng.random() < self._noise:
            if not self._lattice or self._rng.random() < 0.5:
                return Action(kind="finish", answer="", reasoning="gave up")
            choice = self._rng.choice(self._lattice)
            return Action(
                kind=choice.kind,
                target=choice.target,
                arguments=dict(choice.arguments),
                reasoning="detour",
            )
        return self._gold.decide(context)


@dataclass(frozen=True)
class VerifierSchedule:
    """Per-task deterministic outcomes for the scripted verification policy.

    `backward`/`forward` map task ids to per-attempt success patterns; an
    attempt index past the end of the pattern repeats the last entry.
    """

    backward: dict = field(default_factory=dict)
    forward: dict = field(default_factory=dict)

    def succeeds(self, mode: str, task_id: str, attempt: int) -> bool:
        table = self.backward if mode == "backward" else self.forward
        pattern = table.get(task_id, [False])
        if not isinstance(pattern, (list, tuple)):
            pattern = [pattern]
        return bool(pattern[min(attempt, len(pattern) - 1)])


class LabelVerifierPolicy:
    """Scripted reconstruction policy for labeled tasks.

    When the context carries a label-guidance framing, it behaves as a
    verifier (backward mode); otherwise it must solve blind (forward mode).
    Success per (mode, task, attempt) is dictated by the schedule; a
    successful attempt runs the evidence script and finishes with the
    task's label, a failed one finishes with "undetermined".
    """

    def __init__(
        self,
        labels: dict,
        schedule: VerifierSchedule,
        evidence_script: Sequence = (),
        task_id: str = "",
        attempt: int = 0,
    ):
        self.labels = labels
        self.schedule = schedule
        self.evidence_script = tuple(evidence_script)
        self.task_id = task_id
        self.attempt = attempt

    def for_attempt(self, task_id: str, attempt: int) -> "LabelVerifierPolicy":
        return LabelVerifierPolicy(
            labels=self.labels,
            schedule=self.schedule,
            evidence_script=self.evidence_script,
            task_id=task_id,
            attempt=attempt,
        )

    def decide(self, context: PolicyContext) -> Action:
        mode = "backward" if context.framing is not None else "forward"
        succeeds = self.schedule.succeeds(mode, self.task_id, self.attempt)
        cursor = len(context.history)
        if succeeds and cursor < len(self.evidence_script):
            planned = self.evidence_script[cursor]
            return Action(
                kind=planned.get("kind", "call_basic"),
                target=planned["target"],
                arguments=dict(planned.get("arguments", {})),
                reasoning=planned.get("reasoning", f"gathering evidence {cursor + 1}"),
            )
        if succeeds:
            answer = self.labels.get(self.task_id, "")
            why = (
                "the collected evidence supports this outcome"
                if mode == "forward"
                else "verified the stated outcome against the evidence"
            )
            return Action(kind="finish", answer=answer, reasoning=why)
        return Action(kind="finish", answer="undetermined", reasoning="could not conclude")


class RemotePolicy:
    """Planner backed by a chat-completions endpoint (or its replay).

    The context is projected onto the standard tool-calling chat layout;
    a tool-call intent in the response becomes a call action, plain text
    becomes the finish action.
    """

    def __init__(self, backend: Backend):
        self.backend = backend

    @staticmethod
    def _messages(context: PolicyContext) -> list[dict]:
        system = (
            "You are a tool-use planner. Decide one next step at a time: call a "
            "tool with JSON arguments, or answer directly when done."
        )
        if context.framing is not None:
            system += "\n" + context.framing
        messages = [
            {"role": "system", "content": system},
            {"role": "user", "content": context.query},
        ]
        for i, h in enumerate(context.history):
            call_id = f"call_{i}"
            messages.append(
                {
                    "role": "assistant",
                    "content": h.reasoning,
                    "tool_calls": [
                        {
                            "id": call_id,
                            "type": "function",
                            "function": {
                                "name": h.target,
                                "arguments": json.dumps(h.arguments, sort_keys=True),
                            },
                        }
                    ],
                }
            )
            messages.append({"role": "tool", "tool_call_id": call_id, "content": h.payload})
        return messages

    def decide(self, context: PolicyContext) -> Action:
        kinds = {row["name"]: row.get("kind", "basic") for row in context.interface}
        response = self.backend.complete(
            role="planner",
            context={
                "messages": self._messages(context),
                "tools": [
                    {
                        "name": row["name"],
                        "description": row["description"],
                        "parameters": row["parameters"],
                    }
                    for row in context.interface
                ],
            },
        )
        if response.tool_calls:
            call = response.tool_calls[0]
            name = call.get("name", "")
            if name not in kinds:
                raise BackendProtocolError(f"planner called unknown tool {name!r}")
            kind = "call_agent" if kinds[name] == "agent" else "call_basic"
            return Action(
                kind=kind,
                target=name,
                arguments=dict(call.get("arguments", {})),
                reasoning=response.text,
            )
        return Action(kind="finish", answer=response.text, reasoning="")

    def synthesize(self, query: str, collected: list[str]) -> str:
        response = self.backend.complete(
            role="synthesizer",
            context={
                "system": "Combine the collected tool results into a final answer.",
                "user": dumps({"query": query, "results": collected}),
            },
        )
        return response.text


def parse_policy_spec(
    spec: str,
    toolset: HybridToolset,
    seed: int,
    backend: Optional[Backend] = None,
):
    """CLI policy selector: "random", "remote", or "scripted:<name>".

    Gold scripted policies are task-dependent and resolved by the runner,
    so this returns a factory marker for them.
    """
    if spec == "random":
        return RandomPolicy(toolset, seed)
    if spec == "remote":
        if backend is None:
            raise BackendProtocolError("remote policy requires a configured backend")
        return RemotePolicy(backend)
    if spec.startswith("scripted:"):
        return spec.split(":", 1)[1]
    raise BackendProtocolError(f"unknown policy spec {spec!r}")
