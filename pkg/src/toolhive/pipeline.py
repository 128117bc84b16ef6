"""Training-data manufacture from labeled tasks.

Backward reconstruction runs episodes with the ground-truth label injected
into the policy context through a sentinel-marked verification framing, and
keeps trajectories whose final answer matches the label. Forward sampling
is the label-blind baseline the backward mode must out-yield. Forward
refinement then rewrites reasoning (and the final answer) while the
call/result skeleton stays frozen; a validator rejects any structural
drift, and the export stage refuses records that still carry the framing
markers. The end product is a seeded, split, chat-format dataset.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from .canonical import derive_seed, dumps, text_digest
from .errors import PipelineError
from .registry import ToolRegistry
from .runtime import Action, Budget, StepResult, Trajectory, run_episode
from .toolset import HybridToolset
from .envs.base import answers_match

logger = logging.getLogger(__name__)

FRAMING_OPEN = "[[label-guidance]]"
FRAMING_CLOSE = "[[/label-guidance]]"
FRAMING_MARKERS = (FRAMING_OPEN, FRAMING_CLOSE)

DEFAULT_BACKWARD_ATTEMPTS = 4
DEFAULT_FORWARD_ATTEMPTS = 8


def make_framing(label: str) -> str:
    return (
        f"{FRAMING_OPEN} The verified outcome for this query is: {label}. "
        f"Use the tools to confirm this outcome and explain why it holds. {FRAMING_CLOSE}"
    )


def contains_framing(text: str) -> bool:
    return any(marker in text for marker in FRAMING_MARKERS)


@dataclass(frozen=True)
class LabeledTask:
    """A (query, ground-truth label) pair driving reconstruction."""

    task_id: str
    query: str
    label: str
    category: str = ""

    def __post_init__(self):
        if not self.label:
            raise PipelineError(f"task {self.task_id}: label must be non-empty")

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "query": self.query,
            "label": self.label,
            "category": self.category,
        }

    @staticmethod
    def from_dict(d: dict) -> "LabeledTask":
        return LabeledTask(
            task_id=d["task_id"],
            query=d["query"],
            label=d["label"],
            category=d.get("category", ""),
        )


def save_labeled_tasks(tasks: Sequence[LabeledTask], path: str | Path) -> None:
    lines = [dumps(t.to_dict()) for t in tasks]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_labeled_tasks(path: str | Path) -> list[LabeledTask]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(LabeledTask.from_dict(json.loads(line)))
    return out


def sample_labeled_tasks(n: int, seed: int = 0) -> list[LabeledTask]:
    """Deterministic offline fixture set of claim-verification tasks."""
    categories = ("Error", "Outdated", "Missing", "Anomaly", "Relocation")
    rng = random.Random(seed)
    tasks = []
    for i in range(n):
        tasks.append(
            LabeledTask(
                task_id=f"case_{i:03d}",
                query=f"Is the listing for site {i} still accurate?",
                label=rng.choice(("valid", "invalid")),
                category=categories[i % len(categories)],
            )
        )
    return tasks


@dataclass(frozen=True)
class ReconstructionResult:
    """One reconstruction attempt and whether it agreed with the label."""

    task: LabeledTask
    trajectory: Trajectory
    mode: str  # backward | forward
    label_consistent: bool
    attempt: int = 0

    def to_dict(self) -> dict:
        return {
            "task": self.task.to_dict(),
            "trajectory": self.trajectory.to_dict(),
            "mode": self.mode,
            "label_consistent": self.label_consistent,
            "attempt": self.attempt,
        }

    @staticmethod
    def from_dict(d: dict) -> "ReconstructionResult":
        return ReconstructionResult(
            task=LabeledTask.from_dict(d["task"]),
            trajectory=Trajectory.from_dict(d["trajectory"]),
            mode=d["mode"],
            label_consistent=d["label_consistent"],
            attempt=d.get("attempt", 0),
        )


def save_reconstruction_results(results: Sequence[ReconstructionResult], path: str | Path) -> None:
    lines = [dumps(r.to_dict()) for r in results]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_reconstruction_results(path: str | Path) -> list[ReconstructionResult]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(ReconstructionResult.from_dict(json.loads(line)))
    return out


def _resolve_registry(registry) -> ToolRegistry:
    return registry() if callable(registry) else registry


def _resolve_policy(policy, task_id: str, attempt: int):
    for_attempt = getattr(policy, "for_attempt", None)
    if for_attempt is not None:
        return for_attempt(task_id, attempt)
    return policy


def _reconstruct(
    tasks: Sequence[LabeledTask],
    toolset: HybridToolset,
    policy,
    registry,
    attempts_per_task: int,
    seed: int,
    mode: str,
    t_max: int,
    keep_all: bool,
) -> list[ReconstructionResult]:
    if attempts_per_task < 1:
        raise PipelineError("attempts_per_task must be at least 1")
    results: list[ReconstructionResult] = []
    for task in tasks:
        for attempt in range(attempts_per_task):
            framing = make_framing(task.label) if mode == "backward" else None
            episode_policy = _resolve_policy(policy, task.task_id, attempt)
            trajectory = run_episode(
                query=task.query,
                toolset=toolset,
                policy=episode_policy,
                registry=_resolve_registry(registry),
                budget=Budget(t_max=t_max),
                seed=derive_seed(seed, mode, task.task_id, str(attempt)),
                task_id=task.task_id,
                framing=framing,
            )
            consistent = trajectory.outcome not in ("aborted",) and answers_match(
                trajectory.final_answer, task.label
            )
            results.append(
                ReconstructionResult(
                    task=task,
                    trajectory=trajectory,
                    mode=mode,
                    label_consistent=consistent,
                    attempt=attempt,
                )
            )
            if consistent and not keep_all:
                break
    return results


def backward_reconstruct(
    tasks: Sequence[LabeledTask],
    toolset: HybridToolset,
    policy,
    registry,
    attempts_per_task: int = DEFAULT_BACKWARD_ATTEMPTS,
    seed: int = 0,
    t_max: int = 25,
    keep_all: bool = False,
) -> list[ReconstructionResult]:
    """Label-conditioned reconstruction: the label is injected into the
    policy context via the marked verification framing; attempts stop at
    the first label-consistent trajectory. All attempts are returned so
    yield accounting sees the failures too."""
    return _reconstruct(
        tasks, toolset, policy, registry, attempts_per_task, seed, "backward", t_max, keep_all
    )


def forward_sample(
    tasks: Sequence[LabeledTask],
    toolset: HybridToolset,
    policy,
    registry,
    attempts_per_task: int = DEFAULT_FORWARD_ATTEMPTS,
    seed: int = 0,
    t_max: int = 25,
    keep_all: bool = False,
) -> list[ReconstructionResult]:
    """Label-blind baseline: same loop, no framing; a trajectory is
    retained only when its final answer happens to match the label."""
    return _reconstruct(
        tasks, toolset, policy, registry, attempts_per_task, seed, "forward", t_max, keep_all
    )


def retained_records(
    results: Sequence[ReconstructionResult], keep_all: bool = False
) -> list[ReconstructionResult]:
    """The label-consistent record(s) per task: first one, or all with keep_all."""
    out: list[ReconstructionResult] = []
    seen: set[str] = set()
    for result in results:
        if not result.label_consistent:
            continue
        if keep_all or result.task.task_id not in seen:
            out.append(result)
            seen.add(result.task.task_id)
    return out


# --------------------------------------------------------------------------
# Forward refinement
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TeacherProposal:
    """What a refinement teacher hands back: new reasoning per step, a new
    final answer, and an echo of the frozen call/result skeleton."""

    reasonings: tuple
    final_answer: str
    skeleton: tuple  # rows: {kind, target, arguments, payload}


def trajectory_skeleton(trajectory: Trajectory) -> tuple:
    rows = []
    for action, result in trajectory.call_steps():
        rows.append(
            {
                "kind": action.kind,
                "target": action.target,
                "arguments": action.arguments,
                "payload": result.payload,
            }
        )
    return tuple(rows)


@dataclass(frozen=True)
class RefinedTrajectory:
    """A trajectory whose reasoning (and final answer) were rewritten while
    every call and result stayed byte-identical to the source."""

    source: Trajectory
    refined_steps: tuple
    refined_answer: str
    unrefined: bool = False
    category: str = ""

    @property
    def task_id(self) -> str:
        return self.source.task_id

    @property
    def query(self) -> str:
        return self.source.query

    def refined_trajectory(self) -> Trajectory:
        return replace(
            self.source, steps=self.refined_steps, final_answer=self.refined_answer
        )

    def to_dict(self) -> dict:
        return {
            "source": self.source.to_dict(),
            "reasonings": [a.reasoning for a, _r in self.refined_steps],
            "refined_answer": self.refined_answer,
            "unrefined": self.unrefined,
            "category": self.category,
        }

    @staticmethod
    def from_dict(d: dict) -> "RefinedTrajectory":
        source = Trajectory.from_dict(d["source"])
        reasonings = d["reasonings"]
        steps = _steps_with_reasonings(source, reasonings, d["refined_answer"])
        return RefinedTrajectory(
            source=source,
            refined_steps=steps,
            refined_answer=d["refined_answer"],
            unrefined=d.get("unrefined", False),
            category=d.get("category", ""),
        )


def _steps_with_reasonings(source: Trajectory, reasonings: Sequence[str], answer: str) -> tuple:
    if len(reasonings) != len(source.steps):
        raise PipelineError(
            f"{source.task_id}: {len(reasonings)} reasonings for {len(source.steps)} steps"
        )
    steps = []
    for (action, result), reasoning in zip(source.steps, reasonings):
        new_action = replace(action, reasoning=reasoning)
        if action.kind == "finish":
            new_action = replace(new_action, answer=answer)
            result = replace(result, payload=answer)
        steps.append((new_action, result))
    return tuple(steps)


def save_refined(refined: Sequence[RefinedTrajectory], path: str | Path) -> None:
    lines = [dumps(r.to_dict()) for r in refined]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_refined(path: str | Path) -> list[RefinedTrajectory]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(RefinedTrajectory.from_dict(json.loads(line)))
    return out


def identity_refinement(source: Trajectory, category: str = "", unrefined: bool = False) -> RefinedTrajectory:
    return RefinedTrajectory(
        source=source,
        refined_steps=source.steps,
        refined_answer=source.final_answer,
        unrefined=unrefined,
        category=category,
    )


def proposal_to_refined(
    source: Trajectory, proposal: TeacherProposal, category: str = ""
) -> RefinedTrajectory:
    """Materialize a teacher proposal without judging it; the validator
    decides acceptance. Skeleton rows override the source call steps, which
    is exactly how a structure-altering teacher shows up as a mismatch."""
    call_steps = source.call_steps()
    steps: list[tuple] = []
    for i, row in enumerate(proposal.skeleton):
        base_action, base_result = call_steps[i] if i < len(call_steps) else (
            Action(kind=row["kind"], target=row["target"], arguments=row["arguments"]),
            StepResult(status="ok", payload=row["payload"]),
        )
        reasoning = proposal.reasonings[i] if i < len(proposal.reasonings) else base_action.reasoning
        steps.append(
            (
                Action(
                    kind=row["kind"],
                    target=row["target"],
                    arguments=dict(row["arguments"]),
                    reasoning=reasoning,
                ),
                replace(base_result, payload=row["payload"]),
            )
        )
    n_calls = len(call_steps)
    for j, (action, result) in enumerate(source.steps[n_calls:]):
        reasoning_index = len(proposal.skeleton) + j
        reasoning = (
            proposal.reasonings[reasoning_index]
            if reasoning_index < len(proposal.reasonings)
            else action.reasoning
        )
        new_action = replace(action, reasoning=reasoning)
        if action.kind == "finish":
            new_action = replace(new_action, answer=proposal.final_answer)
            result = replace(result, payload=proposal.final_answer)
        steps.append((new_action, result))
    return RefinedTrajectory(
        source=source,
        refined_steps=tuple(steps),
        refined_answer=proposal.final_answer,
        category=category,
    )


def validate_structure_preserved(
    source: Trajectory, refined: RefinedTrajectory
) -> tuple[bool, str]:
    """True iff the refined steps carry the source's exact call skeleton.

    Compares step count, then per step the action kind, target, arguments,
    and (for call steps) the result payload and member results. The finish
    step's payload is the rewritten answer and is exempt. The report names
    the first divergence.
    """
    src_steps = source.steps
    ref_steps = refined.refined_steps
    if len(src_steps) != len(ref_steps):
        return False, f"step count differs: source {len(src_steps)}, refined {len(ref_steps)}"
    for i, ((sa, sr), (ra, rr)) in enumerate(zip(src_steps, ref_steps)):
        if sa.kind != ra.kind:
            return False, f"step {i}: kind differs ({sa.kind!r} vs {ra.kind!r})"
        if sa.target != ra.target:
            return False, f"step {i}: target differs ({sa.target!r} vs {ra.target!r})"
        if dumps(sa.arguments) != dumps(ra.arguments):
            return False, f"step {i}: arguments differ"
        if sa.kind == "finish":
            continue
        if sr.payload != rr.payload:
            return False, f"step {i}: result payload differs"
        if [m.to_dict() for m in sr.member_results] != [m.to_dict() for m in rr.member_results]:
            return False, f"step {i}: member results differ"
    return True, "ok"


class IdentityTeacher:
    """Echoes the source verbatim; the trivial fixed point of refinement."""

    def refine(self, query: str, source: Trajectory) -> TeacherProposal:
        return TeacherProposal(
            reasonings=tuple(a.reasoning for a, _ in source.steps),
            final_answer=source.final_answer,
            skeleton=trajectory_skeleton(source),
        )


class ReasoningRewriteTeacher:
    """Deterministic forward-style rewrite of reasoning only: the skeleton
    and final answer are echoed untouched."""

    def refine(self, query: str, source: Trajectory) -> TeacherProposal:
        reasonings = []
        for i, (action, _result) in enumerate(source.steps):
            if action.kind == "finish":
                reasonings.append(
                    "The evidence collected above settles the question, so I answer now."
                )
            else:
                reasonings.append(
                    f"To make progress on the task I call {action.target} next "
                    f"and use its output."
                )
        return TeacherProposal(
            reasonings=tuple(reasonings),
            final_answer=source.final_answer,
            skeleton=trajectory_skeleton(source),
        )


MUTATION_CLASSES = (
    "drop_step",
    "swap_steps",
    "edit_argument",
    "edit_payload",
    "edit_target",
    "edit_kind",
)


class MutatingTeacher:
    """Adversarial fixture: echoes the skeleton except for one canonical
    structural mutation. Every mutation class must be rejected."""

    def __init__(self, mutation: str, index: int = 0):
        if mutation not in MUTATION_CLASSES:
            raise PipelineError(f"unknown mutation class {mutation!r}")
        self.mutation = mutation
        self.index = index

    def refine(self, query: str, source: Trajectory) -> TeacherProposal:
        base = IdentityTeacher().refine(query, source)
        rows = [dict(r) for r in base.skeleton]
        if not rows:
            raise PipelineError("mutation fixtures need at least one call step")
        i = min(self.index, len(rows) - 1)
        if self.mutation == "drop_step":
            del rows[i]
        elif self.mutation == "swap_steps":
            j = (i + 1) % len(rows)
            rows[i], rows[j] = rows[j], rows[i]
        elif self.mutation == "edit_argument":
            rows[i] = {**rows[i], "arguments": {**rows[i]["arguments"], "_tampered": 1}}
        elif self.mutation == "edit_payload":
            rows[i] = {**rows[i], "payload": rows[i]["payload"] + " [tampered]"}
        elif self.mutation == "edit_target":
            rows[i] = {**rows[i], "target": (rows[i]["target"] or "") + "_tampered"}
        elif self.mutation == "edit_kind":
            flipped = "call_agent" if rows[i]["kind"] == "call_basic" else "call_basic"
            rows[i] = {**rows[i], "kind": flipped}
        return TeacherProposal(
            reasonings=base.reasonings,
            final_answer=base.final_answer,
            skeleton=tuple(rows),
        )


class RemoteTeacher:
    """Refinement via a chat backend; the skeleton travels as structured
    content and only the reasoning slots and answer may be filled."""

    def __init__(self, backend):
        self.backend = backend

    def refine(self, query: str, source: Trajectory) -> TeacherProposal:
        response = self.backend.complete(
            role="teacher",
            context={
                "instruction": (
                    "Rewrite the reasoning for each step in a forward problem-solving "
                    "style, conditioned only on the query. Do not change any call or "
                    "result. Reply with JSON {reasonings, final_answer, skeleton}."
                ),
                "query": query,
                "skeleton": list(trajectory_skeleton(source)),
                "step_count": len(source.steps),
            },
        )
        doc = json.loads(response.text)
        return TeacherProposal(
            reasonings=tuple(doc["reasonings"]),
            final_answer=doc["final_answer"],
            skeleton=tuple(doc["skeleton"]),
        )


def forward_refine(
    results: Sequence[ReconstructionResult],
    teacher,
) -> list[RefinedTrajectory]:
    """Structure-preserving rewrite of every label-consistent trajectory.

    A teacher that alters the skeleton, mismatches the reasoning count, or
    leaks the framing markers is rejected for that record: the source
    reasoning is retained and the record flagged unrefined.
    """
    refined: list[RefinedTrajectory] = []
    for result in results:
        if not result.label_consistent:
            raise PipelineError(
                f"refinement input {result.task.task_id} is not label-consistent"
            )
        source = result.trajectory
        category = result.task.category
        try:
            proposal = teacher.refine(result.task.query, source)
            candidate = proposal_to_refined(source, proposal, category=category)
            ok, report = validate_structure_preserved(source, candidate)
            if not ok:
                raise PipelineError(f"structure altered: {report}")
            leaky = [r for r in proposal.reasonings if contains_framing(r)]
            if leaky or contains_framing(proposal.final_answer):
                raise PipelineError("refinement leaked label-guidance markers")
            refined.append(candidate)
        except Exception as exc:
            logger.warning("refinement failed for %s: %s", result.task.task_id, exc)
            refined.append(identity_refinement(source, category=category, unrefined=True))
    return refined


# --------------------------------------------------------------------------
# Dataset assembly and export
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingRecord:
    query: str
    refined: RefinedTrajectory
    split: str  # train | validation


def split_counts(total: int, split_ratio: float) -> tuple[int, int]:
    if not 0.0 < split_ratio < 1.0:
        raise PipelineError(f"split ratio out of range: {split_ratio}")
    n_train = round(total * split_ratio)
    if total >= 2:
        n_train = max(1, min(total - 1, n_train))
    return n_train, total - n_train


def chat_conversation(record: TrainingRecord, interface: Optional[list] = None) -> dict:
    """One chat-format conversation: system (tool interface), user (query),
    alternating assistant tool-calls and tool results, closing answer."""
    trajectory = record.refined.refined_trajectory()
    if interface is None:
        names = sorted({a.target for a, _ in trajectory.call_steps() if a.target})
        system = "You can call these tools: " + ", ".join(names) if names else (
            "Answer using the available tools."
        )
    else:
        system = "You can call these tools:\n" + dumps(interface)
    messages: list[dict] = [
        {"role": "system", "content": system},
        {"role": "user", "content": record.query},
    ]
    call_index = 0
    for action, result in trajectory.steps:
        if action.kind == "finish":
            continue
        call_id = f"call_{call_index}"
        call_index += 1
        messages.append(
            {
                "role": "assistant",
                "content": action.reasoning,
                "tool_calls": [
                    {
                        "id": call_id,
                        "type": "function",
                        "function": {
                            "name": action.target,
                            "arguments": json.dumps(action.arguments, sort_keys=True),
                        },
                    }
                ],
            }
        )
        messages.append({"role": "tool", "tool_call_id": call_id, "content": result.payload})
    closing = trajectory.final_answer
    finish_reasoning = next(
        (a.reasoning for a, _ in trajectory.steps if a.kind == "finish"), ""
    )
    content = f"{finish_reasoning}\n{closing}".strip() if finish_reasoning else closing
    messages.append({"role": "assistant", "content": content})
    return {
        "messages": messages,
        "meta": {
            "task_id": record.refined.task_id,
            "category": record.refined.category,
            "split": record.split,
        },
    }


def assemble_and_export(
    refined: Sequence[RefinedTrajectory],
    split_ratio: float,
    seed: int,
    fmt: str = "chat_sft",
    out_dir: Optional[str | Path] = None,
    toolset: Optional[HybridToolset] = None,
) -> dict:
    """Seeded shuffle, split, validate, and write the dataset.

    Hard errors: empty input, a record failing structure validation, or a
    record still carrying the label-guidance markers.
    """
    if not refined:
        raise PipelineError("refusing to export an empty dataset")
    if fmt not in ("chat_sft", "raw"):
        raise PipelineError(f"unknown export format {fmt!r}")

    for r in refined:
        ok, report = validate_structure_preserved(r.source, r)
        if not ok:
            raise PipelineError(f"record {r.task_id} fails structure validation: {report}")

    order = list(range(len(refined)))
    random.Random(seed).shuffle(order)
    n_train, n_val = split_counts(len(refined), split_ratio)

    records: list[TrainingRecord] = []
    for rank, idx in enumerate(order):
        split = "train" if rank < n_train else "validation"
        records.append(TrainingRecord(query=refined[idx].query, refined=refined[idx], split=split))

    interface = toolset.interface() if toolset is not None else None
    lines: dict[str, list[str]] = {"train": [], "validation": []}
    categories: dict[str, int] = {}
    for record in records:
        if fmt == "chat_sft":
            doc = chat_conversation(record, interface)
        else:
            doc = {
                "query": record.query,
                "trajectory": record.refined.refined_trajectory().to_dict(),
                "meta": {
                    "task_id": record.refined.task_id,
                    "category": record.refined.category,
                    "split": record.split,
                },
            }
        line = dumps(doc)
        if contains_framing(line):
            raise PipelineError(
                f"record {record.refined.task_id} leaks label-guidance markers"
            )
        lines[record.split].append(line)
        cat = record.refined.category or "uncategorized"
        categories[cat] = categories.get(cat, 0) + 1

    manifest = {
        "format": fmt,
        "split_ratio": split_ratio,
        "seed": seed,
        "total": len(records),
        "train_count": len(lines["train"]),
        "validation_count": len(lines["validation"]),
        "categories": dict(sorted(categories.items())),
        "digests": {
            "train": text_digest("\n".join(lines["train"])),
            "validation": text_digest("\n".join(lines["validation"])),
        },
    }

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for split in ("train", "validation"):
            body = "\n".join(lines[split]) + ("\n" if lines[split] else "")
            (out / f"{split}.jsonl").write_text(body, encoding="utf-8")
        (out / "manifest.json").write_text(dumps(manifest) + "\n", encoding="utf-8")
    return manifest
