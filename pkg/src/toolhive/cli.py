"""Operator entry point: agentize, run, synth, reconstruct, refine,
export, eval, report.

Every stage reads and writes only its declared files; outputs are built in
memory and written atomically, and anything produced before a failure goes
to a `.quarantine` path so a previous good artifact is never clobbered.
Exit codes: 0 success, 1 acceptance-gate failure in --assert mode, 2
configuration or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import pipeline
from .backends import ENV_OFFLINE, BackendConfig, LiveBackend
from .canonical import dumps
from .envs import (
    build_bundled_suite,
    bundled_plan,
    check_success,
    default_parts_universe,
    fixture_generator,
    fixture_judge,
    gold_policy_factory,
    load_task_suite,
    random_policy_factory,
    save_task_suite,
    synthesize_tasks,
    task_toolset,
    verification_registry,
    verification_toolset,
)
from .envs.verify import evidence_script
from .errors import ToolhiveError
from .metrics import (
    PAIRED_CHECKS,
    aggregate,
    assert_paired,
    efficiency_delta,
    operational_ratios,
    render_paired,
    render_ratios,
    render_report,
    score_run,
)
from .policies import LabelVerifierPolicy, RemotePolicy, VerifierSchedule
from .runtime import read_trajectories, run_episode, write_trajectories
from .toolset import AgentizationPlan, HybridToolset, build_toolset, load_manifest, save_manifest
from .envs.suite import run_suite

logger = logging.getLogger(__name__)


class ArtifactSink:
    """Collects (path, text) outputs; flushes atomically on success and to
    quarantine paths on failure."""

    def __init__(self):
        self.items: list[tuple[Path, str]] = []

    def add(self, path: str | Path, text: str) -> None:
        self.items.append((Path(path), text))

    def flush(self, quarantine: bool = False) -> None:
        for path, text in self.items:
            target = path.with_name(path.name + ".quarantine") if quarantine else path
            target.parent.mkdir(parents=True, exist_ok=True)
            tmp = target.with_name(target.name + ".tmp")
            tmp.write_text(text, encoding="utf-8")
            os.replace(tmp, target)
        self.items.clear()


def _load_tasks_any(path: str):
    """Task input: a sim-task suite document or a labeled-task JSONL file."""
    text = Path(path).read_text(encoding="utf-8")
    head = text.lstrip()[:1]
    if head == "{" and '"tasks"' in text.splitlines()[0] or text.lstrip().startswith('{"tasks"'):
        return load_task_suite(path)
    first = json.loads(text.splitlines()[0])
    if "tasks" in first:
        return load_task_suite(path)
    return pipeline.load_labeled_tasks(path)


def _resolve_run_toolset(arg: str):
    """--toolset is a mode (per-task derivation) or a saved toolset file."""
    if arg in ("flat", "hybrid"):
        return arg, None
    toolset = HybridToolset.load(arg)
    return ("hybrid" if toolset.agents else "flat"), toolset


def _policy_factory(spec: str, mode: str):
    if spec == "scripted:gold":
        return gold_policy_factory(mode)
    if spec == "random":
        return random_policy_factory()
    if spec == "remote":
        backend = LiveBackend(BackendConfig.from_env())
        return lambda task, toolset, seed: RemotePolicy(backend)
    raise ToolhiveError(f"unknown policy {spec!r} (use scripted:gold, random, or remote)")


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_agentize(args, sink: ArtifactSink) -> int:
    manifest = load_manifest(args.manifest)
    plan = AgentizationPlan.load(args.plan)
    toolset = build_toolset(manifest, plan)
    sink.add(args.out, dumps(toolset.to_dict()) + "\n")
    print(f"hybrid toolset: {len(toolset.basic)} basic + {len(toolset.agents)} agents")
    print(f"digest: {toolset.digest()}")
    return 0


def cmd_run(args, sink: ArtifactSink) -> int:
    tasks = load_task_suite(args.tasks)
    mode, fixed_toolset = _resolve_run_toolset(args.toolset)
    factory = _policy_factory(args.policy, mode)

    if fixed_toolset is None:
        trajectories = run_suite(
            tasks, mode, factory, seed=args.seed, t_max=args.t_max, workers=args.workers
        )
    else:
        trajectories = []
        for task in tasks:
            _state, registry = task.environment.instantiate()
            policy = factory(task, fixed_toolset, args.seed)
            trajectories.append(
                run_episode(
                    query=task.query,
                    toolset=fixed_toolset,
                    policy=policy,
                    registry=registry,
                    budget=__import__("toolhive.runtime", fromlist=["Budget"]).Budget(t_max=args.t_max),
                    seed=args.seed,
                    task_id=task.task_id,
                    outcome_eval=lambda tr, t=task: check_success(tr, t, fixed_toolset),
                )
            )

    lines = [dumps(t.to_dict()) for t in trajectories]
    sink.add(args.out, "\n".join(lines) + ("\n" if lines else ""))
    solved = sum(1 for t in trajectories if t.outcome == "success")
    print(f"ran {len(trajectories)} tasks in {mode} mode: {solved} succeeded")
    return 0


def cmd_synth(args, sink: ArtifactSink) -> int:
    tasks = synthesize_tasks(
        default_parts_universe(),
        generator=fixture_generator(),
        judge=fixture_judge(),
        k=args.k,
        n_candidates=args.n_candidates,
        seed=args.seed,
        band=tuple(args.band),
        inclusive=args.inclusive,
    )
    doc = {"tasks": [t.to_dict() for t in tasks]}
    sink.add(args.out, dumps(doc) + "\n")
    print(f"synthesized {len(tasks)} tasks")
    return 0


def cmd_reconstruct(args, sink: ArtifactSink) -> int:
    tasks = pipeline.load_labeled_tasks(args.tasks)
    toolset = verification_toolset()
    registry = verification_registry()
    labels = {t.task_id: t.label for t in tasks}
    if args.schedule:
        doc = json.loads(Path(args.schedule).read_text(encoding="utf-8"))
        schedule = VerifierSchedule(
            backward=doc.get("backward", {}), forward=doc.get("forward", {})
        )
    else:
        ids = [t.task_id for t in tasks]
        schedule = VerifierSchedule(
            backward={tid: [True] for tid in ids},
            forward={tid: [i % 5 == 0] for i, tid in enumerate(ids)},
        )
    policy = LabelVerifierPolicy(labels=labels, schedule=schedule)

    def policy_with_evidence(task_id: str, attempt: int):
        p = policy.for_attempt(task_id, attempt)
        return LabelVerifierPolicy(
            labels=p.labels,
            schedule=p.schedule,
            evidence_script=evidence_script(task_id),
            task_id=task_id,
            attempt=attempt,
        )

    class _Factory:
        def for_attempt(self, task_id, attempt):
            return policy_with_evidence(task_id, attempt)

    fn = pipeline.backward_reconstruct if args.mode == "backward" else pipeline.forward_sample
    results = fn(
        tasks,
        toolset,
        _Factory(),
        registry,
        attempts_per_task=args.attempts,
        seed=args.seed,
        workers=args.workers,
    )
    lines = [dumps(r.to_dict()) for r in results]
    sink.add(args.out, "\n".join(lines) + ("\n" if lines else ""))
    kept = pipeline.retained_records(results)
    print(
        f"{args.mode} reconstruction: {len(results)} attempts over {len(tasks)} tasks, "
        f"{len(kept)} records retained"
    )
    return 0


def cmd_refine(args, sink: ArtifactSink) -> int:
    results = pipeline.load_reconstruction_results(args.results)
    retained = pipeline.retained_records(results)
    if args.teacher == "identity":
        teacher = pipeline.IdentityTeacher()
    elif args.teacher == "rewrite":
        teacher = pipeline.ReasoningRewriteTeacher()
    elif args.teacher == "remote":
        teacher = pipeline.RemoteTeacher(LiveBackend(BackendConfig.from_env()))
    else:
        raise ToolhiveError(f"unknown teacher {args.teacher!r}")
    refined = pipeline.forward_refine(retained, teacher)
    lines = [dumps(r.to_dict()) for r in refined]
    sink.add(args.out, "\n".join(lines) + ("\n" if lines else ""))
    fallbacks = sum(1 for r in refined if r.unrefined)
    print(f"refined {len(refined)} records ({fallbacks} fell back to source reasoning)")
    return 0


def cmd_export(args, sink: ArtifactSink) -> int:
    refined = pipeline.load_refined(args.refined)
    toolset = HybridToolset.load(args.toolset) if args.toolset else None
    manifest = pipeline.assemble_and_export(
        refined,
        split_ratio=args.ratio,
        seed=args.seed,
        fmt=args.format,
        out_dir=args.out,
        toolset=toolset,
    )
    print(
        f"exported {manifest['train_count']} train / "
        f"{manifest['validation_count']} validation records to {args.out}"
    )
    return 0


def _grade(trajectory_path: str, tasks, name: str):
    trajectories = read_trajectories(trajectory_path)
    metrics = score_run(trajectories, tasks)
    return aggregate(metrics, name=name)


def cmd_eval(args, sink: ArtifactSink) -> int:
    tasks = _load_tasks_any(args.tasks)
    if args.paired:
        baseline = _grade(args.paired[0], tasks, name="flat")
        treated = _grade(args.paired[1], tasks, name="hybrid")
        delta = efficiency_delta(baseline, treated)
        failures = assert_paired(baseline, treated, args.assert_checks or [])
        doc = {
            "kind": "paired",
            "baseline": baseline.to_dict(),
            "treated": treated.to_dict(),
            "delta": delta,
            "assert_failures": failures,
        }
        sink.add(args.out, dumps(doc) + "\n")
        print(render_paired(baseline, treated))
        if failures:
            for failure in failures:
                print(f"ASSERT FAILED {failure}", file=sys.stderr)
            sink.flush()
            return 1
        return 0

    report = _grade(args.trajectories, tasks, name=args.name)
    doc = {"kind": "single", "report": report.to_dict()}
    if args.staff_capacity is not None:
        trajectories = read_trajectories(args.trajectories)
        metrics = score_run(trajectories, tasks)
        outcomes = [{"task_id": m.task_id, "auto_resolved": m.success} for m in metrics]
        doc["ratios"] = operational_ratios(
            outcomes, args.staff_capacity, args.baseline_staff
        )
    sink.add(args.out, dumps(doc) + "\n")
    print(render_report(report))
    if "ratios" in doc:
        print(render_ratios({report.name: doc["ratios"]}))
    return 0


def cmd_report(args, sink: ArtifactSink) -> int:
    doc = json.loads(Path(args.eval).read_text(encoding="utf-8"))
    if doc.get("kind") == "paired":
        from .metrics import AggregateReport

        baseline = AggregateReport.from_dict(doc["baseline"])
        treated = AggregateReport.from_dict(doc["treated"])
        print(render_paired(baseline, treated))
        if doc.get("assert_failures"):
            print("assert failures: " + "; ".join(doc["assert_failures"]))
    else:
        from .metrics import AggregateReport

        print(render_report(AggregateReport.from_dict(doc["report"])))
        if doc.get("ratios"):
            print(render_ratios({doc["report"]["name"]: doc["ratios"]}))
    return 0


def cmd_fixtures(args, sink: ArtifactSink) -> int:
    """Write the bundled fixtures (manifest, plan, suite, labeled tasks)."""
    out = Path(args.out)
    from .envs.suite import full_environment

    sink.add(out / "manifest.json", dumps({"tools": [t.to_dict() for t in full_environment().manifest]}) + "\n")
    sink.add(out / "plan.json", dumps(bundled_plan().to_dict()) + "\n")
    suite = build_bundled_suite()
    sink.add(out / "suite.json", dumps({"tasks": [t.to_dict() for t in suite]}) + "\n")
    labeled = pipeline.sample_labeled_tasks(args.n_labeled, seed=args.seed)
    sink.add(
        out / "labeled_tasks.jsonl",
        "\n".join(dumps(t.to_dict()) for t in labeled) + "\n",
    )
    print(f"wrote fixtures to {out} ({len(suite)} suite tasks, {len(labeled)} labeled)")
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toolhive", description=__doc__)
    parser.add_argument("--offline", action="store_true", help="forbid live backends")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("agentize", help="build a hybrid toolset from a manifest and plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_agentize)

    p = sub.add_parser("run", help="run planner episodes over a task suite")
    p.add_argument("--tasks", required=True)
    p.add_argument("--toolset", required=True, help="flat, hybrid, or a toolset file")
    p.add_argument("--policy", default="scripted:gold")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--t-max", type=int, default=25)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("synth", help="synthesize tasks with the fixture backends")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--n-candidates", type=int, default=10)
    p.add_argument("--band", type=float, nargs=2, default=(0.0, 1.0))
    p.add_argument("--inclusive", action="store_true")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("reconstruct", help="reconstruct trajectories from labeled tasks")
    p.add_argument("--tasks", required=True)
    p.add_argument("--mode", choices=("backward", "forward"), default="backward")
    p.add_argument("--attempts", type=int, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--schedule", default=None, help="JSON success schedule for the scripted verifier")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("refine", help="structure-preserving reasoning rewrite")
    p.add_argument("--results", required=True)
    p.add_argument("--teacher", default="rewrite", choices=("identity", "rewrite", "remote"))
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_refine)

    p = sub.add_parser("export", help="assemble and export the training dataset")
    p.add_argument("--refined", required=True)
    p.add_argument("--ratio", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", default="chat_sft", choices=("chat_sft", "raw"))
    p.add_argument("--toolset", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("eval", help="score trajectories against tasks")
    p.add_argument("--tasks", required=True)
    p.add_argument("--trajectories")
    p.add_argument("--paired", nargs=2, metavar=("FLAT", "HYBRID"))
    p.add_argument("--assert", dest="assert_checks", nargs="*", choices=PAIRED_CHECKS)
    p.add_argument("--staff-capacity", type=float, default=None)
    p.add_argument("--baseline-staff", type=int, default=1)
    p.add_argument("--name", default="run")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="render a saved evaluation")
    p.add_argument("--eval", required=True)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("fixtures", help="write the bundled fixture files")
    p.add_argument("--out", required=True)
    p.add_argument("--n-labeled", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_fixtures)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.offline:
        os.environ[ENV_OFFLINE] = "1"
    if getattr(args, "command", "") == "reconstruct" and args.attempts is None:
        args.attempts = (
            pipeline.DEFAULT_BACKWARD_ATTEMPTS
            if args.mode == "backward"
            else pipeline.DEFAULT_FORWARD_ATTEMPTS
        )
    if getattr(args, "command", "") == "eval":
        if bool(args.paired) == bool(args.trajectories):
            parser.error("eval needs exactly one of --trajectories or --paired")

    sink = ArtifactSink()
    try:
        status = args.fn(args, sink)
    except ToolhiveError as exc:
        sink.flush(quarantine=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sink.flush()
    return status


if __name__ == "__main__":
    sys.exit(main())
