"""The bundled multi-scenario task suite and its agentization plan.

Twenty-two long-horizon state-changing tasks (plus two answer-lookup
tasks) over composed environments. Each task pins its tool surface and
argument lattice so the search oracle stays cheap, and ships gold plans
for both the flat and the hybrid action space. Ground-truth predicates are
derived by replaying the flat gold plan and pinning every state leaf it
changed, so plans and predicates cannot drift apart.
"""

from __future__ import annotations

import copy
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence

from ..canonical import derive_seed, dumps
from ..errors import ConfigurationError
from ..policies import RandomPolicy, ScriptedPolicy
from ..runtime import Budget, Trajectory, run_episode
from ..toolset import AgentizationPlan, HybridToolset, ToolGroup, assemble_hybrid
from .base import (
    ComposedEnvironment,
    GroundTruth,
    ScenarioConfig,
    SimTask,
    check_success,
    compose,
    state_diff_predicate,
)
from .scenarios import OP_TABLES, build_scenario

SUITE_SEED = 20240601

_DISTRACTORS = {
    "file": "stat",
    "vehicle": "status",
    "trade": "portfolio",
    "travel": "search_flights",
}


def bundled_groups() -> list[ToolGroup]:
    """The suite's agentization plan: mutation bundles that co-occur in
    workflows, plus two read-only multi-source lookup groups."""
    return [
        ToolGroup(
            group_id="secure_cabin",
            member_names=("vehicle.lock_doors", "vehicle.close_windows", "vehicle.arm_alarm"),
            description="Fully secure the cabin in one step.",
        ),
        ToolGroup(
            group_id="preserve_file",
            member_names=("file.archive", "file.index_add"),
            description="Archive a file and add it to the index.",
        ),
        ToolGroup(
            group_id="track_symbol",
            member_names=("trade.watch", "trade.set_alert"),
            description="Watch a symbol and set its alert.",
        ),
        ToolGroup(
            group_id="trip_documents",
            member_names=("travel.apply_visa", "travel.buy_insurance"),
            description="File the paperwork for a destination.",
        ),
        ToolGroup(
            group_id="market_quote",
            member_names=("trade.quote_primary", "trade.quote_backup"),
            description="Quote a symbol across both feeds.",
        ),
        ToolGroup(
            group_id="weather_report",
            member_names=("travel.weather_main", "travel.weather_alt"),
            description="Forecast from both weather endpoints.",
        ),
    ]


def bundled_plan() -> AgentizationPlan:
    return AgentizationPlan(threshold=0.5, manual_groups=tuple(bundled_groups()))


def full_environment() -> ComposedEnvironment:
    """All four scenarios with their complete tool surfaces."""
    return compose([build_scenario(s) for s in ("file", "vehicle", "trade", "travel")])


def groups_for_manifest(manifest, groups: Sequence[ToolGroup]) -> list[ToolGroup]:
    names = {t.name for t in manifest}
    return [g for g in groups if all(m in names for m in g.member_names)]


def task_toolset(task: SimTask, mode: str) -> HybridToolset:
    """The per-task action space for a run mode."""
    if mode == "flat":
        return assemble_hybrid(task.environment.manifest, groups=[])
    if mode == "hybrid":
        groups = groups_for_manifest(task.environment.manifest, bundled_groups())
        return assemble_hybrid(task.environment.manifest, groups)
    raise ConfigurationError(f"unknown toolset mode {mode!r}")


# --------------------------------------------------------------------------
# Task construction
# --------------------------------------------------------------------------

def _apply_script(environment: ComposedEnvironment, script: Sequence[tuple]) -> dict:
    state, registry = environment.instantiate()
    for target, args in script:
        registry.invoke(target, dict(args))
    return state


def _hybridize(script: Sequence[tuple], groups: Sequence[ToolGroup]) -> list[dict]:
    """Collapse consecutive full-group runs into single agent calls."""
    by_first = {g.member_names[0]: g for g in groups}
    steps: list[dict] = []
    i = 0
    while i < len(script):
        target, args = script[i]
        group = by_first.get(target)
        members = group.member_names if group else ()
        window = [t for t, _ in script[i : i + len(members)]]
        if group and tuple(window) == members:
            merged: dict = {}
            for _t, a in script[i : i + len(members)]:
                merged.update(a)
            steps.append(
                {
                    "kind": "call_agent",
                    "target": f"agent_{group.group_id}",
                    "arguments": merged,
                    "reasoning": f"Delegating to agent_{group.group_id}.",
                }
            )
            i += len(members)
            continue
        steps.append(
            {
                "kind": "call_basic",
                "target": target,
                "arguments": dict(args),
                "reasoning": f"Calling {target}.",
            }
        )
        i += 1
    return steps


def _make_task(
    task_id: str,
    query: str,
    script: Sequence[tuple],
    answer: str = "done",
    ground_truth: Optional[GroundTruth] = None,
    extra_candidates: Optional[dict] = None,
) -> SimTask:
    """Build one suite task from its flat gold script.

    The environment exposes exactly the operations the script touches plus
    one read-only distractor per scenario; argument candidates are the
    script's own argument documents (so the oracle's lattice contains the
    plan it must find) plus any decoys passed in.
    """
    per_part: dict[str, dict[str, list[dict]]] = {}
    for target, args in script:
        part_key, op = target.split(".", 1)
        ops = per_part.setdefault(part_key, {})
        bucket = ops.setdefault(op, [])
        if not any(dumps(c) == dumps(args) for c in bucket):
            bucket.append(dict(args))

    parts = []
    for part_key in sorted(per_part):
        scenario = part_key.split("_")[0]
        ops = per_part[part_key]
        distractor = _DISTRACTORS[scenario]
        if distractor not in ops:
            ops[distractor] = [dict(c) for c in OP_TABLES[scenario][distractor].candidates[:1]]
        for op, extras in (extra_candidates or {}).get(part_key, {}).items():
            ops.setdefault(op, [])
            ops[op].extend(dict(e) for e in extras)
        parts.append(
            build_scenario(
                scenario,
                include=sorted(ops),
                candidates={op: tuple(cands) for op, cands in ops.items()},
            )
        )

    environment = compose(parts)
    if ground_truth is None:
        terminal = _apply_script(environment, script)
        predicate = state_diff_predicate(environment.initial_state(), terminal)
        if predicate is None:
            raise ConfigurationError(f"task {task_id}: gold script changes nothing")
        ground_truth = GroundTruth(kind="final_state_predicate", predicate=predicate)

    flat_plan = [
        {
            "kind": "call_basic",
            "target": target,
            "arguments": dict(args),
            "reasoning": f"Calling {target}.",
        }
        for target, args in script
    ]
    category = "+".join(sorted({p.scenario for p in parts}))
    return SimTask(
        task_id=task_id,
        query=query,
        environment=environment,
        ground_truth=ground_truth,
        difficulty=len(script),
        category=category,
        gold_plans={
            "flat": flat_plan,
            "hybrid": _hybridize(script, bundled_groups()),
            "answer": answer,
        },
    )


_VARIANTS = {
    "a": {"file": "a.txt", "text": "alpha", "sym": "AAPL", "alt": "TSLA", "dest": "PAR", "temp": 22},
    "b": {"file": "b.txt", "text": "beta", "sym": "TSLA", "alt": "AAPL", "dest": "NYC", "temp": 26},
}


def _file_setup(v) -> list[tuple]:
    return [
        ("file.create", {"name": v["file"]}),
        ("file.write", {"name": v["file"], "text": v["text"]}),
        ("file.archive", {"name": v["file"]}),
        ("file.index_add", {"name": v["file"]}),
    ]


def _secure() -> list[tuple]:
    return [
        ("vehicle.lock_doors", {}),
        ("vehicle.close_windows", {}),
        ("vehicle.arm_alarm", {}),
    ]


def _track(sym) -> list[tuple]:
    return [("trade.watch", {"symbol": sym}), ("trade.set_alert", {"symbol": sym})]


def _docs(dest) -> list[tuple]:
    return [("travel.apply_visa", {"dest": dest}), ("travel.buy_insurance", {"dest": dest})]


def _templates(v) -> list[tuple[str, str, list[tuple]]]:
    f, tx, sym, dest, temp = v["file"], v["text"], v["sym"], v["dest"], v["temp"]
    return [
        (
            "fv_setup_secure",
            f"Create {f} containing '{tx}', preserve it in the archive and index, "
            f"then secure the car and set the cabin to {temp}.",
            _file_setup(v) + _secure() + [("vehicle.set_ac", {"temp": temp})],
        ),
        (
            "fv_drive",
            f"Prepare {f} with '{tx}' and preserve it, then start the car, "
            "drive 10 km, and secure it.",
            _file_setup(v)
            + [("vehicle.start_engine", {}), ("vehicle.drive", {"distance": 10})]
            + _secure(),
        ),
        (
            "fv_refuel",
            f"Prepare and preserve {f} ('{tx}'), top up 20 units of fuel, "
            "and secure the car.",
            _file_setup(v) + [("vehicle.refuel", {"amount": 20})] + _secure(),
        ),
        (
            "ft_invest",
            f"Record the plan in {f} ('{tx}'), preserve it, buy one {sym}, "
            f"track {sym}, and deposit 100.",
            _file_setup(v)
            + [("trade.buy", {"symbol": sym, "qty": 1})]
            + _track(sym)
            + [("trade.deposit", {"amount": 100})],
        ),
        (
            "ft_rebalance",
            f"Write the rebalance note {f} ('{tx}') and preserve it, deposit 100, "
            f"buy two {sym} and one {v['alt']}, and track {sym}.",
            _file_setup(v)
            + [
                ("trade.deposit", {"amount": 100}),
                ("trade.buy", {"symbol": sym, "qty": 2}),
            ]
            + _track(sym)
            + [("trade.buy", {"symbol": v["alt"], "qty": 1})],
        ),
        (
            "tt_trip",
            f"Buy one {sym} and track it, deposit 100, then book the {dest} trip: "
            "flight, paperwork, and a 2-night hotel.",
            [("trade.buy", {"symbol": sym, "qty": 1})]
            + _track(sym)
            + [
                ("trade.deposit", {"amount": 100}),
                ("travel.book_flight", {"dest": dest}),
            ]
            + _docs(dest)
            + [("travel.book_hotel", {"city": dest, "nights": 2})],
        ),
        (
            "vt_trip",
            f"Start the car and set the cabin to {temp}, secure it, then book the "
            f"{dest} flight, file the paperwork, and book 2 hotel nights.",
            [("vehicle.start_engine", {}), ("vehicle.set_ac", {"temp": temp})]
            + _secure()
            + [("travel.book_flight", {"dest": dest})]
            + _docs(dest)
            + [("travel.book_hotel", {"city": dest, "nights": 2})],
        ),
        (
            "vt_drive",
            f"Drive 10 km to the agency (start first), secure the car, book the "
            f"{dest} flight and its paperwork.",
            [("vehicle.start_engine", {}), ("vehicle.drive", {"distance": 10})]
            + _secure()
            + [("travel.book_flight", {"dest": dest})]
            + _docs(dest),
        ),
        (
            "fvt_long",
            f"Prepare and preserve {f} ('{tx}'), secure the car, then book the "
            f"{dest} flight and file its paperwork.",
            _file_setup(v) + _secure() + [("travel.book_flight", {"dest": dest})] + _docs(dest),
        ),
        (
            "ftt_long",
            f"Prepare and preserve {f} ('{tx}'), buy one {sym} and track it, then "
            f"book the {dest} flight and file its paperwork.",
            _file_setup(v)
            + [("trade.buy", {"symbol": sym, "qty": 1})]
            + _track(sym)
            + [("travel.book_flight", {"dest": dest})]
            + _docs(dest),
        ),
        (
            "easy_secure_trade",
            f"Secure the car, then buy one {sym} and track it.",
            _secure() + [("trade.buy", {"symbol": sym, "qty": 1})] + _track(sym),
        ),
    ]


def _quote_tasks() -> list[SimTask]:
    tasks = []
    for variant, v in _VARIANTS.items():
        sym = v["sym"]
        price = {"AAPL": "100.0", "TSLA": "200.0"}[sym]
        expected = f"{sym}: {price} per share"
        tasks.append(
            _make_task(
                task_id=f"qa_quote_{variant}",
                query=f"What is {sym} trading at? Check both feeds and report the price.",
                script=[
                    ("trade.quote_primary", {"symbol": sym}),
                    ("trade.quote_backup", {"symbol": sym}),
                ],
                answer=expected,
                ground_truth=GroundTruth(kind="answer_match", expected_answer=expected),
            )
        )
        city = v["dest"]
        forecast = {"PAR": "PAR: 18C, clear", "NYC": "NYC: 12C, rain"}[city]
        tasks.append(
            _make_task(
                task_id=f"qa_weather_{variant}",
                query=f"What is the forecast for {city}? Confirm with both providers.",
                script=[
                    ("travel.weather_main", {"city": city}),
                    ("travel.weather_alt", {"city": city}),
                ],
                answer=forecast,
                ground_truth=GroundTruth(kind="answer_match", expected_answer=forecast),
            )
        )
    return tasks


def build_bundled_suite() -> list[SimTask]:
    """The 22 predicate tasks plus 2 answer-match lookups, in id order."""
    tasks = []
    for variant, v in _VARIANTS.items():
        for name, query, script in _templates(v):
            tasks.append(_make_task(task_id=f"{name}_{variant}", query=query, script=script))
    tasks.extend(_quote_tasks())
    tasks.sort(key=lambda t: t.task_id)
    return tasks


# --------------------------------------------------------------------------
# Suite runner
# --------------------------------------------------------------------------

PolicyFactory = Callable[[SimTask, HybridToolset, int], object]


def gold_policy_factory(mode: str) -> PolicyFactory:
    def factory(task: SimTask, toolset: HybridToolset, seed: int):
        plan = task.gold_plans.get(mode)
        if plan is None:
            raise ConfigurationError(f"task {task.task_id} has no {mode} gold plan")
        return ScriptedPolicy(script=tuple(plan), answer=task.gold_plans.get("answer", "done"))

    return factory


def random_policy_factory() -> PolicyFactory:
    def factory(task: SimTask, toolset: HybridToolset, seed: int):
        return RandomPolicy(toolset, seed)

    return factory


def run_suite_task(
    task: SimTask,
    mode: str,
    policy_factory: PolicyFactory,
    seed: int,
    t_max: int = 25,
) -> Trajectory:
    toolset = task_toolset(task, mode)
    _state, registry = task.environment.instantiate()
    episode_seed = derive_seed(seed, task.task_id)
    policy = policy_factory(task, toolset, episode_seed)
    return run_episode(
        query=task.query,
        toolset=toolset,
        policy=policy,
        registry=registry,
        budget=Budget(t_max=t_max),
        seed=episode_seed,
        task_id=task.task_id,
        outcome_eval=lambda tr: check_success(tr, task, toolset),
    )


def run_suite(
    tasks: Sequence[SimTask],
    mode: str,
    policy_factory: PolicyFactory,
    seed: int,
    t_max: int = 25,
    workers: int = 1,
) -> list[Trajectory]:
    """Run every task; output order follows task order regardless of
    completion order."""
    ordered = list(tasks)
    if workers <= 1:
        return [run_suite_task(t, mode, policy_factory, seed, t_max) for t in ordered]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(run_suite_task, t, mode, policy_factory, seed, t_max)
            for t in ordered
        ]
        return [f.result() for f in futures]
