"""Rejection-sampling task synthesis over composed environments.

Pipeline: enumerate environment combinations, ask a generator backend for
candidate queries (each with a demonstration script), filter by judge
plausibility, run k noisy policy samples per candidate, grade them with
the judge, and keep candidates whose pass@k lands in the difficulty band.
Ground truth is extracted from the first graded-successful sample's
terminal state. Everything is deterministic given the seed, and the
bundled fixture backends make the whole pipeline runnable offline.
"""

from __future__ import annotations

import itertools
import json
import logging
from typing import Optional, Sequence

from ..backends import Backend, BackendResponse, ScriptedBackend, ScriptedRule
from ..canonical import derive_seed
from ..errors import ToolhiveError
from ..policies import NoisyScriptPolicy
from ..runtime import Budget, run_episode
from ..toolset import HybridToolset
from .base import (
    GroundTruth,
    ScenarioConfig,
    SimTask,
    compose,
    flat_toolset,
    normalize_answer,
    state_diff_predicate,
)
from .oracle import brute_force_solve
from .scenarios import build_scenario
from .suite import _hybridize, bundled_groups

logger = logging.getLogger(__name__)

DEFAULT_BAND = (0.0, 1.0)


def _combos(parts_universe: Sequence[ScenarioConfig], max_parts: int = 2) -> list[tuple]:
    out: list[tuple] = [(p,) for p in parts_universe]
    for size in range(2, max_parts + 1):
        out.extend(itertools.combinations(parts_universe, size))
    return out


def _combo_key(combo: Sequence[ScenarioConfig]) -> str:
    return "+".join(p.part_key for p in combo)


def synthesize_tasks(
    parts_universe: Sequence[ScenarioConfig],
    generator: Backend,
    judge: Backend,
    k: int = 4,
    n_candidates: int = 10,
    seed: int = 0,
    band: tuple = DEFAULT_BAND,
    inclusive: bool = False,
    noise: float = 0.35,
    max_parts: int = 2,
) -> list[SimTask]:
    """Synthesize benchmark tasks; order is deterministic given the seed.

    Generator or judge failures skip the affected candidate with a logged
    reason, never silently.
    """
    if k < 1:
        raise ToolhiveError("synthesis requires k >= 1")

    candidates: list[tuple[str, tuple, dict]] = []
    for combo in _combos(parts_universe, max_parts):
        if len(candidates) >= n_candidates:
            break
        key = _combo_key(combo)
        try:
            response = generator.complete(
                role="generator",
                context={
                    "combo": key,
                    "instruction": (
                        "Propose natural tasks for this environment combination as a "
                        "JSON list of {query, script, answer} objects."
                    ),
                },
            )
            rows = json.loads(response.text)
        except Exception as exc:
            logger.warning("generator failed for combo %s: %s", key, exc)
            continue
        for row in rows:
            if len(candidates) >= n_candidates:
                break
            candidates.append((key, combo, row))

    tasks: list[SimTask] = []
    counters: dict[str, int] = {}
    for key, combo, row in candidates:
        query = row.get("query", "")
        try:
            verdict = judge.complete(
                role="judge",
                context={"phase": "plausibility", "combo": key, "query": query},
            )
        except Exception as exc:
            logger.warning("judge failed for %r: %s", query, exc)
            continue
        if not verdict.text.strip().lower().startswith("yes"):
            logger.warning("candidate rejected as implausible: %r", query)
            continue

        script = [(target, dict(args)) for target, args in row.get("script", ())]
        answer = row.get("answer", "")
        environment = compose(list(combo))
        toolset = flat_toolset(environment)
        script_steps = [
            {"kind": "call_basic", "target": t, "arguments": a, "reasoning": f"Calling {t}."}
            for t, a in script
        ]

        samples = []
        for j in range(k):
            state, registry = environment.instantiate()
            policy = NoisyScriptPolicy(
                script=script_steps,
                answer=answer,
                toolset=toolset,
                seed=derive_seed(seed, key, query, str(j)),
                noise=noise,
            )
            trajectory = run_episode(
                query=query,
                toolset=toolset,
                policy=policy,
                registry=registry,
                budget=Budget(t_max=max(6, len(script) + 3)),
                seed=derive_seed(seed, key, query, str(j)),
                task_id=f"sample_{j}",
            )
            try:
                graded = judge.complete(
                    role="judge",
                    context={
                        "phase": "grade",
                        "query": query,
                        "final_answer": trajectory.final_answer,
                    },
                )
                ok = graded.text.strip().lower().startswith("yes")
            except Exception as exc:
                logger.warning("judge failed grading %r sample %d: %s", query, j, exc)
                ok = False
            samples.append((ok, trajectory, state))

        pass_rate = sum(1 for ok, _, _ in samples if ok) / k
        lo, hi = band
        in_band = lo <= pass_rate <= hi if inclusive else lo < pass_rate < hi
        if not in_band:
            logger.warning(
                "candidate outside difficulty band (pass@%d=%.2f): %r", k, pass_rate, query
            )
            continue

        first_ok = next((s for s in samples if s[0]), None)
        if first_ok is None:
            logger.warning("no successful sample to extract ground truth: %r", query)
            continue
        _, ok_trajectory, terminal = first_ok
        predicate = state_diff_predicate(environment.initial_state(), terminal)
        if predicate is not None:
            ground_truth = GroundTruth(kind="final_state_predicate", predicate=predicate)
        else:
            ground_truth = GroundTruth(
                kind="answer_match", expected_answer=ok_trajectory.final_answer
            )

        index = counters.get(key, 0)
        counters[key] = index + 1
        task = SimTask(
            task_id=f"synth_{key.replace('+', '_')}_{index:02d}",
            query=query,
            environment=environment,
            ground_truth=ground_truth,
            difficulty=_measure_difficulty(ground_truth, environment, toolset, samples, script),
            category="synth:" + key,
            gold_plans={
                "flat": script_steps,
                "hybrid": _hybridize(script, bundled_groups()),
                "answer": answer,
            },
        )
        tasks.append(task)
    return tasks


def _measure_difficulty(
    ground_truth: GroundTruth,
    environment,
    toolset: HybridToolset,
    samples: list,
    script: list,
) -> int:
    """Minimal plan length when the oracle can afford it, else the shortest
    graded-successful sample."""
    if ground_truth.kind == "final_state_predicate":
        probe = SimTask(
            task_id="_difficulty_probe",
            query="",
            environment=environment,
            ground_truth=ground_truth,
        )
        result = brute_force_solve(
            probe, toolset, max_depth=min(8, len(script) + 2), node_budget=200_000
        )
        if result.status == "solved":
            return result.length
    lengths = [len(t.call_steps()) for ok, t, _ in samples if ok]
    return min(lengths) if lengths else len(script)


# --------------------------------------------------------------------------
# Fixture backends
# --------------------------------------------------------------------------

CANNED_CANDIDATES: list[dict] = [
    {
        "combo": "file",
        "query": "Create a.txt containing 'alpha' and archive it.",
        "script": [
            ["file.create", {"name": "a.txt"}],
            ["file.write", {"name": "a.txt", "text": "alpha"}],
            ["file.archive", {"name": "a.txt"}],
        ],
        "answer": "a.txt archived",
        "plausible": True,
    },
    {
        "combo": "file",
        "query": "Delete the file c.txt twice in a row.",
        "script": [["file.delete", {"name": "c.txt"}], ["file.delete", {"name": "c.txt"}]],
        "answer": "deleted twice",
        "plausible": False,
    },
    {
        "combo": "vehicle",
        "query": "Secure the car completely: doors, windows, alarm.",
        "script": [
            ["vehicle.lock_doors", {}],
            ["vehicle.close_windows", {}],
            ["vehicle.arm_alarm", {}],
        ],
        "answer": "car secured",
        "plausible": True,
    },
    {
        "combo": "vehicle",
        "query": "Start the engine and drive 10 km.",
        "script": [["vehicle.start_engine", {}], ["vehicle.drive", {"distance": 10}]],
        "answer": "drove 10 km",
        "plausible": True,
    },
    {
        "combo": "trade",
        "query": "Buy one share of AAPL and set a price alert for it.",
        "script": [
            ["trade.buy", {"symbol": "AAPL", "qty": 1}],
            ["trade.set_alert", {"symbol": "AAPL"}],
        ],
        "answer": "AAPL position opened",
        "plausible": True,
    },
    {
        "combo": "travel",
        "query": "Book the PAR flight and file its visa application.",
        "script": [
            ["travel.book_flight", {"dest": "PAR"}],
            ["travel.apply_visa", {"dest": "PAR"}],
        ],
        "answer": "PAR booked",
        "plausible": True,
    },
    {
        "combo": "travel",
        "query": "Cancel the NYC flight that was never booked.",
        "script": [["travel.cancel_flight", {"dest": "NYC"}]],
        "answer": "cancelled",
        "plausible": False,
    },
    {
        "combo": "file+vehicle",
        "query": "Create b.txt containing 'beta', then lock the doors and close the windows.",
        "script": [
            ["file.create", {"name": "b.txt"}],
            ["file.write", {"name": "b.txt", "text": "beta"}],
            ["vehicle.lock_doors", {}],
            ["vehicle.close_windows", {}],
        ],
        "answer": "ready",
        "plausible": True,
    },
    {
        "combo": "file+trade",
        "query": "Create a.txt with 'alpha', archive it, and buy one TSLA.",
        "script": [
            ["file.create", {"name": "a.txt"}],
            ["file.write", {"name": "a.txt", "text": "alpha"}],
            ["file.archive", {"name": "a.txt"}],
            ["trade.buy", {"symbol": "TSLA", "qty": 1}],
        ],
        "answer": "plan recorded",
        "plausible": True,
    },
    {
        "combo": "trade+travel",
        "query": "Watch TSLA and book the NYC flight.",
        "script": [
            ["trade.watch", {"symbol": "TSLA"}],
            ["travel.book_flight", {"dest": "NYC"}],
        ],
        "answer": "watching and booked",
        "plausible": True,
    },
    {
        "combo": "vehicle+travel",
        "query": "Secure the car, then file the PAR trip paperwork.",
        "script": [
            ["vehicle.lock_doors", {}],
            ["vehicle.close_windows", {}],
            ["vehicle.arm_alarm", {}],
            ["travel.apply_visa", {"dest": "PAR"}],
            ["travel.buy_insurance", {"dest": "PAR"}],
        ],
        "answer": "trip prepared",
        "plausible": True,
    },
]


def default_parts_universe() -> list[ScenarioConfig]:
    return [build_scenario(s) for s in ("file", "vehicle", "trade", "travel")]


def fixture_generator() -> ScriptedBackend:
    """Canned generator: returns this combo's candidate rows as JSON."""

    def respond(context: dict) -> BackendResponse:
        rows = [
            {k: v for k, v in row.items() if k != "plausible"}
            for row in CANNED_CANDIDATES
            if row["combo"] == context.get("combo")
        ]
        return BackendResponse(text=json.dumps(rows))

    return ScriptedBackend(rules=[ScriptedRule(contains="", role="generator", response=respond)])


def fixture_judge() -> ScriptedBackend:
    """Canned judge: plausibility from the candidate table, grading by
    normalized comparison against the canned answer."""
    by_query = {row["query"]: row for row in CANNED_CANDIDATES}

    def respond(context: dict) -> BackendResponse:
        row = by_query.get(context.get("query", ""))
        if context.get("phase") == "plausibility":
            if row is None:
                return BackendResponse(text="no: unknown query")
            return BackendResponse(text="yes" if row["plausible"] else "no: unreasonable")
        if row is None:
            return BackendResponse(text="no")
        got = normalize_answer(context.get("final_answer", ""))
        want = normalize_answer(row["answer"])
        return BackendResponse(text="yes" if got == want else "no")

    return ScriptedBackend(rules=[ScriptedRule(contains="", role="judge", response=respond)])
