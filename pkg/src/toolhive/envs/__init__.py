"""Simulated environments, oracles, task synthesis, and the bundled suite."""

from .base import (
    ComposedEnvironment,
    GroundTruth,
    ScenarioConfig,
    SimTask,
    answers_match,
    check_success,
    compose,
    evaluate_predicate,
    flat_toolset,
    load_task_suite,
    normalize_answer,
    replay_trajectory,
    save_task_suite,
    state_diff_predicate,
)
from .oracle import OracleResult, brute_force_solve, solve_both
from .scenarios import OP_TABLES, build_scenario
from .suite import (
    build_bundled_suite,
    bundled_groups,
    bundled_plan,
    full_environment,
    gold_policy_factory,
    groups_for_manifest,
    random_policy_factory,
    run_suite,
    run_suite_task,
    task_toolset,
)
from .synthesis import (
    default_parts_universe,
    fixture_generator,
    fixture_judge,
    synthesize_tasks,
)
from .verify import (
    evidence_script,
    verification_manifest,
    verification_registry,
    verification_toolset,
)

__all__ = [
    "ComposedEnvironment",
    "GroundTruth",
    "OP_TABLES",
    "OracleResult",
    "ScenarioConfig",
    "SimTask",
    "answers_match",
    "brute_force_solve",
    "build_bundled_suite",
    "build_scenario",
    "bundled_groups",
    "bundled_plan",
    "check_success",
    "compose",
    "default_parts_universe",
    "evaluate_predicate",
    "evidence_script",
    "fixture_generator",
    "fixture_judge",
    "flat_toolset",
    "full_environment",
    "gold_policy_factory",
    "groups_for_manifest",
    "load_task_suite",
    "normalize_answer",
    "random_policy_factory",
    "replay_trajectory",
    "run_suite",
    "run_suite_task",
    "save_task_suite",
    "solve_both",
    "state_diff_predicate",
    "synthesize_tasks",
    "task_toolset",
    "verification_manifest",
    "verification_registry",
    "verification_toolset",
]
