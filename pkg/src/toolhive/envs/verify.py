"""Stateless verification tools for labeled-task reconstruction.

Claim-verification episodes only gather evidence; nothing mutates, so one
registry is safe to share across tasks, attempts, and workers.
"""

from __future__ import annotations

from ..registry import ToolRegistry
from ..toolset import HybridToolset, ToolSpec, assemble_hybrid

_KEY_SCHEMA = {
    "type": "object",
    "properties": {"key": {"type": "string"}},
    "required": ["key"],
}


def verification_manifest() -> list[ToolSpec]:
    return [
        ToolSpec(
            name="verify.lookup_record",
            description="Fetch the ledger entry for a record key.",
            param_schema=_KEY_SCHEMA,
            impl_key="verify.lookup_record",
            domain_tag="verify",
            arg_candidates=({"key": "case"},),
        ),
        ToolSpec(
            name="verify.crosscheck",
            description="Fetch the secondary source for a record key.",
            param_schema=_KEY_SCHEMA,
            impl_key="verify.crosscheck",
            domain_tag="verify",
            arg_candidates=({"key": "case"},),
        ),
    ]


def verification_registry() -> ToolRegistry:
    registry = ToolRegistry()
    registry.register(
        "verify.lookup_record", lambda args: f"ledger entry for {args['key']}: consistent"
    )
    registry.register(
        "verify.crosscheck", lambda args: f"secondary source for {args['key']}: consistent"
    )
    return registry


def verification_toolset() -> HybridToolset:
    return assemble_hybrid(verification_manifest(), groups=[])


def evidence_script(task_id: str) -> list[dict]:
    """The scripted two-call evidence pass used by offline verifier policies."""
    return [
        {"target": "verify.lookup_record", "arguments": {"key": task_id}},
        {"target": "verify.crosscheck", "arguments": {"key": task_id}},
    ]
