"""Hybrid toolset construction.

A raw manifest of atomic tools is turned into the planner's action space in
four steps: score each tool's utility, select the high-utility subset,
group tools into clusters, and assemble a hybrid toolset of untouched basic
tools plus one agent tool per group. Each agent tool fans a single call out
to every member and returns an aggregated payload, so the planner sees one
name where it previously saw several.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Optional, Sequence

from .canonical import digest, dumps
from .errors import (
    ConfigurationError,
    GroupOverlapError,
    ManifestError,
    MissingScoreError,
    RetriableBackendError,
)

if TYPE_CHECKING:
    from .backends import Backend
    from .runtime import Trajectory

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
AGENT_NAME_PREFIX = "agent_"
AGENT_DESCRIPTION_HEADER = (
    "Delegates one request to every member tool and returns their combined, "
    "de-duplicated findings. Members: "
)

AGG_MODES = ("template", "llm_summarize")
ASSESSMENT_SOURCES = ("llm", "manual", "heuristic")


@dataclass(frozen=True)
class ToolSpec:
    """Declarative description of one atomic callable tool.

    `param_schema` is a JSON-schema-like document: an object schema whose
    `properties` entries each declare a `type`. `arg_candidates` is an
    optional finite lattice of argument documents used by search oracles.
    """

    name: str
    description: str
    param_schema: dict
    impl_key: str
    domain_tag: str = ""
    arg_candidates: tuple = ()

    def __post_init__(self):
        if not self.name:
            raise ManifestError("tool name must be non-empty")
        validate_param_schema(self.name, self.param_schema)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "description": self.description,
            "parameters": self.param_schema,
            "impl_key": self.impl_key,
            "domain_tag": self.domain_tag,
        }
        if self.arg_candidates:
            d["arg_candidates"] = list(self.arg_candidates)
        return d

    @staticmethod
    def from_dict(d: Mapping) -> "ToolSpec":
        return ToolSpec(
            name=d["name"],
            description=d.get("description", ""),
            param_schema=dict(d.get("parameters", {})),
            impl_key=d["impl_key"],
            domain_tag=d.get("domain_tag", ""),
            arg_candidates=tuple(d.get("arg_candidates", ())),
        )


def validate_param_schema(tool_name: str, schema: Mapping) -> None:
    """Reject schemas where any declared parameter lacks a type."""
    props = schema.get("properties", {})
    if not isinstance(props, Mapping):
        raise ManifestError(f"tool {tool_name}: parameter properties must be a mapping")
    for pname, pdef in props.items():
        if not isinstance(pdef, Mapping) or "type" not in pdef:
            raise ManifestError(
                f"tool {tool_name}: parameter {pname!r} does not declare a type"
            )
    for req in schema.get("required", []):
        if req not in props:
            raise ManifestError(
                f"tool {tool_name}: required parameter {req!r} is not declared"
            )


@dataclass(frozen=True)
class UtilityAssessment:
    """One utility score for one tool, in [0, 1]."""

    tool_name: str
    score: float
    rationale: str = ""
    source: str = "manual"

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ConfigurationError(
                f"utility score for {self.tool_name} out of range: {self.score}"
            )
        if self.source not in ASSESSMENT_SOURCES:
            raise ConfigurationError(f"unknown assessment source {self.source!r}")


@dataclass(frozen=True)
class ToolGroup:
    """A named cluster of tools destined to share one agent tool."""

    group_id: str
    member_names: tuple
    description: str = ""

    def __post_init__(self):
        if not self.member_names:
            raise ManifestError(f"group {self.group_id}: member list is empty")
        if len(set(self.member_names)) != len(self.member_names):
            raise ManifestError(f"group {self.group_id}: duplicate members")

    def to_dict(self) -> dict:
        return {
            "group_id": self.group_id,
            "members": list(self.member_names),
            "description": self.description,
        }

    @staticmethod
    def from_dict(d: Mapping) -> "ToolGroup":
        return ToolGroup(
            group_id=d["group_id"],
            member_names=tuple(d["members"]),
            description=d.get("description", ""),
        )


@dataclass(frozen=True)
class AgentToolSpec:
    """Planner-facing wrapper around a group of member tools.

    The planner's argument document is broadcast to every member;
    `param_schema` is the merge of the member schemas (union of properties,
    intersection of required keys).
    """

    name: str
    group: ToolGroup
    agg_mode: str
    description: str
    param_schema: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.agg_mode not in AGG_MODES:
            raise ConfigurationError(f"unknown aggregation mode {self.agg_mode!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "group": self.group.to_dict(),
            "agg_mode": self.agg_mode,
            "description": self.description,
            "parameters": self.param_schema,
        }

    @staticmethod
    def from_dict(d: Mapping) -> "AgentToolSpec":
        return AgentToolSpec(
            name=d["name"],
            group=ToolGroup.from_dict(d["group"]),
            agg_mode=d["agg_mode"],
            description=d["description"],
            param_schema=dict(d.get("parameters", {})),
        )


@dataclass(frozen=True)
class HybridToolset:
    """The planner's action space: basic tools plus agent tools.

    Immutable once built; episodes share one instance. `members` holds the
    full specs of every grouped tool (the planner never sees them, but
    dispatch needs their schemas and impl keys). `provenance` records the
    plan that produced it plus the source-manifest digest.
    """

    basic: tuple
    agents: tuple
    threshold: float
    members: tuple = ()
    provenance: dict = field(default_factory=dict)

    def planner_names(self) -> list[str]:
        return [t.name for t in self.basic] + [a.name for a in self.agents]

    def lookup_basic(self, name: str) -> Optional[ToolSpec]:
        for t in self.basic:
            if t.name == name:
                return t
        return None

    def lookup_agent(self, name: str) -> Optional[AgentToolSpec]:
        for a in self.agents:
            if a.name == name:
                return a
        return None

    def lookup_member(self, name: str) -> Optional[ToolSpec]:
        for t in self.members:
            if t.name == name:
                return t
        return None

    def member_names(self) -> list[str]:
        out: list[str] = []
        for a in self.agents:
            out.extend(a.group.member_names)
        return out

    def source_tools(self) -> list[ToolSpec]:
        """Every executable tool: the basic set plus grouped members."""
        return list(self.basic) + list(self.members)

    def interface(self) -> list[dict]:
        """Planner-visible view: names, descriptions, and parameter schemas."""
        rows = [
            {
                "name": t.name,
                "description": t.description,
                "parameters": t.param_schema,
                "kind": "basic",
            }
            for t in self.basic
        ]
        rows += [
            {
                "name": a.name,
                "description": a.description,
                "parameters": a.param_schema,
                "kind": "agent",
            }
            for a in self.agents
        ]
        return rows

    def to_dict(self) -> dict:
        return {
            "basic": [t.to_dict() for t in self.basic],
            "agents": [a.to_dict() for a in self.agents],
            "members": [t.to_dict() for t in self.members],
            "threshold": self.threshold,
            "provenance": self.provenance,
        }

    @staticmethod
    def from_dict(d: Mapping) -> "HybridToolset":
        return HybridToolset(
            basic=tuple(ToolSpec.from_dict(t) for t in d["basic"]),
            agents=tuple(AgentToolSpec.from_dict(a) for a in d["agents"]),
            members=tuple(ToolSpec.from_dict(t) for t in d.get("members", ())),
            threshold=d["threshold"],
            provenance=dict(d.get("provenance", {})),
        )

    def digest(self) -> str:
        return digest(self.to_dict())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(dumps(self.to_dict()) + "\n", encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "HybridToolset":
        return HybridToolset.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class AgentizationPlan:
    """Operator input for toolset assembly: threshold, manual groups, scores."""

    threshold: float = DEFAULT_THRESHOLD
    manual_groups: tuple = ()
    scores: Optional[dict] = None
    agg_mode: str = "template"

    def to_dict(self) -> dict:
        d: dict = {
            "threshold": self.threshold,
            "manual_groups": [g.to_dict() for g in self.manual_groups],
            "agg_mode": self.agg_mode,
        }
        if self.scores is not None:
            d["scores"] = self.scores
        return d

    @staticmethod
    def from_dict(d: Mapping) -> "AgentizationPlan":
        return AgentizationPlan(
            threshold=d.get("threshold", DEFAULT_THRESHOLD),
            manual_groups=tuple(ToolGroup.from_dict(g) for g in d.get("manual_groups", ())),
            scores=dict(d["scores"]) if "scores" in d and d["scores"] is not None else None,
            agg_mode=d.get("agg_mode", "template"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(dumps(self.to_dict()) + "\n", encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "AgentizationPlan":
        return AgentizationPlan.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------
# Manifest IO
# --------------------------------------------------------------------------

def validate_manifest(tools: Sequence[ToolSpec]) -> None:
    names = [t.name for t in tools]
    dupes = [n for n, c in Counter(names).items() if c > 1]
    if dupes:
        raise ManifestError(f"duplicate tool names in manifest: {sorted(dupes)}")


def save_manifest(tools: Sequence[ToolSpec], path: str | Path) -> None:
    validate_manifest(tools)
    doc = {"tools": [t.to_dict() for t in tools]}
    Path(path).write_text(dumps(doc) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> list[ToolSpec]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    tools = [ToolSpec.from_dict(t) for t in doc["tools"]]
    validate_manifest(tools)
    return tools


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------

def assess_utilities(
    manifest: Sequence[ToolSpec],
    assessor: "str | Mapping[str, float] | Backend",
    seed_trajectories: Optional[Iterable["Trajectory"]] = None,
) -> list[UtilityAssessment]:
    """Produce exactly one utility score per manifest tool.

    `assessor` is one of:
      * a mapping name -> score (manual table; a missing tool is a hard error),
      * the string "heuristic" (normalized call frequency over
        `seed_trajectories`; ties ordered by tool name),
      * a backend object with a `complete` method (remote scoring).
    """
    if not manifest:
        raise ConfigurationError("assess_utilities: manifest is empty")

    if isinstance(assessor, Mapping):
        out = []
        for tool in manifest:
            if tool.name not in assessor:
                raise MissingScoreError(f"manual score table lacks tool {tool.name!r}")
            out.append(
                UtilityAssessment(
                    tool_name=tool.name,
                    score=float(assessor[tool.name]),
                    rationale="manual table",
                    source="manual",
                )
            )
        return out

    if assessor == "heuristic":
        if seed_trajectories is None:
            raise ConfigurationError("heuristic assessment requires seed trajectories")
        counts: Counter = Counter()
        total = 0
        for traj in seed_trajectories:
            for action, _result in traj.steps:
                if action.kind in ("call_basic", "call_agent") and action.target:
                    counts[action.target] += 1
                    total += 1
        assessments = []
        for tool in manifest:
            score = counts.get(tool.name, 0) / total if total else 0.0
            assessments.append(
                UtilityAssessment(
                    tool_name=tool.name,
                    score=score,
                    rationale=f"{counts.get(tool.name, 0)} of {total} seed calls",
                    source="heuristic",
                )
            )
        assessments.sort(key=lambda a: (-a.score, a.tool_name))
        return assessments

    # Remote backend: ask for a bare float per tool.
    out = []
    for tool in manifest:
        response = assessor.complete(
            role="assessor",
            context={
                "instruction": (
                    "Rate how much this tool would benefit from being wrapped in "
                    "an aggregating agent (frequent use, task relevance, planner "
                    "error-proneness). Reply with one number in [0,1]."
                ),
                "tool": tool.to_dict(),
            },
        )
        try:
            score = min(1.0, max(0.0, float(response.text.strip())))
        except ValueError as exc:
            raise RetriableBackendError(
                f"assessor returned non-numeric score for {tool.name!r}: {response.text!r}"
            ) from exc
        out.append(
            UtilityAssessment(tool_name=tool.name, score=score, rationale=response.text, source="llm")
        )
    return out


def select_agentizable(
    assessments: Sequence[UtilityAssessment], threshold: float
) -> tuple[set[str], set[str]]:
    """Partition tool names by strict score > threshold.

    A score exactly equal to the threshold stays basic.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ConfigurationError(f"threshold out of range: {threshold}")
    selected = {a.tool_name for a in assessments if a.score > threshold}
    basic = {a.tool_name for a in assessments} - selected
    return selected, basic


def form_groups(
    selected: set[str],
    manual_groups: Sequence[ToolGroup] = (),
    grouping_backend: Optional["Backend"] = None,
) -> list[ToolGroup]:
    """Final grouping: manual groups first, then singletons for the rest.

    Manual groups win over the threshold classification: their members are
    agentized even when not selected. Selected tools not covered by any
    manual group become singleton groups unless a grouping backend proposes
    clusters for them.
    """
    seen: dict[str, str] = {}
    collisions: set[str] = set()
    for group in manual_groups:
        for member in group.member_names:
            if member in seen and seen[member] != group.group_id:
                collisions.add(member)
            seen[member] = group.group_id
    if collisions:
        raise GroupOverlapError(sorted(collisions))

    groups = list(manual_groups)
    covered = set(seen)
    leftovers = sorted(selected - covered)

    if leftovers and grouping_backend is not None:
        response = grouping_backend.complete(
            role="grouper",
            context={
                "instruction": "Cluster these tools into groups of similar functionality. "
                "Reply with a JSON list of lists of tool names.",
                "tools": leftovers,
            },
        )
        proposed = json.loads(response.text)
        proposed_groups = []
        assigned: set[str] = set()
        for members in proposed:
            members = [m for m in members if m in leftovers and m not in assigned]
            if not members:
                continue
            assigned.update(members)
            proposed_groups.append(
                ToolGroup(group_id="_".join(members), member_names=tuple(members))
            )
        groups.extend(proposed_groups)
        leftovers = [m for m in leftovers if m not in assigned]

    for name in leftovers:
        groups.append(ToolGroup(group_id=name, member_names=(name,)))
    return groups


def assemble_hybrid(
    manifest: Sequence[ToolSpec],
    groups: Sequence[ToolGroup],
    threshold: float = DEFAULT_THRESHOLD,
    agg_mode: str = "template",
    provenance: Optional[dict] = None,
) -> HybridToolset:
    """Build the planner's action space from a manifest and disjoint groups.

    Every group becomes one agent tool named `agent_<group_id>`; grouped
    tools disappear from the basic set. With zero groups the result is the
    flat manifest under a different wrapper.
    """
    validate_manifest(manifest)
    by_name = {t.name: t for t in manifest}

    seen: dict[str, str] = {}
    collisions = set()
    for group in groups:
        for member in group.member_names:
            if member not in by_name:
                raise ManifestError(
                    f"group {group.group_id}: member {member!r} is not in the manifest"
                )
            if member in seen:
                collisions.add(member)
            seen[member] = group.group_id
    if collisions:
        raise GroupOverlapError(sorted(collisions))

    grouped = set(seen)
    basic = tuple(t for t in manifest if t.name not in grouped)
    basic_names = {t.name for t in basic}

    agents = []
    for group in groups:
        agent_name = AGENT_NAME_PREFIX + group.group_id
        if agent_name in basic_names or agent_name in by_name:
            raise ManifestError(
                f"agent name {agent_name!r} collides with an existing tool"
            )
        members = [by_name[m] for m in group.member_names]
        description = AGENT_DESCRIPTION_HEADER + "; ".join(
            f"{m.name}: {m.description}" for m in members
        )
        agents.append(
            AgentToolSpec(
                name=agent_name,
                group=group,
                agg_mode=agg_mode,
                description=description,
                param_schema=merge_schemas([m.param_schema for m in members]),
            )
        )

    agent_names = [a.name for a in agents]
    if len(set(agent_names)) != len(agent_names):
        dupes = [n for n, c in Counter(agent_names).items() if c > 1]
        raise ManifestError(f"duplicate agent names: {sorted(dupes)}")

    member_specs = tuple(
        by_name[m] for group in groups for m in group.member_names
    )
    return HybridToolset(
        basic=basic,
        agents=tuple(agents),
        members=member_specs,
        threshold=threshold,
        provenance=provenance
        or {"manifest_digest": digest([t.to_dict() for t in manifest])},
    )


def merge_schemas(schemas: Sequence[Mapping]) -> dict:
    """Broadcast schema for an agent tool: union of properties, shared required."""
    props: dict = {}
    required_sets = []
    for schema in schemas:
        for pname, pdef in schema.get("properties", {}).items():
            props.setdefault(pname, dict(pdef))
        required_sets.append(set(schema.get("required", [])))
    required = set.intersection(*required_sets) if required_sets else set()
    merged: dict = {"type": "object", "properties": props}
    if required:
        merged["required"] = sorted(required)
    return merged


def build_toolset(
    manifest: Sequence[ToolSpec],
    plan: AgentizationPlan,
    assessor: "str | Mapping[str, float] | Backend | None" = None,
    seed_trajectories: Optional[Iterable["Trajectory"]] = None,
) -> HybridToolset:
    """End-to-end assembly: score, select, group, assemble.

    Score resolution order: the plan's embedded table, then the given
    assessor, else an empty selection (manual groups alone drive the build).
    """
    if plan.scores is not None:
        assessments = assess_utilities(manifest, plan.scores)
    elif assessor is not None:
        assessments = assess_utilities(manifest, assessor, seed_trajectories)
    else:
        assessments = [
            UtilityAssessment(tool_name=t.name, score=0.0, rationale="unscored", source="manual")
            for t in manifest
        ]
    selected, _basic = select_agentizable(assessments, plan.threshold)
    groups = form_groups(selected, plan.manual_groups)
    return assemble_hybrid(
        manifest,
        groups,
        threshold=plan.threshold,
        agg_mode=plan.agg_mode,
        provenance={
            "manifest_digest": digest([t.to_dict() for t in manifest]),
            "plan": plan.to_dict(),
        },
    )
