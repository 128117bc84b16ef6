"""Tool implementation registry and argument validation.

Implementations are plain callables taking one argument document (a dict)
and returning a text payload. Validation covers the schema subset the
manifests actually use (object schemas with typed properties, required
lists, and enums); the error text is surfaced verbatim to the planner as a
tool_error observation, so messages name the offending parameter.
"""

from __future__ import annotations

from typing import Callable, Mapping

from .errors import ConfigurationError, ToolExecutionError

ToolFn = Callable[[dict], str]

_TYPE_CHECKS = {
    "string": lambda v: isinstance(v, str),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "boolean": lambda v: isinstance(v, bool),
    "object": lambda v: isinstance(v, dict),
    "array": lambda v: isinstance(v, list),
}


def validate_arguments(tool_name: str, schema: Mapping, arguments: Mapping) -> None:
    """Raise ToolExecutionError describing the first schema violation."""
    props = schema.get("properties", {})
    for req in schema.get("required", []):
        if req not in arguments:
            raise ToolExecutionError(
                f"{tool_name}: missing required argument {req!r}"
            )
    for key, value in arguments.items():
        if key not in props:
            raise ToolExecutionError(f"{tool_name}: unexpected argument {key!r}")
        pdef = props[key]
        check = _TYPE_CHECKS.get(pdef.get("type"))
        if check is not None and not check(value):
            raise ToolExecutionError(
                f"{tool_name}: argument {key!r} is not of type {pdef['type']}"
            )
        if "enum" in pdef and value not in pdef["enum"]:
            raise ToolExecutionError(
                f"{tool_name}: argument {key!r} must be one of {pdef['enum']}"
            )


class ToolRegistry:
    """Maps impl keys to callables. Frozen after construction by convention:
    the runtime never mutates a registry mid-episode."""

    def __init__(self):
        self._impls: dict[str, ToolFn] = {}

    def register(self, impl_key: str, fn: ToolFn) -> None:
        if impl_key in self._impls:
            raise ConfigurationError(f"impl key already registered: {impl_key!r}")
        self._impls[impl_key] = fn

    def __contains__(self, impl_key: str) -> bool:
        return impl_key in self._impls

    def invoke(self, impl_key: str, arguments: dict) -> str:
        try:
            fn = self._impls[impl_key]
        except KeyError:
            raise ConfigurationError(f"unresolvable impl key: {impl_key!r}") from None
        payload = fn(arguments)
        if not isinstance(payload, str):
            raise ToolExecutionError(
                f"{impl_key}: implementation returned non-text payload"
            )
        return payload
