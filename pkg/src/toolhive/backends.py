"""Backend abstraction for every remote role.

One chat-completions-compatible protocol serves the planner policy, the
utility assessor, the aggregator, the refinement teacher, and the synthesis
generator/judge; role differences live in the prompt documents callers
build, not in transport. Offline work uses the scripted and record/replay
implementations, which are the only ones the test suite touches.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .canonical import digest
from .errors import (
    BackendProtocolError,
    ConfigurationError,
    ReplayMissError,
    RetriableBackendError,
)

logger = logging.getLogger(__name__)

ENV_ENDPOINT = "TOOLHIVE_ENDPOINT"
ENV_MODEL = "TOOLHIVE_MODEL"
ENV_KEY_VAR = "TOOLHIVE_KEY_VAR"
ENV_OFFLINE = "TOOLHIVE_OFFLINE"
DEFAULT_KEY_VAR = "TOOLHIVE_API_KEY"


def offline_mode() -> bool:
    return os.environ.get(ENV_OFFLINE, "").lower() in ("1", "true", "yes")


@dataclass(frozen=True)
class BackendConfig:
    """Connection settings for a live endpoint.

    The secret itself is read from the environment variable named by
    `key_var` at request time and never stored on the object, so config
    dumps and provenance records cannot leak it.
    """

    base_url: str
    model: str
    key_var: str = DEFAULT_KEY_VAR
    timeout: float = 30.0
    max_retries: int = 2
    temperature: float = 0.0
    sampling_seed: Optional[int] = None
    max_in_flight: int = 4

    def to_dict(self) -> dict:
        return {
            "base_url": self.base_url,
            "model": self.model,
            "key_var": self.key_var,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "temperature": self.temperature,
            "sampling_seed": self.sampling_seed,
            "max_in_flight": self.max_in_flight,
        }

    @staticmethod
    def from_env() -> "BackendConfig":
        base_url = os.environ.get(ENV_ENDPOINT, "")
        model = os.environ.get(ENV_MODEL, "")
        if not base_url or not model:
            raise ConfigurationError(
                f"live backend requires {ENV_ENDPOINT} and {ENV_MODEL} to be set"
            )
        return BackendConfig(
            base_url=base_url,
            model=model,
            key_var=os.environ.get(ENV_KEY_VAR, DEFAULT_KEY_VAR),
        )


@dataclass(frozen=True)
class BackendResponse:
    """Structured completion: free text plus optional tool-call intents."""

    text: str
    tool_calls: tuple = ()
    usage_tokens: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "tool_calls": list(self.tool_calls),
            "usage_tokens": self.usage_tokens,
        }

    @staticmethod
    def from_dict(d: dict) -> "BackendResponse":
        return BackendResponse(
            text=d.get("text", ""),
            tool_calls=tuple(d.get("tool_calls", ())),
            usage_tokens=d.get("usage_tokens"),
        )


def request_digest(role: str, context: dict) -> str:
    """Content address of one exchange; replay matches on this."""
    return digest({"role": role, "context": context})


class Backend:
    """Base interface: one `complete` call per exchange."""

    def complete(self, role: str, context: dict) -> BackendResponse:
        raise NotImplementedError


@dataclass
class ScriptedRule:
    """Deterministic rule: fires when `contains` occurs in the serialized
    context (and the role matches, if given)."""

    contains: str
    response: "BackendResponse | str | Callable[[dict], BackendResponse]"
    role: Optional[str] = None


class ScriptedBackend(Backend):
    """Rule-table backend for offline tests; first matching rule wins."""

    def __init__(self, rules: list[ScriptedRule], default: Optional[BackendResponse] = None):
        self.rules = list(rules)
        self.default = default
        self.calls: list[tuple[str, dict]] = []

    def complete(self, role: str, context: dict) -> BackendResponse:
        self.calls.append((role, context))
        haystack = json.dumps(context, sort_keys=True, ensure_ascii=False)
        for rule in self.rules:
            if rule.role is not None and rule.role != role:
                continue
            if rule.contains in haystack:
                if callable(rule.response):
                    return rule.response(context)
                if isinstance(rule.response, str):
                    return BackendResponse(text=rule.response)
                return rule.response
        if self.default is not None:
            return self.default
        raise BackendProtocolError(f"no scripted rule matches role={role!r}")


class Transcript:
    """Content-addressed store of recorded request/response pairs."""

    def __init__(self, entries: Optional[dict] = None):
        self.entries: dict[str, dict] = dict(entries or {})

    def record(self, key: str, response: BackendResponse) -> None:
        self.entries[key] = response.to_dict()

    def save(self, path: str | Path) -> None:
        from .canonical import dumps

        Path(path).write_text(dumps(self.entries) + "\n", encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "Transcript":
        return Transcript(json.loads(Path(path).read_text(encoding="utf-8")))


class ReplayBackend(Backend):
    """Replays a transcript; an unknown request is a hard error, never a
    live fallback."""

    def __init__(self, transcript: Transcript):
        self.transcript = transcript

    def complete(self, role: str, context: dict) -> BackendResponse:
        key = request_digest(role, context)
        if key not in self.transcript.entries:
            raise ReplayMissError(f"no recorded response for digest {key}")
        return BackendResponse.from_dict(self.transcript.entries[key])


class RecordingBackend(Backend):
    """Pass-through wrapper that captures exchanges into a transcript."""

    def __init__(self, inner: Backend, transcript: Transcript):
        self.inner = inner
        self.transcript = transcript

    def complete(self, role: str, context: dict) -> BackendResponse:
        response = self.inner.complete(role, context)
        self.transcript.record(request_digest(role, context), response)
        return response


class LiveBackend(Backend):
    """Chat-completions-compatible HTTP client with bounded retries.

    At most `max_retries + 1` transport attempts per call, exponential
    backoff between them. A bounded semaphore enforces the declared
    in-flight limit so the runtime can share one backend across workers.
    """

    RETRIABLE_STATUS = (408, 409, 429, 500, 502, 503, 504)

    def __init__(self, config: BackendConfig):
        if offline_mode():
            raise ConfigurationError(
                f"offline mode is set ({ENV_OFFLINE}); refusing to build a live backend"
            )
        self.config = config
        self._gate = threading.BoundedSemaphore(config.max_in_flight)

    def _messages(self, context: dict) -> list[dict]:
        if "messages" in context:
            return list(context["messages"])
        messages = []
        if context.get("system"):
            messages.append({"role": "system", "content": context["system"]})
        user = context.get("user")
        if user is None:
            user = json.dumps(
                {k: v for k, v in context.items() if k not in ("system", "tools")},
                sort_keys=True,
                ensure_ascii=False,
            )
        messages.append({"role": "user", "content": user})
        return messages

    def complete(self, role: str, context: dict) -> BackendResponse:
        import requests

        payload: dict = {
            "model": self.config.model,
            "messages": self._messages(context),
            "temperature": self.config.temperature,
        }
        if context.get("tools"):
            payload["tools"] = [
                {"type": "function", "function": t} for t in context["tools"]
            ]
        if self.config.sampling_seed is not None:
            payload["seed"] = self.config.sampling_seed

        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.key_var, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"

        url = self.config.base_url.rstrip("/") + "/chat/completions"
        last_error: Optional[Exception] = None
        with self._gate:
            for attempt in range(self.config.max_retries + 1):
                if attempt:
                    time.sleep(min(8.0, 0.25 * (2 ** (attempt - 1))))
                try:
                    resp = requests.post(
                        url, json=payload, headers=headers, timeout=self.config.timeout
                    )
                except requests.RequestException as exc:
                    last_error = exc
                    logger.warning("backend transport error (attempt %d): %s", attempt + 1, exc)
                    continue
                if resp.status_code in self.RETRIABLE_STATUS:
                    last_error = RetriableBackendError(
                        f"status {resp.status_code} from {url}"
                    )
                    continue
                if resp.status_code != 200:
                    raise BackendProtocolError(
                        f"status {resp.status_code} from {url}: {resp.text[:500]}"
                    )
                return self._parse(resp.json())
        raise RetriableBackendError(
            f"backend failed after {self.config.max_retries + 1} attempts: {last_error}"
        )

    @staticmethod
    def _parse(doc: dict) -> BackendResponse:
        try:
            message = doc["choices"][0]["message"]
        except (KeyError, IndexError) as exc:
            raise BackendProtocolError(f"malformed completion response: {doc}") from exc
        tool_calls = []
        for call in message.get("tool_calls") or ():
            fn = call.get("function", {})
            arguments = fn.get("arguments", "{}")
            if isinstance(arguments, str):
                try:
                    arguments = json.loads(arguments)
                except json.JSONDecodeError:
                    arguments = {"_raw": arguments}
            tool_calls.append({"name": fn.get("name", ""), "arguments": arguments})
        usage = doc.get("usage", {}).get("total_tokens")
        return BackendResponse(
            text=message.get("content") or "",
            tool_calls=tuple(tool_calls),
            usage_tokens=usage,
        )


def complete(role: str, context: dict, config: "BackendConfig | Backend") -> BackendResponse:
    """One exchange against either a config (live) or a ready backend."""
    backend = LiveBackend(config) if isinstance(config, BackendConfig) else config
    return backend.complete(role, context)
