"""Canonical serialization, digests, and token accounting.

Every artifact this package writes (toolsets, trajectories, datasets,
reports) goes through `dumps` so that identical inputs always produce
byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any


def dumps(obj: Any) -> str:
    """Canonical JSON: sorted keys, no whitespace, UTF-8 verbatim."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def digest(obj: Any) -> str:
    """SHA-256 hex digest of the canonical serialization."""
    return hashlib.sha256(dumps(obj).encode("utf-8")).hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def derive_seed(global_seed: int, *parts: str) -> int:
    """Stable per-item seed: hash of the global seed plus identifying strings.

    Python's builtin hash() is salted per process, so a cryptographic hash
    keeps seeds reproducible across runs and machines.
    """
    h = hashlib.sha256()
    h.update(str(global_seed).encode("utf-8"))
    for part in parts:
        h.update(b"\x00")
        h.update(part.encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big")


def approx_tokens(text: str) -> int:
    """Default token approximation: one token per four characters, rounded up.

    Backends that report exact usage override this in metrics.
    """
    return (len(text) + 3) // 4
