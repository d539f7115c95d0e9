"""Seed fan-out.

A master seed is split into named, indexed streams with ``SeedSequence``
spawn keys, so stream ``("agent", 3)`` is the same whether a run has 4 or
40 agents.
"""

from __future__ import annotations

import hashlib

import numpy as np

_KINDS: dict[str, int] = {}


def _kind_id(kind: str) -> int:
    if kind not in _KINDS:
        digest = hashlib.sha256(kind.encode("utf-8")).digest()
        _KINDS[kind] = int.from_bytes(digest[:4], "little")
    return _KINDS[kind]


def stream(master_seed: int, kind: str, index: int = 0) -> np.random.Generator:
    """Independent generator for ``(kind, index)`` under ``master_seed``."""
    ss = np.random.SeedSequence(
        entropy=int(master_seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=(_kind_id(kind), int(index)),
    )
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(master_seed: int, kind: str, index: int = 0) -> int:
    """A 63-bit integer seed derived from the same scheme (for env resets)."""
    return int(stream(master_seed, kind, index).integers(0, 2**63 - 1))
