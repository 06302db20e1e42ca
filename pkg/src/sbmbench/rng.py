"""Deterministic random streams.

Every replica draws from its own Philox stream keyed by
``(seed, replica_id, purpose)``. Streams never depend on how replicas
are distributed over workers, which is what makes solver output
independent of the worker count.
"""
from __future__ import annotations

import hashlib
import struct

import numpy as np

MASK64 = (1 << 64) - 1

# stream purposes
INIT_POSITIONS = 0
TIME_STEP = 1
GENERATOR = 2


def stream(seed: int, replica_id: int, purpose: int) -> np.random.Generator:
    """Counter-based generator for one ``(seed, replica_id, purpose)`` triple."""
    if replica_id < 0 or not 0 <= purpose < 256:
        raise ValueError("replica_id must be >= 0 and purpose in [0, 256)")
    if replica_id >= 1 << 56:
        raise ValueError("replica_id too large")
    key = (int(seed) & MASK64) | (((int(replica_id) << 8) | purpose) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(*parts) -> int:
    """Hash an arbitrary tuple of ints/strings into a 64-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        raw = str(part).encode()
        h.update(struct.pack("<Q", len(raw)))
        h.update(raw)
    return int.from_bytes(h.digest(), "little")
