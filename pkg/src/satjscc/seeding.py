"""Deterministic, non-overlapping random streams.

Every stream is addressed by a root seed plus a tuple of keys (strings or
numbers). Keys map to a ``SeedSequence`` spawn key, so distinct addresses
give independent streams by construction and the same address always
reproduces the same stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (bool, np.bool_)):
        key = int(key)
    if isinstance(key, (int, np.integer)) and key >= 0:
        return int(key)
    return zlib.crc32(repr(key).encode("utf-8")) | (1 << 32)


def make_rng(seed: int, *keys) -> np.random.Generator:
    spawn_key = tuple(_key_to_int(k) for k in keys)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=spawn_key)))
