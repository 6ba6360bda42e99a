"""Seeded random streams.

Every stochastic unit of work (a chain, a coverage pair, a grid shard) gets its
own generator derived from ``(master_seed, *key)``. Streams therefore depend on
the logical unit, never on which worker happens to run it.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_part(k) -> int:
    # string keys name a logical unit ("coverage", "data", ...)
    return zlib.crc32(k.encode()) if isinstance(k, str) else int(k)


def _as_entropy(seed) -> int:
    return int(seed) & _MASK64


def make_rng(seed, *key) -> np.random.Generator:
    """Generator for ``seed`` optionally specialised by ``key`` parts (integers or names)."""
    ss = np.random.SeedSequence(_as_entropy(seed), spawn_key=tuple(_key_part(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def split(seed, n: int) -> list[np.random.Generator]:
    return [make_rng(seed, i) for i in range(n)]


def derive_seed(seed, *key) -> int:
    """A 63-bit integer seed derived from ``seed`` and ``key``."""
    ss = np.random.SeedSequence(_as_entropy(seed), spawn_key=tuple(_key_part(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
