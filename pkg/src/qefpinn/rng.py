"""Named, counter-addressed random streams.

Every draw in the package comes from ``stream(seed, purpose, *counters)``, so
a result depends only on the (seed, purpose, counters) triple and never on
how many other draws happened first or on worker scheduling.
"""

from __future__ import annotations

import zlib

import numpy as np


def _purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, *counters: int) -> np.random.Generator:
    if seed < 0 or any(c < 0 for c in counters):
        raise ValueError("seed and counters must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(_purpose_key(purpose), *map(int, counters)))
    return np.random.Generator(np.random.Philox(ss))
