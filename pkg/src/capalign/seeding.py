"""Deterministic derived random streams.

Every stochastic choice in training gets its own named substream so that
disabling one loss term (or one sampler) never shifts the draws seen by
another.  Tags hash via crc32, which is stable across platforms and runs.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *tags) -> np.random.Generator:
    key = tuple(zlib.crc32(str(t).encode("utf-8")) for t in tags)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))
