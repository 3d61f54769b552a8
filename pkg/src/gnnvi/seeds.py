"""Counter-based seed derivation.

Every random stream is keyed by ``(global seed, purpose, tag, index)``, fed
through ``numpy.random.SeedSequence``. Purposes get fixed integer codes, so
training, validation and test streams can never share a key.
"""

from __future__ import annotations

import zlib

import numpy as np

PURPOSES = {"init": 1, "train": 2, "val": 3, "test": 4, "shuffle": 5, "generate": 6, "probe": 7}


def _key(seed: int, purpose: str, index: int, tag: str) -> list[int]:
    if purpose not in PURPOSES:
        raise ValueError(f"unknown seed purpose {purpose!r}")
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    return [int(seed), PURPOSES[purpose], zlib.crc32(tag.encode("utf-8")), int(index)]


def derive_seed(seed: int, purpose: str, index: int = 0, tag: str = "") -> int:
    """A 64-bit integer seed for one stream."""
    state = np.random.SeedSequence(_key(seed, purpose, index, tag)).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def rng_for(seed: int, purpose: str, index: int = 0, tag: str = "") -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, purpose, index, tag))
