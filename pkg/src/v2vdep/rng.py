"""Counter-based random streams keyed by ``(seed, index, purpose)``.

Every trial (or baseline draw) gets its own Philox stream: the key is derived
from the seed and a purpose tag, and the trial index is placed in the upper
half of the 256-bit counter. Streams therefore never overlap and any trial
can be regenerated in isolation, whatever order or thread runs it.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

PURPOSES = {"trial": 1, "baseline": 2}

_MASK64 = (1 << 64) - 1


@lru_cache(maxsize=64)
def _key(seed: int, purpose: str) -> tuple[int, int]:
    if purpose not in PURPOSES:
        raise KeyError(f"unknown stream purpose {purpose!r}")
    state = SeedSequence([seed & _MASK64, seed >> 64, PURPOSES[purpose]]).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def stream(seed: int, index: int, purpose: str = "trial") -> Generator:
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    key = np.array(_key(seed, purpose), dtype=np.uint64)
    counter = np.array([0, 0, index & _MASK64, (index >> 64) & _MASK64], dtype=np.uint64)
    return Generator(Philox(counter=counter, key=key))
