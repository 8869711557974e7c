"""Deterministic counter-based noise streams.

Every random draw in an assimilation run comes from a Philox generator
keyed by (seed, purpose, step), so runs with the same seed are
bit-identical regardless of how ensemble members are scheduled: member
i's noise is always row i of that stream's first draw.
"""

from __future__ import annotations

import numpy as np

PURPOSES = {
    "init": 1,
    "process": 2,
    "measurement": 3,
    "anchor": 4,
    "redraw": 5,
    "truth": 6,
}


MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLD = 0x9E3779B97F4A7C15
_MIX = 0xBF58476D1CE4E5B9


def stream(seed: int, purpose: str, step: int = 0) -> np.random.Generator:
    """Independent generator addressed by (seed, purpose, step).

    The address maps injectively into the 128-bit Philox key (the step
    multiplier is odd, hence invertible mod 2^64), so distinct addresses
    yield independent streams.
    """
    p = PURPOSES[purpose]
    key = np.array([(seed ^ (p * _GOLD)) & MASK64, (step * _MIX + p) & MASK64],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normal(seed: int, purpose: str, step: int, shape) -> np.ndarray:
    """Standard normal block from the addressed stream."""
    return stream(seed, purpose, step).standard_normal(shape)
