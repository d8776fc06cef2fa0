"""Counter-based random substreams.

Every random draw in the package comes from a Philox generator whose key is
derived from a master seed plus a tuple of integer labels (level, replicate,
attempt, ...). Two streams with different labels are statistically
independent, and a stream never depends on the order in which other streams
were consumed, so work can be scheduled on any number of threads.
"""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np

SeedLike = Union[int, Sequence[int]]

# stream levels
OUTER = 1
INNER = 2
SUBSAMPLE = 3
SIMULATION = 4
PIVOT = 5
BENCH = 6
SELECT = 7


def as_key(seed: SeedLike) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def substream(seed: SeedLike, *labels: int) -> np.random.Generator:
    """Return the generator addressed by ``seed`` extended with ``labels``."""
    key = as_key(seed) + tuple(int(x) for x in labels)
    if any(k < 0 for k in key):
        raise ValueError(f"stream labels must be non-negative, got {key}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def child_key(seed: SeedLike, *labels: int) -> tuple[int, ...]:
    """Key for a nested computation that will derive its own substreams."""
    return as_key(seed) + tuple(int(x) for x in labels)
