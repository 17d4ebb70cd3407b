"""Deterministic random substreams.

Every random object in the package is a pure function of a master seed and
an integer index.  Sample ``i`` of anything seeded with ``seed`` draws from
``SeedSequence(seed, spawn_key=(tag, i))`` so results never depend on how
samples are split across workers.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

# stream tags keep unrelated consumers of the same master seed apart
BROWNIAN_DRIVER = 1
FBM_DRIVER = 2
FORWARD_PATHS = 3


def substream(seed: int, tag: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(tag, int(index)))))


def parallel_map(fn: Callable[[int], T], items: Sequence[int], threads: int = 1) -> list[T]:
    """Ordered map, optionally over a thread pool; output order never depends on ``threads``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def chunks(n: int, size: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]
