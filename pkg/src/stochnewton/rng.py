"""Seeded random streams.

Every random consumer receives its own :class:`numpy.random.Generator`
derived from a master seed and an integer path, so a trial's stream depends
only on ``(seed, index)`` and never on the order trials are scheduled in.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for ``seed`` at the spawn-key ``path``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path)))


def worker_count() -> int:
    """Number of worker threads, capped by the ``SN_THREADS`` environment variable."""
    raw = os.environ.get("SN_THREADS", "")
    try:
        cap = int(raw)
    except ValueError:
        cap = 1
    return max(1, min(cap, os.cpu_count() or 1))


def map_trials(fn: Callable[[int], T], count: int, workers: int | None = None) -> list[T]:
    """Evaluate ``fn(i)`` for ``i in range(count)``; results are returned in index order."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or count < 2:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


def as_generator(rng: np.random.Generator | int | Sequence[int] | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
