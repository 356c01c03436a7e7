"""Deterministic parallel random streams.

Work is cut into fixed-size chunks. Chunk ``c`` always draws from the
Philox stream spawned as child ``c`` of ``SeedSequence(seed)``, and results
are returned in chunk order, so the output depends only on ``(seed, total,
chunk)`` and never on the number of worker threads.
"""

from __future__ import annotations

import os
import secrets
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

THREADS_ENV = "ISOBALLS_THREADS"


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if value >= 1:
            return value
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
    return os.cpu_count() or 1


def fresh_seed() -> int:
    """A 63-bit seed from OS entropy (for runs without an explicit seed)."""
    return secrets.randbits(63)


def stream(seed: int, index: int) -> np.random.Generator:
    """The generator owned by chunk ``index``."""
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


def chunked(total: int, chunk: int) -> list[int]:
    if total < 0 or chunk < 1:
        raise ValueError("need total >= 0 and chunk >= 1")
    sizes = [chunk] * (total // chunk)
    if total % chunk:
        sizes.append(total % chunk)
    return sizes


def run_chunks(
    fn: Callable[[np.random.Generator, int], T],
    sizes: Sequence[int],
    seed: int,
    threads: int = 1,
) -> list[T]:
    """Apply ``fn(rng_c, size_c)`` to every chunk; results in chunk order."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    tasks = [(stream(seed, c), s) for c, s in enumerate(sizes)]
    if threads == 1 or len(tasks) <= 1:
        return [fn(rng, s) for rng, s in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: fn(*t), tasks))
