"""Reproducible random streams.

Every sampler in the package draws from ``numpy.random.Philox`` (Philox4x64-10),
a counter-based generator.  The 128-bit key is ``seed + (stream << 64)`` so a
``(seed, stream)`` pair identifies an independent stream.  Large batches are
split into fixed-size chunks and chunk ``c`` of operation ``op`` uses stream
``(op << 32) | c``; the output therefore does not depend on how many threads
process the chunks.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

__all__ = [
    "CHUNK",
    "GENERATOR_ID",
    "OP",
    "chunk_sizes",
    "get_max_threads",
    "map_chunks",
    "set_max_threads",
    "stream",
    "uniform01c",
]

GENERATOR_ID = "numpy.random.Philox(4x64-10), key = seed + (stream << 64)"

CHUNK = 1 << 18

# operation codes; keep stable, they are part of the output contract
OP = {
    "recursion": 1,
    "path": 2,
    "bernoulli-sum": 3,
    "poisson-sum": 4,
    "record-sum": 5,
    "prime-sum": 6,
    "coupling": 7,
    "bootstrap": 8,
    "reference": 9,
    "transform": 10,
    "contraction": 11,
    "remainder": 12,
    "size-bias": 13,
}

_MASK64 = (1 << 64) - 1
_max_threads = max(1, int(os.environ.get("DICKMAN_THREADS", "1") or 1))

T = TypeVar("T")


def stream(seed: int, stream_id: int) -> np.random.Generator:
    """Generator for the independent stream ``(seed, stream_id)``."""
    key = (int(seed) & _MASK64) | ((int(stream_id) & _MASK64) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def uniform01c(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform draws on the half-open interval (0, 1]."""
    return 1.0 - rng.random(size)


def set_max_threads(n: int) -> None:
    global _max_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _max_threads = int(n)


def get_max_threads() -> int:
    return _max_threads


def chunk_sizes(num_samples: int, chunk: int = CHUNK) -> list[int]:
    if num_samples < 0:
        raise ValueError("num_samples must be >= 0")
    q, r = divmod(int(num_samples), chunk)
    return [chunk] * q + ([r] if r else [])


def map_chunks(
    fn: Callable[[np.random.Generator, int], T],
    num_samples: int,
    seed: int,
    op: str,
    threads: int | None = None,
) -> list[T]:
    """Apply ``fn(rng, size)`` to every chunk, each with its own stream.

    Results come back in chunk order regardless of scheduling.
    """
    sizes = chunk_sizes(num_samples)
    base = OP[op] << 32
    jobs: Sequence[tuple[int, int]] = list(enumerate(sizes))

    def run(job: tuple[int, int]) -> T:
        c, size = job
        return fn(stream(seed, base | c), size)

    n_threads = min(threads or _max_threads, max(1, len(jobs)))
    if n_threads == 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(run, jobs))
