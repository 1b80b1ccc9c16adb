"""Deterministic chunked Monte Carlo over sampled tasks.

Tasks are drawn in fixed-size chunks, each from a stream keyed by
``(seed, chunk index)``. Chunks may be evaluated on any number of worker
threads; results are always reassembled in chunk order, so every estimate is
bit-identical regardless of the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .tasks import TaskConfig, chunk_rng, sample_batch

CHUNK_SIZE = 2000
THREADS_ENV = "ICLCAT_THREADS"


@dataclass(frozen=True)
class McConfig:
    num_tasks: int = 10_000
    seed: int = 0
    antithetic: bool = False

    def __post_init__(self):
        if self.num_tasks < 1:
            raise ValueError("num_tasks must be positive")
        if self.antithetic and self.num_tasks % 2:
            raise ValueError("antithetic sampling needs an even number of tasks")


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1"))
    return max(1, int(threads))


def chunk_sizes(num_tasks: int) -> list[int]:
    full, rest = divmod(num_tasks, CHUNK_SIZE)
    return [CHUNK_SIZE] * full + ([rest] if rest else [])


def map_tasks(fn, cfg: TaskConfig, mc: McConfig, threads: int | None = None):
    """Apply ``fn(batch)`` to every task chunk; returns the per-chunk results in order."""
    sizes = chunk_sizes(mc.num_tasks)

    def run(i):
        batch = sample_batch(cfg, sizes[i], chunk_rng(mc.seed, i), antithetic=mc.antithetic)
        return fn(batch)

    nthreads = resolve_threads(threads)
    if nthreads == 1 or len(sizes) == 1:
        return [run(i) for i in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=nthreads) as pool:
        return list(pool.map(run, range(len(sizes))))


def collect(fn, cfg: TaskConfig, mc: McConfig, threads: int | None = None):
    """Like :func:`map_tasks` but concatenates per-task arrays.

    ``fn`` returns a dict of arrays with the task axis first; the output maps
    each key to the full (num_tasks, ...) array.
    """
    parts = map_tasks(fn, cfg, mc, threads)
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def observations(values: np.ndarray, antithetic: bool) -> np.ndarray:
    """Per-observation values: antithetic pairs collapse to their average."""
    values = np.asarray(values, dtype=float)
    if antithetic:
        return 0.5 * (values[0::2] + values[1::2])
    return values


def mean_stderr(values: np.ndarray, antithetic: bool = False) -> tuple[float, float]:
    obs = observations(values, antithetic)
    if obs.size < 2:
        return float(np.mean(obs)), float("nan")
    return float(np.mean(obs)), float(np.std(obs, ddof=1) / np.sqrt(obs.size))
