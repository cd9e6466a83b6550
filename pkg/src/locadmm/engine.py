"""Bulk-synchronous execution of per-node updates.

Both solvers run the same discipline: within an iteration, per-node tasks
read only the previous iteration's (immutable) snapshots and each write one
slot of the next snapshot, so results are identical for any worker count.
Hooks fire single-threaded at the barrier after every iteration.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class IterationEvent:
    """Barrier snapshot handed to hooks.

    ``states`` and ``states_prev`` are full per-node state lists (for the
    low-storage solver these are reconstructed views); ``ztilde`` carries the
    pre-projection half-step blocks when the solver produces them, else
    ``None``. ``comm_scalars`` counts every scalar exchanged this iteration.
    """

    t: int
    states: list
    states_prev: Optional[list]
    ztilde: Optional[list]
    comm_scalars: int


Hook = Callable[[IterationEvent], None]


@dataclass
class RunResult:
    """Final solver output: per-node states, stacked position estimates, and
    the recorded trace when metrics were requested."""

    states: list
    estimates: np.ndarray
    trace: object = None


class NodeScheduler:
    """Maps a per-node function over contiguous node chunks.

    With ``threads <= 1`` this is a plain loop; otherwise chunks run on a
    thread pool. Each output slot is written exactly once, so the result is
    independent of scheduling.
    """

    def __init__(self, num_nodes: int, threads: int = 1):
        self.num_nodes = num_nodes
        self.threads = max(1, int(threads))
        self._pool = None
        self._bounds: list[tuple[int, int]] = []
        if self.threads > 1 and num_nodes > 1:
            workers = min(self.threads, num_nodes)
            self._pool = ThreadPoolExecutor(max_workers=workers)
            step = -(-num_nodes // workers)
            self._bounds = [
                (lo, min(lo + step, num_nodes)) for lo in range(0, num_nodes, step)
            ]

    def map(self, fn: Callable[[int], object]) -> list:
        out: list = [None] * self.num_nodes
        if self._pool is None:
            for i in range(self.num_nodes):
                out[i] = fn(i)
            return out

        def chunk(lo: int, hi: int) -> None:
            for i in range(lo, hi):
                out[i] = fn(i)

        futures = [self._pool.submit(chunk, lo, hi) for lo, hi in self._bounds]
        for fut in futures:
            fut.result()
        return out

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self) -> "NodeScheduler":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
