"""Deterministic data-parallel execution over particle chunks."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

__all__ = ["ChunkRunner", "SERIAL"]


class ChunkRunner:
    """Applies a function to fixed-size particle slices.

    Slice boundaries depend only on ``N`` and ``chunk``, never on ``threads``,
    so every chunk sees byte-identical inputs whatever the pool size.
    """

    def __init__(self, threads: int = 1, chunk: int = 4096):
        if threads < 1 or chunk < 1:
            raise ValueError("threads and chunk must be >= 1")
        self.threads = threads
        self.chunk = chunk
        self._pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def slices(self, n: int) -> list[slice]:
        return [slice(s, min(s + self.chunk, n)) for s in range(0, n, self.chunk)]

    def map(self, fn, n: int) -> list:
        parts = self.slices(n)
        if self._pool is None:
            return [fn(s) for s in parts]
        return list(self._pool.map(fn, parts))

    def concat(self, fn, n: int) -> np.ndarray:
        return np.concatenate(self.map(fn, n), axis=0)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


SERIAL = ChunkRunner(1)
