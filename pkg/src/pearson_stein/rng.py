"""Counter-based random streams.

Every block of work (a chunk of paths or samples) draws from its own Philox
stream keyed by ``(seed, block index)``, so results do not depend on how the
blocks are scheduled across workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def blocks(n: int, block_size: int):
    """``(index, start, stop)`` for consecutive blocks covering ``range(n)``."""
    for i, start in enumerate(range(0, n, block_size)):
        yield i, start, min(n, start + block_size)


def run_blocks(fn, n: int, block_size: int, workers: int = 1) -> list:
    """Apply ``fn(index, start, stop)`` to every block; results in block order."""
    items = list(blocks(n, block_size))
    if workers <= 1 or len(items) == 1:
        return [fn(*it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda it: fn(*it), items))
