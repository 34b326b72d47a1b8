"""Order-preserving index map with an optional process pool.

Results are identical for any worker count: tasks depend only on their index
(seeds are derived by counter mixing, never from shared state) and the merge
consumes results in index order.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("HF_WORKERS", "1"))
    return max(1, int(workers))


def map_indexed(task, n: int, workers: int | None = None) -> list:
    """[task(0), ..., task(n-1)] computed serially or on a process pool."""
    w = resolve_workers(workers)
    if w <= 1 or n <= 1:
        return [task(i) for i in range(n)]
    with ProcessPoolExecutor(max_workers=w) as ex:
        return list(ex.map(task, range(n), chunksize=max(1, n // (4 * w))))
