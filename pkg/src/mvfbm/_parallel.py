"""Chunked execution helper with worker-count-independent results.

Work is always split into the same fixed-size chunks no matter how many
workers run them; each chunk writes into a preallocated slice, so outputs
are bitwise identical for any worker count.  Threads suffice because the
heavy lifting happens inside numpy calls that release the GIL.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

CHUNK = 4096


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("MVFBM_WORKERS", "1"))
    return max(1, int(workers))


def run_chunked(fn, n_items: int, workers: int | None = None, chunk: int = CHUNK) -> None:
    """Call fn(start, stop) over fixed [start, stop) ranges covering n_items."""
    workers = resolve_workers(workers)
    spans = [(a, min(a + chunk, n_items)) for a in range(0, n_items, chunk)]
    if workers == 1 or len(spans) <= 1:
        for a, b in spans:
            fn(a, b)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(lambda ab: fn(*ab), spans))
