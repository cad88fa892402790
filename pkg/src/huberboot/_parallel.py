"""Thread-pool helpers with index-ordered, scheduling-independent assembly."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(threads=None) -> int:
    """``None``/``"auto"`` fall back to ``HUBERBOOT_THREADS``, then to the CPU count."""
    if threads is None:
        threads = os.environ.get("HUBERBOOT_THREADS", "auto")
    if isinstance(threads, str):
        if threads.strip().lower() == "auto":
            return max(1, os.cpu_count() or 1)
        threads = int(threads)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return int(threads)


def ordered_map(fn, items, threads=None) -> list:
    """``[fn(x) for x in items]``, optionally on a thread pool; output order follows ``items``."""
    items = list(items)
    n = resolve_threads(threads)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def chunks(total: int, size: int):
    """Fixed-size index ranges; chunk boundaries never depend on the thread count."""
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]
