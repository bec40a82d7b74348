"""Thread-count resolution and an order-preserving parallel map."""

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(threads=None):
    if threads is None:
        env = os.environ.get("SURVUNC_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    threads = int(threads)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def parallel_map(fn, items, threads=None):
    """``[fn(x) for x in items]``; work items must not share mutable state."""
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
