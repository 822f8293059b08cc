"""Ordered thread-pool map; results are identical for any thread count."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(threads=None) -> int:
    if threads is None:
        env = os.environ.get("LSR_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError("thread count must be >= 1")
    return threads


def parallel_map(fn, items, threads: int = 1) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
