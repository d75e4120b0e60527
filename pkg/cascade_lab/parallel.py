"""Thread pool helpers bounded by CASCADE_THREADS"""

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def thread_count() -> int:
    """Number of worker threads allowed by the environment"""
    raw = os.getenv("CASCADE_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            print(f"⚠️ Warning: CASCADE_THREADS={raw!r} is not an integer, using CPU count")
    return max(1, os.cpu_count() or 1)


def parallel_map(fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
    """Apply fn to every item, results in input order.

    Callers reduce the returned list themselves so the summation order
    never depends on how many threads ran.
    """
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
