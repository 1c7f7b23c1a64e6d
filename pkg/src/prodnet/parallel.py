"""Per-well process parallelism with a deterministic merge order."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable


def pmap(fn: Callable, items: Iterable, jobs: int = 1) -> list:
    """``[fn(x) for x in items]``, spread over ``jobs`` processes; order is kept."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))
