"""Order-preserving fan-out used for per-document work."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def ordered_map(fn, items, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally on a thread pool; result order is input order."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
