"""Order-preserving map over tasks, capped by ``IFTSPLAT_THREADS``."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_VAR = "IFTSPLAT_THREADS"


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get(ENV_VAR, "1")))
    except ValueError:
        return 1


def map_tasks(fn, items) -> list:
    """``[fn(x) for x in items]``, possibly on a thread pool.

    Results always come back in input order, and every reduction over them
    happens afterwards in that order, so output does not depend on the
    worker count.
    """
    items = list(items)
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
