"""Order-preserving map over independent jobs."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

ENV_VAR = "GPLSIM_THREADS"


def worker_count(requested: int | None = None) -> int:
    """Workers to use: ``requested``, else ``$GPLSIM_THREADS``, else the CPU count."""
    if requested is None:
        env = os.environ.get(ENV_VAR)
        if env:
            try:
                requested = int(env)
            except ValueError:
                requested = None
    if requested is None:
        requested = os.cpu_count() or 1
    return max(1, int(requested))


def pmap(func, items, workers: int | None = None) -> list:
    """``[func(x) for x in items]``, possibly across processes; output order is fixed."""
    items = list(items)
    n = min(worker_count(workers), len(items))
    if n <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(func, items, chunksize=max(1, len(items) // (4 * n))))
