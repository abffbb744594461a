"""Order-preserving process-pool map used for per-node and per-seed work."""

from __future__ import annotations

import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Optional

_CTX = None
_FUNC = None


def resolve_threads(threads: Optional[int] = None) -> int:
    """``FGM_THREADS`` if set, else the explicit value, else the number of usable cores."""
    env = os.environ.get("FGM_THREADS")
    if env:
        threads = int(env)
    if threads is None:
        try:
            threads = len(os.sched_getaffinity(0))
        except AttributeError:
            threads = os.cpu_count() or 1
    return max(1, int(threads))


def _init(func, ctx):
    global _FUNC, _CTX
    _FUNC, _CTX = func, ctx


def _call(item):
    return _FUNC(_CTX, item)


def map_ordered(func: Callable, ctx, items: Iterable, threads: int = 1) -> list:
    """``[func(ctx, item) for item in items]``, optionally across worker processes.

    Results come back in input order, so output never depends on ``threads``.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(ctx, item) for item in items]
    method = "fork" if "fork" in mp.get_all_start_methods() else "spawn"
    with ProcessPoolExecutor(
        max_workers=min(threads, len(items)),
        mp_context=mp.get_context(method),
        initializer=_init,
        initargs=(func, ctx),
    ) as pool:
        return list(pool.map(_call, items))
