"""Row-parallel map over forked workers, capped by ``SPEEDRS_THREADS``."""
from __future__ import annotations

import multiprocessing
import os

from .errors import ConfigError


def threads() -> int:
    raw = os.environ.get("SPEEDRS_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"SPEEDRS_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


_WORK = None


def _call(i):
    return _WORK(i)


def run_rows(fn, n: int) -> list:
    """``[fn(0), ..., fn(n-1)]``, spread over ``SPEEDRS_THREADS`` forked workers.

    Every row owns its seeds, so the worker count never changes the results.
    """
    global _WORK
    k = threads()
    if k == 1 or n < 2:
        return [fn(i) for i in range(n)]
    _WORK = fn
    try:
        with multiprocessing.get_context("fork").Pool(k) as pool:
            return pool.map(_call, range(n), chunksize=max(1, n // (4 * k)))
    finally:
        _WORK = None
