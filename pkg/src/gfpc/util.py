"""Small shared helpers."""

import os
from concurrent.futures import ThreadPoolExecutor

from .errors import ConfigError


def thread_count(requested=None):
    """Resolve a worker count: explicit argument, else GFPC_THREADS, else 1."""
    if requested is None:
        raw = os.environ.get("GFPC_THREADS", "1")
        try:
            requested = int(raw)
        except ValueError as exc:
            raise ConfigError(f"GFPC_THREADS must be an int, got {raw!r}") from exc
    if requested < 1:
        raise ConfigError(f"thread count must be >= 1, got {requested}")
    return requested


def parallel_map(fn, items, threads=1):
    """Map fn over items, preserving order. threads=1 runs inline; more
    spreads independent items over a thread pool (fn must be pure)."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
