import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

from bayesid.domain import ConfigurationError

THREADS_VARIABLE = "BAYESID_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def thread_count() -> int:
    raw = os.environ.get(THREADS_VARIABLE, "1")
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigurationError(f"${THREADS_VARIABLE} must be an integer, got '{raw}'") from None
    if threads < 1:
        raise ConfigurationError(f"${THREADS_VARIABLE} must be at least 1, got {threads}")
    return threads


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int) -> list[R]:
    """Order-preserving map, on a thread pool when more than one thread is allowed."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


def spawn_generators(rng: np.random.Generator, count: int) -> list[np.random.Generator]:
    """
    Independent child streams derived from one draw of `rng`, so results do not
    depend on how the children are scheduled.
    """
    root = np.random.SeedSequence(int(rng.integers(0, 2 ** 63)))
    return [np.random.default_rng(child) for child in root.spawn(count)]


def format_seconds(seconds: float) -> str:
    minutes, rest = divmod(int(round(seconds)), 60)
    if minutes:
        return f"{minutes}m {rest:02d}s"
    return f"{seconds:.1f}s"


def log_timing(label: str, seconds: float) -> None:
    logging.info("%s took %s", label, format_seconds(seconds))
