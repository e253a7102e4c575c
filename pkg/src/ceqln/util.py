"""Small shared helpers: numeric formatting and capped parallel mapping."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

#: Environment variable capping internal parallelism (threads per process).
THREADS_ENV = "CEQLN_THREADS"


def format_float(x: float) -> str:
    """17-significant-digit decimal string; losslessly round-trips float64."""
    return f"{float(x):.17g}"


def thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def ordered_map(fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    """Map ``fn`` over ``items`` preserving order.

    Runs in a thread pool when CEQLN_THREADS > 1; results are collected in
    input order so reductions downstream stay deterministic regardless of
    the cap. Items must be independent.
    """
    cap = thread_cap()
    if cap <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(cap, len(items))) as pool:
        return list(pool.map(fn, items))
