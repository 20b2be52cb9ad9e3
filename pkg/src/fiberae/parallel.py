"""Worker-count control for branch-parallel evaluation.

The contract everywhere in the package is that results are bit-identical for
any worker count at a fixed seed: threads only compute independent chunks that
are reduced in a fixed order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

_num_threads = 1


def set_threads(n: int) -> None:
    global _num_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _num_threads = int(n)


def get_threads() -> int:
    return _num_threads


def map_ordered(fn, items):
    """Apply `fn` over `items`, possibly in parallel, preserving order."""
    if _num_threads == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=_num_threads) as pool:
        return list(pool.map(fn, items))
