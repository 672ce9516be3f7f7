"""Thread-count control with a fixed-order reduction contract.

Sample sums are always split into chunks of ``CHUNK`` samples whose partial
results are combined in chunk order, so the floating-point result does not
depend on how many threads computed the chunks. BLAS and LAPACK stay on one
thread: their blocking changes with the pool size, and with it the last bits
of SVDs and matrix products.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

from threadpoolctl import threadpool_limits

CHUNK = 4096

_threads = 1


def get_num_threads() -> int:
    return _threads


def set_num_threads(n: int) -> None:
    global _threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = int(n)


@contextmanager
def num_threads(n: int):
    """Temporarily set the worker count; BLAS is held at one thread."""
    global _threads
    old = _threads
    set_num_threads(n)
    try:
        with single_threaded_blas():
            yield
    finally:
        _threads = old


@contextmanager
def single_threaded_blas():
    with threadpool_limits(limits=1):
        yield


def chunk_map(fn, total: int):
    """``[fn(start, stop) for each chunk]`` in chunk order."""
    bounds = [(s, min(s + CHUNK, total)) for s in range(0, total, CHUNK)]
    if _threads == 1 or len(bounds) == 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))


def ordered_sum(parts):
    total = parts[0].copy() if hasattr(parts[0], "copy") else parts[0]
    for p in parts[1:]:
        total = total + p
    return total
