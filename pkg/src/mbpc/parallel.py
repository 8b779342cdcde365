"""Execution helpers: order-preserving worker pools and BLAS thread control."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence, TypeVar

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - threadpoolctl is a declared dependency
    threadpool_limits = None

_T = TypeVar("_T")
_R = TypeVar("_R")


@contextmanager
def single_threaded_blas() -> Iterator[None]:
    """Pin BLAS pools to one thread.

    Numerical results must not depend on ambient BLAS parallelism, otherwise
    replays on machines with different thread counts would not be
    byte-identical.
    """
    if threadpool_limits is None:  # pragma: no cover
        yield
    else:
        with threadpool_limits(limits=1):
            yield


def parallel_map(fn: Callable[[_T], _R], tasks: Sequence[_T], n_jobs: int = 1) -> list[_R]:
    """Map `fn` over `tasks`, preserving task order in the result.

    Each task must be a pure function of its argument; results are therefore
    identical for every `n_jobs`, which only affects wall time.
    """
    if n_jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, tasks))


def split_indices(n_items: int, n_chunks: int) -> list[list[int]]:
    """Deterministic contiguous split of range(n_items) into at most n_chunks parts."""
    n_chunks = max(1, min(n_chunks, n_items))
    bounds = [round(i * n_items / n_chunks) for i in range(n_chunks + 1)]
    return [list(range(bounds[i], bounds[i + 1])) for i in range(n_chunks) if bounds[i] < bounds[i + 1]]
