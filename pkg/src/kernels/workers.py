"""
Thread pools for compute kernels.

Work is always split into contiguous static partitions using the integer
formula ``start = (n * tid) // parts`` so that a given (n, parts) pair maps
each item to the same worker on every run.
"""

import threading
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import Callable, List, Optional, Tuple, TypeVar

T = TypeVar("T")


def static_partition(n: int, parts: int, tid: int) -> Tuple[int, int]:
    """Half-open range ``[start, end)`` of part ``tid`` out of ``parts``."""
    return (n * tid) // parts, (n * (tid + 1)) // parts


class WorkerPool:
    """Fixed-size pool running statically partitioned work."""

    def __init__(self, size: int, name: str = "compute"):
        if size < 1:
            raise ValueError("worker pool size must be >= 1")
        self.size = size
        self.name = name
        self._executor: Optional[ThreadPoolExecutor] = None
        self._lock = threading.Lock()
        self._thread_idents: set = set()

    def _ensure_executor(self) -> ThreadPoolExecutor:
        with self._lock:
            if self._executor is None:
                self._executor = ThreadPoolExecutor(
                    max_workers=self.size,
                    thread_name_prefix=f"{self.name}-worker",
                )
            return self._executor

    def _track(self, fn: Callable[..., T]) -> Callable[..., T]:
        def run(*args):
            self._thread_idents.add(threading.get_ident())
            return fn(*args)
        return run

    def map_partitions(
        self,
        n_items: int,
        fn: Callable[[int, int], T],
        parts: Optional[int] = None,
    ) -> List[T]:
        """
        Run ``fn(start, end)`` for each static partition of ``range(n_items)``.

        Results come back in partition order. A single partition runs inline.
        """
        parts = self.size if parts is None else parts
        ranges = [static_partition(n_items, parts, tid) for tid in range(parts)]
        if parts == 1:
            return [fn(*ranges[0])]

        executor = self._ensure_executor()
        futures = [executor.submit(self._track(fn), start, end) for start, end in ranges]
        return [f.result() for f in futures]

    def thread_idents(self) -> set:
        """Idents of threads that executed partitioned work."""
        return set(self._thread_idents)

    def shutdown(self) -> None:
        with self._lock:
            if self._executor is not None:
                self._executor.shutdown(wait=True)
                self._executor = None


@lru_cache(maxsize=None)
def get_pool(size: int) -> WorkerPool:
    """Shared pool of a given size for callers without a rank context."""
    return WorkerPool(size, name=f"shared{size}")
