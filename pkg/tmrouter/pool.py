"""
Thread pool for running Monte Carlo trials in parallel with results
returned in trial order.
"""
import logging
import os
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Callable, List, Optional, Tuple, TypeVar

from tmrouter.core import ConfigError

logger = logging.getLogger(__name__)

T = TypeVar('T')

THREADS_ENV = 'TMROUTER_THREADS'


def default_workers() -> int:
    """Worker count from ``TMROUTER_THREADS``, or 1."""
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if workers < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return workers


class TrialPool:
    """
    Runs a per-trial function over a range of trial indices.

    The range is split into contiguous chunks, one or more per worker, and
    results are concatenated in index order, so anything aggregated from
    them is independent of the number of workers. With one worker
    everything runs inline on the calling thread.
    """

    def __init__(self, max_workers: int = 1, chunks_per_worker: int = 4):
        """
        Initialize the pool.

        Args:
            max_workers: Maximum number of concurrent worker threads
            chunks_per_worker: How many chunks each worker gets on average
        """
        if max_workers < 1:
            raise ConfigError(f"Worker count must be >= 1, got {max_workers}")
        self.max_workers = max_workers
        self.chunks_per_worker = max(1, chunks_per_worker)
        self.executor: Optional[ThreadPoolExecutor] = None
        if max_workers > 1:
            self.executor = ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix='tmrouter')

    def chunks(self, count: int) -> List[Tuple[int, int]]:
        """Split ``range(count)`` into contiguous ``(start, stop)`` chunks."""
        if count <= 0:
            return []
        pieces = min(count, self.max_workers * self.chunks_per_worker)
        size, extra = divmod(count, pieces)
        bounds = []
        start = 0
        for i in range(pieces):
            stop = start + size + (1 if i < extra else 0)
            bounds.append((start, stop))
            start = stop
        return bounds

    @staticmethod
    def _run_chunk(func: Callable[[int], T], start: int, stop: int) -> List[T]:
        """Results of ``func`` over one contiguous trial range."""
        return [func(i) for i in range(start, stop)]

    def map_range(self, func: Callable[[int], T], count: int) -> List[T]:
        """
        Evaluate ``func(i)`` for ``i`` in ``range(count)``.

        Args:
            func: Pure function of the trial index
            count: Number of trials

        Returns:
            Results in index order

        Raises:
            Whatever ``func`` raises first, in index order
        """
        if self.executor is None or count <= 1:
            return self._run_chunk(func, 0, count)
        futures: List[Future] = [
            self.executor.submit(self._run_chunk, func, start, stop)
            for start, stop in self.chunks(count)
        ]
        results: List[T] = []
        try:
            for future in futures:
                results.extend(future.result())
        except BaseException:
            for future in futures:
                future.cancel()
            raise
        return results

    def shutdown(self, wait: bool = True) -> None:
        """Shut down the pool and its worker threads."""
        if self.executor is not None:
            self.executor.shutdown(wait=wait)
            self.executor = None

    def __enter__(self) -> 'TrialPool':
        """Enter the context."""
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        """Shut the executor down."""
        self.shutdown()
