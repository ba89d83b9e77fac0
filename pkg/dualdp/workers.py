"""
Scenario worker pool.

The immutable context (an instance, or a hierarchical instance) is installed
once per worker process by the pool initializer; each task then carries only
the small per-iteration payload. ``map`` returns results in submission order,
so reductions over scenarios always run in ascending scenario order.
"""
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Iterable

from dualdp.app_log_config import logger


_context: Any = None


def _install_context(context: Any) -> None:
    global _context
    _context = context


def _run_task(payload):
    fn, task = payload
    return fn(_context, task)


def resolve_workers(workers: int) -> int:
    if workers == 0:
        return os.cpu_count() or 1
    return workers


class WorkerPool:
    def __init__(self, context: Any, workers: int = 1):
        self.context = context
        self.workers = resolve_workers(workers)
        self._executor: ProcessPoolExecutor | None = None
        if self.workers > 1:
            self._executor = ProcessPoolExecutor(
                max_workers=self.workers,
                initializer=_install_context,
                initargs=(context,),
            )
            logger.info(f"Started scenario pool with {self.workers} worker processes")

    def map(self, fn: Callable[[Any, Any], Any], tasks: Iterable) -> list:
        tasks = list(tasks)
        if self._executor is None:
            return [fn(self.context, task) for task in tasks]
        chunksize = max(1, len(tasks) // (4 * self.workers))
        return list(self._executor.map(_run_task, [(fn, task) for task in tasks], chunksize=chunksize))

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
