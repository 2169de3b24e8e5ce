"""
Concurrent processing utilities

Thread-pool fan-out for independent, pure work items (scene generation,
evaluation forwards). Results always come back in submission order so
outputs do not depend on scheduling.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Generic, List, Optional, Sequence, TypeVar

from tutor_curriculum.core.performance import get_performance_monitor


logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


@dataclass
class TaskResult(Generic[R]):
    """Result of a concurrent task execution"""
    task_id: str
    result: Optional[R] = None
    error: Optional[BaseException] = None
    duration: float = 0.0

    @property
    def success(self) -> bool:
        return self.error is None


@dataclass
class ConcurrentConfig:
    """Configuration for concurrent processing"""
    max_workers: int = 4
    chunk_label: str = "task"


class ParallelTaskRunner:
    """Runs a function over items on a thread pool and merges results in order"""

    def __init__(self, config: Optional[ConcurrentConfig] = None):
        self.config = config or ConcurrentConfig()
        self.performance_monitor = get_performance_monitor()

    def run(self, func: Callable[[T], R], items: Sequence[T]) -> List[TaskResult[R]]:
        """Execute every item; failures are captured per task"""
        def execute(indexed: tuple) -> TaskResult[R]:
            index, item = indexed
            task_id = f"{self.config.chunk_label}_{index}"
            start_time = time.perf_counter()
            try:
                value = func(item)
                return TaskResult(task_id=task_id, result=value, duration=time.perf_counter() - start_time)
            except Exception as e:
                return TaskResult(task_id=task_id, error=e, duration=time.perf_counter() - start_time)

        indexed_items = list(enumerate(items))
        if self.config.max_workers <= 1 or len(indexed_items) <= 1:
            results = [execute(entry) for entry in indexed_items]
        else:
            with ThreadPoolExecutor(max_workers=self.config.max_workers) as executor:
                results = list(executor.map(execute, indexed_items))

        failed = sum(1 for r in results if not r.success)
        self.performance_monitor.metrics.increment_counter(
            "parallel_tasks_total", len(results), labels={"label": self.config.chunk_label}
        )
        if failed:
            logger.warning(f"{failed} of {len(results)} {self.config.chunk_label} tasks failed")
        return results

    def map_ordered(self, func: Callable[[T], R], items: Sequence[T]) -> List[R]:
        """Like ``run`` but returns plain values and re-raises the first error"""
        results = self.run(func, items)
        for task in results:
            if task.error is not None:
                raise task.error
        return [task.result for task in results]


def map_in_order(func: Callable[[T], R], items: Sequence[T], max_workers: int = 4, label: str = "task") -> List[R]:
    """Convenience wrapper around ParallelTaskRunner.map_ordered"""
    runner = ParallelTaskRunner(ConcurrentConfig(max_workers=max_workers, chunk_label=label))
    return runner.map_ordered(func, items)
