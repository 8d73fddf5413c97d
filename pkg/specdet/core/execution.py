"""Grid execution environment."""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, List, Optional, Sequence

from pydantic import BaseModel, ConfigDict


class GridResult(BaseModel):
    """Result of evaluating one grid point."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    index: int
    point: Any
    success: bool
    value: Any = None
    error: Optional[str] = None
    duration: float = 0.0


class GridExecutor:
    """Evaluates independent grid points on a thread pool.

    Results come back in grid order whatever the completion order, so runs
    are reproducible for any worker count. NumPy and SciPy release the GIL in
    the dense kernels, which is where the time goes.
    """

    def __init__(self, workers: int = 1):
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        self.workers = workers
        self.logger = logging.getLogger(__name__)

    def run(self, func: Callable[[Any], Any], points: Sequence[Any]) -> List[GridResult]:
        """Evaluate ``func`` at every point, capturing failures per point."""
        points = list(points)
        if self.workers == 1 or len(points) < 2:
            return [self._evaluate(func, i, p) for i, p in enumerate(points)]
        with ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="grid") as pool:
            futures = [pool.submit(self._evaluate, func, i, p) for i, p in enumerate(points)]
            return [future.result() for future in futures]

    def map(self, func: Callable[[Any], Any], points: Sequence[Any]) -> List[Any]:
        """Evaluate every point and re-raise the first failure in grid order."""
        points = list(points)
        if self.workers == 1 or len(points) < 2:
            return [func(p) for p in points]
        with ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="grid") as pool:
            return list(pool.map(func, points))

    def _evaluate(self, func: Callable[[Any], Any], index: int, point: Any) -> GridResult:
        start = time.perf_counter()
        result = GridResult(index=index, point=point, success=False)
        try:
            result.value = func(point)
            result.success = True
        except Exception as e:
            self.logger.error(f"Grid point {index} ({point!r}) failed: {e}")
            result.error = str(e)
        finally:
            result.duration = time.perf_counter() - start
        return result


def default_executor(executor: Optional[GridExecutor]) -> GridExecutor:
    return executor if executor is not None else GridExecutor(1)
