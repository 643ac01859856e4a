"""Order-preserving process pool."""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from heavytail.dsgd.config import get_settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(
    fn: Callable[[T], R], items: Iterable[T], jobs: Optional[int] = None
) -> List[R]:
    """map(fn, items) over up to `jobs` worker processes.

    Results come back in input order, so output does not depend on `jobs`.
    """
    items = list(items)
    jobs = get_settings().jobs if jobs is None else jobs
    jobs = max(1, min(int(jobs), len(items)))
    if jobs == 1:
        return [fn(item) for item in items]

    logger.debug(f"dispatching {len(items)} tasks to {jobs} workers")
    chunksize = max(1, len(items) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(fn, items, chunksize=chunksize))
