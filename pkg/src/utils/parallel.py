import logging
from typing import Callable, Iterable, List, Optional, TypeVar

from joblib import Parallel, delayed

from ..config.settings import DEFAULT_THREADS

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(func: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """Ordered map; identical output for any worker count."""
    n_jobs = threads or DEFAULT_THREADS
    items = list(items)
    if n_jobs <= 1 or len(items) < 2:
        return [func(item) for item in items]
    logger.debug(f"Mapping {len(items)} items over {n_jobs} workers")
    return Parallel(n_jobs=n_jobs, prefer="threads")(delayed(func)(item) for item in items)
