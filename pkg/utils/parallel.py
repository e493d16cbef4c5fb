# utils/parallel.py
"""
Параллельное отображение с сохранением порядка результатов.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

import config

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def worker_count(requested: Optional[int] = None) -> int:
    """Число потоков: явное значение или FLOWSEG_THREADS."""
    return max(1, requested if requested is not None else config.THREADS)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """
    Применяет fn к каждому элементу.

    Args:
        fn: чистая функция (не должна зависеть от порядка вызовов)
        items: входные элементы
        workers: число потоков (по умолчанию FLOWSEG_THREADS)

    Returns:
        List: результаты в порядке входа
    """
    items = list(items)
    workers = min(worker_count(workers), max(1, len(items)))
    if workers == 1:
        return [fn(item) for item in items]
    logger.debug(f"[POOL] {len(items)} задач на {workers} потоках")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
