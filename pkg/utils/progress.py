# utils/progress.py
"""
Индикатор прогресса (tqdm), отключается через FLOWSEG_PROGRESS=0.
"""
from typing import Iterable, Optional, TypeVar

from tqdm import tqdm

import config

T = TypeVar("T")


def progress_bar(iterable: Iterable[T], desc: str, total: Optional[int] = None, leave: bool = False) -> Iterable[T]:
    return tqdm(iterable, desc=desc, total=total, leave=leave, disable=not config.PROGRESS, dynamic_ncols=True)
