# storage/atomic.py
"""
Атомарная запись файлов через временный файл.
"""
import logging
import os
from pathlib import Path
from typing import Union

from errors import DatasetIOError

logger = logging.getLogger(__name__)


def atomic_write_bytes(path: Union[str, Path], payload: bytes) -> Path:
    """
    Атомарно сохраняет байты в файл.
    Использует временный файл для безопасной записи.

    Args:
        path: путь назначения
        payload: содержимое

    Returns:
        Path: путь записанного файла

    Raises:
        DatasetIOError: ошибка записи (с путём)
    """
    path = Path(path)
    temp_file = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(temp_file, "wb") as f:
            f.write(payload)
        # замена оригинального файла на временный
        os.replace(temp_file, path)
    except OSError as e:
        logger.error(f"[IO] ❌ Ошибка записи {path}: {e}")
        # удаляем временный файл в случае ошибки
        if temp_file.exists():
            try:
                temp_file.unlink()
            except OSError:
                pass
        raise DatasetIOError(path, f"write failed ({e.strerror or e})") from e
    return path


def read_bytes(path: Union[str, Path]) -> bytes:
    """
    Читает файл целиком.

    Raises:
        DatasetIOError: файл не читается
    """
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise DatasetIOError(path, f"read failed ({e.strerror or e})") from e
