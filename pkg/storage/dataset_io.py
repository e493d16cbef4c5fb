# storage/dataset_io.py
"""
Раскладка каталога набора данных:

    <root>/<split>/<index>.video.frvs   тензор "video" T×H×W×3 float32
    <root>/<split>/<index>.mask.frvs    тензор "mask"  T×H×W uint8
    <root>/<split>/<index>.query.txt    строки key=value
"""
import hashlib
import logging
import re
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from constants import INDEX_WIDTH, MASK_SUFFIX, QUERY_SUFFIX, VIDEO_SUFFIX
from errors import DatasetIOError
from storage.atomic import atomic_write_bytes, read_bytes
from storage.frvs import read_frvs, write_frvs

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_INDEX_RE = re.compile(r"^(\d+)" + re.escape(MASK_SUFFIX) + "$")


def sample_stem(index: int) -> str:
    return f"{index:0{INDEX_WIDTH}d}"


def format_record(record: Dict[str, object]) -> str:
    return "".join(f"{key}={value}\n" for key, value in record.items())


def parse_record(text: str) -> Dict[str, str]:
    record: Dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        record[key.strip()] = value.strip()
    return record


def write_sample_files(split_dir: PathLike, index: int, video: np.ndarray, mask: np.ndarray,
                       record: Dict[str, object]) -> None:
    """Записывает три файла выборки (каждый атомарно)."""
    split_dir = Path(split_dir)
    stem = sample_stem(index)
    write_frvs(split_dir / f"{stem}{VIDEO_SUFFIX}", {"video": video.astype(np.float32)})
    write_frvs(split_dir / f"{stem}{MASK_SUFFIX}", {"mask": mask.astype(np.uint8)})
    atomic_write_bytes(split_dir / f"{stem}{QUERY_SUFFIX}", format_record(record).encode("utf-8"))


def read_video(path: PathLike) -> np.ndarray:
    tensors = read_frvs(path)
    if "video" not in tensors:
        raise DatasetIOError(path, "no 'video' tensor in container")
    return tensors["video"]


def read_mask(path: PathLike) -> np.ndarray:
    tensors = read_frvs(path)
    for key in ("mask", "prediction"):
        if key in tensors:
            return (tensors[key] > 0).astype(np.uint8)
    raise DatasetIOError(path, "no 'mask' tensor in container")


def read_query_record(path: PathLike) -> Dict[str, str]:
    try:
        return parse_record(read_bytes(path).decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as e:
        raise DatasetIOError(path, f"malformed query file ({e})") from None


def read_sample_files(split_dir: PathLike, index: int) -> Tuple[np.ndarray, np.ndarray, Dict[str, str]]:
    """
    Читает выборку.

    Raises:
        DatasetIOError: файл отсутствует или повреждён
    """
    split_dir = Path(split_dir)
    stem = sample_stem(index)
    video = read_video(split_dir / f"{stem}{VIDEO_SUFFIX}")
    mask = read_mask(split_dir / f"{stem}{MASK_SUFFIX}")
    record = read_query_record(split_dir / f"{stem}{QUERY_SUFFIX}")
    return video, mask, record


def list_indices(split_dir: PathLike) -> List[int]:
    """Индексы выборок (по файлам масок), по возрастанию."""
    split_dir = Path(split_dir)
    if not split_dir.is_dir():
        raise DatasetIOError(split_dir, "directory not found")
    indices = []
    for path in split_dir.iterdir():
        match = _INDEX_RE.match(path.name)
        if match:
            indices.append(int(match.group(1)))
    return sorted(indices)


def corpus_digest(root: PathLike) -> str:
    """SHA-256 по относительным путям и байтам всех файлов (в сортированном порядке)."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file() and not p.name.endswith(".tmp")):
        h.update(path.relative_to(root).as_posix().encode("utf-8"))
        h.update(b"\0")
        h.update(read_bytes(path))
    return h.hexdigest()
