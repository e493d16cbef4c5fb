# storage/pgm.py
"""
Бинарные PGM (P5) для кадров масок: maxval 255, объект - 255.
"""
from pathlib import Path
from typing import List, Union

import numpy as np

from errors import FrvsFormatError
from storage.atomic import atomic_write_bytes, read_bytes


def encode_pgm(frame: np.ndarray) -> bytes:
    """Кодирует бинарный кадр H×W в P5."""
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise FrvsFormatError(f"PGM frame must be 2-D, got dims {list(frame.shape)}")
    pixels = np.where(frame > 0, 255, 0).astype(np.uint8)
    height, width = pixels.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()


def decode_pgm(payload: bytes) -> np.ndarray:
    """Декодирует P5 в массив uint8 H×W (значения 0/255 как записаны)."""
    fields: List[bytes] = []
    offset = 0
    while len(fields) < 4:
        while offset < len(payload) and payload[offset:offset + 1].isspace():
            offset += 1
        if payload[offset:offset + 1] == b"#":
            while offset < len(payload) and payload[offset:offset + 1] != b"\n":
                offset += 1
            continue
        start = offset
        while offset < len(payload) and not payload[offset:offset + 1].isspace():
            offset += 1
        if start == offset:
            raise FrvsFormatError("truncated PGM header")
        fields.append(payload[start:offset])
    if fields[0] != b"P5" or int(fields[3]) != 255:
        raise FrvsFormatError("only binary PGM (P5) with maxval 255 is supported")
    width, height = int(fields[1]), int(fields[2])
    offset += 1  # один пробельный символ после maxval
    data = payload[offset:offset + width * height]
    if len(data) != width * height:
        raise FrvsFormatError("truncated PGM pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).copy()


def write_mask_frames(out_dir: Union[str, Path], mask: np.ndarray, prefix: str = "frame") -> List[Path]:
    """Записывает маску T×H×W покадрово: <prefix>_000.pgm, ..."""
    out_dir = Path(out_dir)
    return [atomic_write_bytes(out_dir / f"{prefix}_{t:03d}.pgm", encode_pgm(frame)) for t, frame in enumerate(mask)]


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    return decode_pgm(read_bytes(path))
