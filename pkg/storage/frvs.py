# storage/frvs.py
"""
Контейнер тензоров FRVS.

Формат (little-endian):
    "FRVS" | версия u32 | число тензоров u32 |
    для каждого тензора: длина имени u16 + имя UTF-8, код типа u8
    (0=f32, 1=f64, 2=u8), ndim u8, размерности u32, данные row-major.
"""
import logging
import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from constants import DTYPE_F32, DTYPE_F64, DTYPE_U8, FRVS_MAGIC, FRVS_VERSION
from errors import FrvsFormatError
from storage.atomic import atomic_write_bytes, read_bytes

logger = logging.getLogger(__name__)

_CODES = {np.dtype("<f4"): DTYPE_F32, np.dtype("<f8"): DTYPE_F64, np.dtype("u1"): DTYPE_U8}
_DTYPES = {code: dtype for dtype, code in _CODES.items()}


def _normalize(array: np.ndarray) -> np.ndarray:
    array = np.asarray(array)
    if array.dtype == np.bool_:
        array = array.astype(np.uint8)
    dtype = array.dtype.newbyteorder("<") if array.dtype.byteorder == ">" else array.dtype
    if dtype not in _CODES:
        raise FrvsFormatError(f"unsupported dtype {array.dtype}; expected float32, float64 or uint8")
    return np.ascontiguousarray(array, dtype=dtype)


def encode_frvs(tensors: Mapping[str, np.ndarray]) -> bytes:
    """
    Кодирует именованные тензоры в байты FRVS (порядок - порядок словаря).

    Raises:
        FrvsFormatError: неподдерживаемый тип, слишком длинное имя или размерность
    """
    chunks = [FRVS_MAGIC, struct.pack("<II", FRVS_VERSION, len(tensors))]
    for name, value in tensors.items():
        array = _normalize(value)
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise FrvsFormatError(f"tensor name too long: {name[:40]}...")
        if array.ndim > 0xFF:
            raise FrvsFormatError(f"{name}: too many dims ({array.ndim})")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<BB", _CODES[array.dtype], array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(array.tobytes(order="C"))
    return b"".join(chunks)


def decode_frvs(payload: bytes) -> Dict[str, np.ndarray]:
    """
    Декодирует байты FRVS.

    Raises:
        FrvsFormatError: неверная сигнатура, версия или усечённые данные
    """
    view = memoryview(payload)
    if len(view) < 12 or bytes(view[:4]) != FRVS_MAGIC:
        raise FrvsFormatError("bad magic; not an FRVS container")
    version, count = struct.unpack_from("<II", view, 4)
    if version != FRVS_VERSION:
        raise FrvsFormatError(f"unsupported FRVS version {version}")
    offset = 12
    tensors: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", view, offset)
            offset += 2
            name = bytes(view[offset:offset + name_len]).decode("utf-8")
            offset += name_len
            code, ndim = struct.unpack_from("<BB", view, offset)
            offset += 2
            if code not in _DTYPES:
                raise FrvsFormatError(f"{name}: unknown dtype code {code}")
            dims = struct.unpack_from(f"<{ndim}I", view, offset)
            offset += 4 * ndim
            dtype = _DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if offset + nbytes > len(view):
                raise FrvsFormatError(f"{name}: truncated payload")
            tensors[name] = np.frombuffer(view[offset:offset + nbytes], dtype=dtype).reshape(dims).copy()
            offset += nbytes
    except struct.error as e:
        raise FrvsFormatError(f"truncated header ({e})") from None
    if offset != len(view):
        raise FrvsFormatError(f"{len(view) - offset} trailing bytes after last tensor")
    return tensors


def write_frvs(path: Union[str, Path], tensors: Mapping[str, np.ndarray]) -> Path:
    """Атомарно записывает контейнер FRVS."""
    path = atomic_write_bytes(path, encode_frvs(tensors))
    logger.debug(f"[FRVS] записано {len(tensors)} тензоров → {path}")
    return path


def read_frvs(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    """Читает контейнер FRVS целиком."""
    try:
        return decode_frvs(read_bytes(path))
    except FrvsFormatError as e:
        raise FrvsFormatError(f"{path}: {e}") from None
