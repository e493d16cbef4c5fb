# numerics/layers.py
"""
Строительные блоки сетей: инициализация параметров и типовые слои.

Параметры хранятся в плоском словаре «имя → NdTensor»; имена с точками
(`enc.conv1.w`) совпадают с именами тензоров в чекпоинтах FRVS.
"""
import hashlib
from typing import Dict, Mapping, Optional

import numpy as np

from numerics import ops
from numerics.tensor import NdTensor, default_dtype

ParamDict = Dict[str, NdTensor]


def trunc_normal(rng: np.random.Generator, dims, std: float = 0.02) -> np.ndarray:
    """Усечённое нормальное распределение (|x| ≤ 2σ)."""
    values = rng.standard_normal(dims)
    outside = np.abs(values) > 2.0
    while outside.any():
        values[outside] = rng.standard_normal(int(outside.sum()))
        outside = np.abs(values) > 2.0
    return (values * std).astype(default_dtype())


def he_normal(rng: np.random.Generator, dims, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(dims) * np.sqrt(2.0 / fan_in)).astype(default_dtype())


def zeros(dims) -> np.ndarray:
    return np.zeros(dims, dtype=default_dtype())


def make_params(arrays: Mapping[str, np.ndarray], trainable: bool = True) -> ParamDict:
    return {name: NdTensor(value, requires_grad=trainable, name=name) for name, value in arrays.items()}


def linear(x: NdTensor, w: NdTensor, b: Optional[NdTensor] = None) -> NdTensor:
    """x @ w (+ b) по последней оси."""
    out = ops.matmul(x, w) if x.ndim >= 2 else ops.matmul(ops.reshape(x, (1, -1)), w)
    return out if b is None else ops.add(out, b)


def param_count(params: Mapping[str, NdTensor]) -> int:
    return int(sum(p.size for p in params.values()))


def params_digest(params: Mapping[str, NdTensor]) -> str:
    """SHA-256 по именам и байтам параметров (контроль заморозки)."""
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()


def freeze(params: Mapping[str, NdTensor]) -> ParamDict:
    return {name: NdTensor(p.data, requires_grad=False, name=name) for name, p in params.items()}


def unfreeze(params: Mapping[str, NdTensor]) -> ParamDict:
    return {name: NdTensor(p.data.copy(), requires_grad=True, name=name) for name, p in params.items()}


def with_prefix(params: Mapping[str, NdTensor], prefix: str) -> ParamDict:
    return {name: p for name, p in params.items() if name.startswith(prefix)}


def cast_params(params: Mapping[str, NdTensor], dtype) -> ParamDict:
    return {name: NdTensor(p.data.astype(dtype), requires_grad=p.requires_grad, name=name) for name, p in params.items()}


def merge(*dicts: Mapping[str, NdTensor]) -> ParamDict:
    out: ParamDict = {}
    for d in dicts:
        out.update(d)
    return out
