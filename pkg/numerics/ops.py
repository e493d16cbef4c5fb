# numerics/ops.py
"""
Дифференцируемые операции над NdTensor.

Каждая операция проверяет размерности (ShapeError с именем операции и обоими
списками размерностей) и конечность входов (NumericError), вычисляет
результат на numpy и регистрирует правило обратного хода на ленте.
Свёртки работают в раскладке NHWC с явным нулевым паддингом.
"""
import logging
import math
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

import config
from errors import ContractError, NumericError, ShapeError
from numerics.tensor import NdTensor, record_op

logger = logging.getLogger(__name__)

Operand = Union[NdTensor, float, int, np.ndarray]

_GELU_C = math.sqrt(2.0 / math.pi)


# ============================================================================
# Вспомогательные функции
# ============================================================================

def _check_finite(op: str, *tensors: NdTensor) -> None:
    if not config.CHECK_FINITE:
        return
    for t in tensors:
        if not np.isfinite(t.data).all():
            raise NumericError(f"{op}: non-finite input with dims {list(t.dims)}")


def _lift(value: Operand, like: Optional[NdTensor] = None) -> NdTensor:
    if isinstance(value, NdTensor):
        return value
    dtype = like.data.dtype if like is not None else None
    return NdTensor(np.asarray(value, dtype=dtype) if dtype is not None else value)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_dims(op: str, a: NdTensor, b: NdTensor) -> None:
    try:
        np.broadcast_shapes(a.dims, b.dims)
    except ValueError:
        raise ShapeError(op, a.dims, b.dims) from None


def _binary(op: str, a: Operand, b: Operand) -> Tuple[NdTensor, NdTensor]:
    like = a if isinstance(a, NdTensor) else b if isinstance(b, NdTensor) else None
    a, b = _lift(a, like), _lift(b, like)
    _broadcast_dims(op, a, b)
    _check_finite(op, a, b)
    return a, b


# ============================================================================
# Поэлементная арифметика
# ============================================================================

def add(a: Operand, b: Operand) -> NdTensor:
    a, b = _binary("add", a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.dims), _unbroadcast(g, b.dims)

    return record_op("add", a.data + b.data, (a, b), grad_fn)


def sub(a: Operand, b: Operand) -> NdTensor:
    a, b = _binary("sub", a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.dims), _unbroadcast(-g, b.dims)

    return record_op("sub", a.data - b.data, (a, b), grad_fn)


def mul(a: Operand, b: Operand) -> NdTensor:
    a, b = _binary("mul", a, b)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.dims), _unbroadcast(g * a.data, b.dims)

    return record_op("mul", a.data * b.data, (a, b), grad_fn)


def div(a: Operand, b: Operand) -> NdTensor:
    a, b = _binary("div", a, b)

    def grad_fn(g):
        return (
            _unbroadcast(g / b.data, a.dims),
            _unbroadcast(-g * a.data / (b.data * b.data), b.dims),
        )

    return record_op("div", a.data / b.data, (a, b), grad_fn)


def neg(x: NdTensor) -> NdTensor:
    _check_finite("neg", x)
    return record_op("neg", -x.data, (x,), lambda g: (-g,))


def power(x: NdTensor, exponent: float) -> NdTensor:
    """x ** exponent для неотрицательного основания (или целого показателя)."""
    _check_finite("pow", x)
    exponent = float(exponent)
    out = np.power(x.data, exponent)

    def grad_fn(g):
        return (g * exponent * np.power(x.data, exponent - 1.0),)

    return record_op("pow", out, (x,), grad_fn)


def exp(x: NdTensor) -> NdTensor:
    _check_finite("exp", x)
    out = np.exp(x.data)
    return record_op("exp", out, (x,), lambda g: (g * out,))


def log(x: NdTensor) -> NdTensor:
    _check_finite("log", x)
    if (x.data <= 0).any():
        raise NumericError("log: non-positive input")
    return record_op("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def clip(x: NdTensor, low: float, high: float) -> NdTensor:
    """Ограничение значений; градиент проходит только внутри интервала."""
    _check_finite("clip", x)
    inside = (x.data >= low) & (x.data <= high)
    return record_op("clip", np.clip(x.data, low, high), (x,), lambda g: (g * inside,))


# ============================================================================
# Активации
# ============================================================================

def relu(x: NdTensor) -> NdTensor:
    _check_finite("relu", x)
    positive = x.data > 0
    return record_op("relu", np.where(positive, x.data, 0.0), (x,), lambda g: (g * positive,))


def sigmoid(x: NdTensor) -> NdTensor:
    _check_finite("sigmoid", x)
    out = _sigmoid(x.data)
    return record_op("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(values: np.ndarray) -> np.ndarray:
    # устойчивая форма для больших |x|
    e = np.exp(-np.abs(values))
    return np.where(values >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(values.dtype, copy=False)


def log_sigmoid(x: NdTensor) -> NdTensor:
    """log σ(x) = −softplus(−x)."""
    _check_finite("log_sigmoid", x)
    out = -np.logaddexp(0.0, -x.data)
    return record_op("log_sigmoid", out, (x,), lambda g: (g * _sigmoid(-x.data),))


def silu(x: NdTensor) -> NdTensor:
    _check_finite("silu", x)
    s = _sigmoid(x.data)
    return record_op("silu", x.data * s, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),))


def tanh(x: NdTensor) -> NdTensor:
    _check_finite("tanh", x)
    out = np.tanh(x.data)
    return record_op("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def gelu(x: NdTensor) -> NdTensor:
    """GELU в tanh-аппроксимации."""
    _check_finite("gelu", x)
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v ** 3)
    th = np.tanh(inner)
    out = 0.5 * v * (1.0 + th)

    def grad_fn(g):
        d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * v * v)
        return (g * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * d_inner),)

    return record_op("gelu", out, (x,), grad_fn)


def softmax(x: NdTensor) -> NdTensor:
    """Softmax по последней оси."""
    _check_finite("softmax", x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return record_op("softmax", out, (x,), grad_fn)


def layer_norm(x: NdTensor, eps: float = 1e-6) -> NdTensor:
    """Нормализация по последней оси без аффинных параметров."""
    _check_finite("layer_norm", x)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    rstd = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * rstd

    def grad_fn(g):
        mean_g = g.mean(axis=-1, keepdims=True)
        mean_gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (rstd * (g - mean_g - xhat * mean_gx),)

    return record_op("layer_norm", xhat, (x,), grad_fn)


# ============================================================================
# Редукции
# ============================================================================

def _normalize_axis(axis, ndim: int) -> Optional[Tuple[int, ...]]:
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(a % ndim for a in axes)


def _expand_grad(g: np.ndarray, dims: Tuple[int, ...], axes, keepdims: bool) -> np.ndarray:
    if axes is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(dims)), dims)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, dims)


def sum(x: NdTensor, axis=None, keepdims: bool = False) -> NdTensor:  # noqa: A001
    _check_finite("sum", x)
    axes = _normalize_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    return record_op("sum", out, (x,), lambda g: (_expand_grad(g, x.dims, axes, keepdims).copy(),))


def mean(x: NdTensor, axis=None, keepdims: bool = False) -> NdTensor:
    _check_finite("mean", x)
    axes = _normalize_axis(axis, x.ndim)
    out = x.data.mean(axis=axes, keepdims=keepdims)
    count = x.size if axes is None else int(np.prod([x.dims[a] for a in axes]))

    def grad_fn(g):
        return (_expand_grad(g, x.dims, axes, keepdims) / count,)

    return record_op("mean", out, (x,), grad_fn)


# ============================================================================
# Форма
# ============================================================================

def reshape(x: NdTensor, dims: Sequence[int]) -> NdTensor:
    dims = tuple(int(d) for d in dims)
    if -1 in dims:
        known = int(np.prod([d for d in dims if d != -1]))
        if known == 0 or x.size % known:
            raise ShapeError("reshape", x.dims, dims)
        dims = tuple(x.size // known if d == -1 else d for d in dims)
    if int(np.prod(dims)) != x.size:
        raise ShapeError("reshape", x.dims, dims)
    _check_finite("reshape", x)
    return record_op("reshape", x.data.reshape(dims), (x,), lambda g: (g.reshape(x.dims),))


def transpose(x: NdTensor, axes: Sequence[int]) -> NdTensor:
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError("transpose", x.dims, axes, detail="axes are not a permutation")
    _check_finite("transpose", x)
    inverse = tuple(np.argsort(axes))
    return record_op("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def slice(x: NdTensor, index) -> NdTensor:  # noqa: A001
    """Срез/индексирование; обратный ход накапливает градиент по индексу."""
    _check_finite("slice", x)
    try:
        out = x.data[index]
    except IndexError as e:
        raise ShapeError("slice", x.dims, detail=str(e)) from None

    def grad_fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return record_op("slice", np.array(out, copy=True), (x,), grad_fn)


def concat(tensors: Sequence[NdTensor], axis: int = -1) -> NdTensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat: empty input list")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.dims[i] != tensors[0].dims[i] for i in range(ndim) if i != axis):
            raise ShapeError("concat", tensors[0].dims, t.dims, detail=f"axis={axis}")
    _check_finite("concat", *tensors)
    bounds = np.cumsum([t.dims[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record_op("concat", out, tensors, grad_fn)


# ============================================================================
# Линейная алгебра и эмбеддинги
# ============================================================================

def matmul(a: NdTensor, b: NdTensor) -> NdTensor:
    """Пакетное матричное умножение (оба операнда ранга ≥ 2)."""
    if a.ndim < 2 or b.ndim < 2 or a.dims[-1] != b.dims[-2]:
        raise ShapeError("matmul", a.dims, b.dims)
    try:
        np.broadcast_shapes(a.dims[:-2], b.dims[:-2])
    except ValueError:
        raise ShapeError("matmul", a.dims, b.dims, detail="batch dims") from None
    _check_finite("matmul", a, b)

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.dims), _unbroadcast(gb, b.dims)

    return record_op("matmul", np.matmul(a.data, b.data), (a, b), grad_fn)


def embedding(table: NdTensor, ids) -> NdTensor:
    """
    Выбор строк таблицы по целочисленным индексам.

    Raises:
        ContractError: индекс вне словаря
    """
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ContractError(f"embedding: token ids must be integers, got {ids.dtype}")
    if table.ndim != 2:
        raise ShapeError("embedding", table.dims, ids.shape, detail="table must be 2-D")
    if ids.size and (ids.min() < 0 or ids.max() >= table.dims[0]):
        raise ContractError(f"embedding: token id out of vocabulary [0, {table.dims[0]})")
    _check_finite("embedding", table)

    def grad_fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return record_op("embedding", table.data[ids], (table,), grad_fn)


# ============================================================================
# Свёртки (NHWC, ядро kh×kw×Cin×Cout)
# ============================================================================

def _conv_padding(kernel: int, padding: str) -> int:
    if padding == "same":
        return (kernel - 1) // 2
    if padding == "valid":
        return 0
    raise ContractError(f"conv2d: padding must be 'same' or 'valid', got {padding!r}")


def conv2d(x: NdTensor, w: NdTensor, b: Optional[NdTensor] = None, stride: int = 1, padding: str = "same") -> NdTensor:
    """
    Двумерная свёртка с шагом 1 или 2 и явным нулевым паддингом.

    Args:
        x: вход N×H×W×Cin
        w: ядро kh×kw×Cin×Cout
        b: смещение Cout (необязательно)
        stride: 1 или 2
        padding: "same" или "valid"
    """
    if x.ndim != 4 or w.ndim != 4 or x.dims[3] != w.dims[2]:
        raise ShapeError("conv2d", x.dims, w.dims)
    if b is not None and b.dims != (w.dims[3],):
        raise ShapeError("conv2d", w.dims, b.dims, detail="bias")
    if stride not in (1, 2):
        raise ContractError(f"conv2d: stride must be 1 or 2, got {stride}")
    _check_finite("conv2d", x, w, *([b] if b is not None else []))

    n, h, wd, cin = x.dims
    kh, kw, _, cout = w.dims
    pad_h, pad_w = _conv_padding(kh, padding), _conv_padding(kw, padding)
    xp = np.pad(x.data, ((0, 0), (pad_h, pad_h), (pad_w, pad_w), (0, 0)))
    hp, wp = xp.shape[1], xp.shape[2]
    if hp < kh or wp < kw:
        raise ShapeError("conv2d", x.dims, w.dims, detail="kernel larger than padded input")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1

    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = (cols @ wmat).reshape(n, ho, wo, cout)
    if b is not None:
        out = out + b.data

    def grad_fn(g):
        g2 = g.reshape(n * ho * wo, cout)
        gw = (cols.T @ g2).reshape(kh, kw, cin, cout)
        gcols = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, pad_h:pad_h + h, pad_w:pad_w + wd, :]
        grads = [gx, gw]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return record_op("conv2d", out, parents, grad_fn)


def conv_transpose2d(x: NdTensor, w: NdTensor, b: Optional[NdTensor] = None, stride: int = 2, padding: int = 1) -> NdTensor:
    """
    Транспонированная свёртка: выход (H−1)·s + k − 2p по каждой оси.
    При k=4, s=2, p=1 - точное двукратное увеличение.

    Args:
        x: вход N×H×W×Cin
        w: ядро kh×kw×Cin×Cout
    """
    if x.ndim != 4 or w.ndim != 4 or x.dims[3] != w.dims[2]:
        raise ShapeError("transposed-conv2d", x.dims, w.dims)
    if b is not None and b.dims != (w.dims[3],):
        raise ShapeError("transposed-conv2d", w.dims, b.dims, detail="bias")
    _check_finite("transposed-conv2d", x, w, *([b] if b is not None else []))

    n, h, wd, cin = x.dims
    kh, kw, _, cout = w.dims
    full_h, full_w = (h - 1) * stride + kh, (wd - 1) * stride + kw
    out_h, out_w = full_h - 2 * padding, full_w - 2 * padding
    if out_h < 1 or out_w < 1:
        raise ShapeError("transposed-conv2d", x.dims, w.dims, detail="empty output")

    x2 = x.data.reshape(n * h * wd, cin)
    wmat = np.ascontiguousarray(w.data.transpose(2, 0, 1, 3)).reshape(cin, kh * kw * cout)
    contrib = (x2 @ wmat).reshape(n, h, wd, kh, kw, cout)
    full = np.zeros((n, full_h, full_w, cout), dtype=contrib.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, i:i + stride * (h - 1) + 1:stride, j:j + stride * (wd - 1) + 1:stride, :] += contrib[:, :, :, i, j, :]
    out = full[:, padding:padding + out_h, padding:padding + out_w, :]
    if b is not None:
        out = out + b.data

    def grad_fn(g):
        gfull = np.zeros((n, full_h, full_w, cout), dtype=g.dtype)
        gfull[:, padding:padding + out_h, padding:padding + out_w, :] = g
        gcontrib = np.empty((n, h, wd, kh, kw, cout), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gcontrib[:, :, :, i, j, :] = gfull[:, i:i + stride * (h - 1) + 1:stride, j:j + stride * (wd - 1) + 1:stride, :]
        gc2 = gcontrib.reshape(n * h * wd, kh * kw * cout)
        gx = (gc2 @ wmat.T).reshape(n, h, wd, cin)
        gw = (x2.T @ gc2).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.reshape(-1, cout).sum(axis=0))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return record_op("transposed-conv2d", np.ascontiguousarray(out), parents, grad_fn)


# ============================================================================
# Диспетчер операций
# ============================================================================

OPS: Dict[str, Callable[..., NdTensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "pow": power,
    "exp": exp,
    "log": log,
    "clip": clip,
    "matmul": matmul,
    "conv2d": conv2d,
    "transposed-conv2d": conv_transpose2d,
    "relu": relu,
    "gelu": gelu,
    "silu": silu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "log_sigmoid": log_sigmoid,
    "softmax": softmax,
    "layer-norm": layer_norm,
    "mean": mean,
    "sum": sum,
    "concat": concat,
    "slice": slice,
    "reshape": reshape,
    "transpose": transpose,
    "embedding-lookup": embedding,
}


def forward_op(kind: str, *inputs, **params) -> NdTensor:
    """
    Выполняет операцию по её имени.

    Args:
        kind: имя операции (ключ OPS)
        *inputs: входные тензоры (для concat - один список)
        **params: параметры операции (axis, stride, padding, ...)

    Raises:
        ContractError: неизвестная операция
    """
    if kind not in OPS:
        raise ContractError(f"unknown op kind {kind!r}; known: {', '.join(sorted(OPS))}")
    return OPS[kind](*inputs, **params)
