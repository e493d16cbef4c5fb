# codec/model.py
"""
Стохастический свёрточный автоэнкодер (покадровый, сжатие 4× по пространству).

Кодер: conv3×3 → conv3×3/2 → conv3×3/2 → conv3×3 в 2·C каналов (среднее, log-дисперсия).
Декодер: conv3×3 → convT4×4/2 → convT4×4/2 → conv3×3 в 3 канала (логиты RGB);
логит маски стратегий frozen и conv-head - среднее логитов RGB.
Conv-head: два слоя 3×3 поверх логита замороженного декодера (остаточная добавка).
Finetuned: копия декодера с одноканальным выходным слоем (логит маски).
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from constants import (
    LOGVAR_MAX,
    LOGVAR_MIN,
    STRATEGY_CONV_HEAD,
    STRATEGY_FINETUNED,
    STRATEGY_FROZEN,
)
from errors import ContractError, ShapeError
from numerics import ops
from numerics.layers import ParamDict, freeze, he_normal, make_params, zeros
from numerics.tensor import NdTensor, default_dtype

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, NdTensor]


@dataclass
class CodecParams:
    """
    Параметры кодека.

    Attributes:
        encoder: кодер (заморожен после предобучения)
        decoder: декодер предобучения (стратегия frozen)
        head: conv-head поверх замороженного декодера (стратегия conv-head)
        finetuned: дообученная копия декодера с одноканальным выходом (стратегия finetuned)
        mu, sigma: поканальные константы нормализации латентов
    """

    latent_channels: int
    width: int
    encoder: ParamDict
    decoder: ParamDict
    head: Optional[ParamDict] = None
    finetuned: Optional[ParamDict] = None
    mu: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None
    head_channels: int = 16

    def strategies(self) -> Tuple[str, ...]:
        available = [STRATEGY_FROZEN]
        if self.head is not None:
            available.append(STRATEGY_CONV_HEAD)
        if self.finetuned is not None:
            available.append(STRATEGY_FINETUNED)
        return tuple(available)

    def has_constants(self) -> bool:
        return self.mu is not None and self.sigma is not None


# ============================================================================
# Инициализация
# ============================================================================

def _conv(rng: np.random.Generator, k: int, cin: int, cout: int) -> Tuple[np.ndarray, np.ndarray]:
    return he_normal(rng, (k, k, cin, cout), fan_in=k * k * cin), zeros((cout,))


def init_encoder(rng: np.random.Generator, width: int, channels: int) -> ParamDict:
    arrays = {}
    for name, (k, cin, cout) in {
        "enc.conv_in": (3, 3, width),
        "enc.down1": (3, width, width),
        "enc.down2": (3, width, 2 * width),
        "enc.out": (3, 2 * width, 2 * channels),
    }.items():
        arrays[f"{name}.w"], arrays[f"{name}.b"] = _conv(rng, k, cin, cout)
    # небольшие начальные log-дисперсии
    arrays["enc.out.w"] = arrays["enc.out.w"] * 0.1
    return make_params(arrays)


def init_decoder(rng: np.random.Generator, width: int, channels: int, prefix: str = "dec") -> ParamDict:
    arrays = {}
    for name, (k, cin, cout) in {
        "conv_in": (3, channels, 2 * width),
        "up1": (4, 2 * width, width),
        "up2": (4, width, width),
        "out": (3, width, 3),
    }.items():
        arrays[f"{prefix}.{name}.w"], arrays[f"{prefix}.{name}.b"] = _conv(rng, k, cin, cout)
    return make_params(arrays)


def init_head(rng: np.random.Generator, channels: int = 16) -> ParamDict:
    """Conv-head; последний слой нулевой, поэтому в начале head не меняет логит."""
    w1, b1 = _conv(rng, 3, 1, channels)
    return make_params({
        "head.conv1.w": w1,
        "head.conv1.b": b1,
        "head.conv2.w": zeros((3, 3, channels, 1)),
        "head.conv2.b": zeros((1,)),
    })


def init_codec(seed: int, latent_channels: int = 8, width: int = 32, head_channels: int = 16) -> CodecParams:
    rng = np.random.default_rng(seed)
    encoder = init_encoder(rng, width, latent_channels)
    decoder = init_decoder(rng, width, latent_channels)
    return CodecParams(latent_channels, width, encoder, decoder, head_channels=head_channels)


def init_mask_decoder(decoder: ParamDict, prefix: str = "finetuned") -> ParamDict:
    """
    Копия декодера (dec.* → finetuned.*) с одноканальным выходом.

    Выходной слой - среднее трёх RGB-фильтров, поэтому в начале логит
    совпадает с логитом стратегии frozen.
    """
    arrays = {prefix + name[name.index("."):]: p.data.copy() for name, p in decoder.items()}
    arrays[f"{prefix}.out.w"] = arrays[f"{prefix}.out.w"].mean(axis=-1, keepdims=True)
    arrays[f"{prefix}.out.b"] = arrays[f"{prefix}.out.b"].mean(keepdims=True)
    return make_params(arrays)


# ============================================================================
# Кодер
# ============================================================================

def _as_tensor(x: ArrayLike) -> NdTensor:
    if isinstance(x, NdTensor):
        return x
    return NdTensor(np.asarray(x, dtype=default_dtype()))


def lift_mask(mask: np.ndarray) -> np.ndarray:
    """Маска (..., H, W) → трёхканальное бинарное видео (..., H, W, 3)."""
    binary = (np.asarray(mask) > 0).astype(default_dtype())
    return np.repeat(binary[..., None], 3, axis=-1)


def encode(x: ArrayLike, codec: CodecParams) -> Tuple[NdTensor, NdTensor]:
    """
    Кодирует видео (..., H, W, 3) или маску (..., H, W) покадрово.

    Returns:
        (mean, logvar) размерности (..., H/4, W/4, C)

    Raises:
        ShapeError: H или W не делятся на 4
    """
    if not isinstance(x, NdTensor):
        x = np.asarray(x)
        if x.dtype == np.uint8 or x.dtype == np.bool_ or x.shape[-1] != 3:
            x = lift_mask(x)
    x = _as_tensor(x)
    if x.ndim < 3 or x.dims[-1] != 3:
        raise ShapeError("encode", x.dims, (-1, -1, 3), detail="expected (..., H, W, 3)")
    *lead, height, width, _ = x.dims
    if height % 4 or width % 4:
        raise ShapeError("encode", x.dims, (-1, 4 * (height // 4), 4 * (width // 4), 3),
                         detail="spatial dims must be divisible by 4")
    p = codec.encoder
    h = ops.reshape(x, (-1, height, width, 3))
    h = ops.silu(ops.conv2d(h, p["enc.conv_in.w"], p["enc.conv_in.b"]))
    h = ops.silu(ops.conv2d(h, p["enc.down1.w"], p["enc.down1.b"], stride=2))
    h = ops.silu(ops.conv2d(h, p["enc.down2.w"], p["enc.down2.b"], stride=2))
    h = ops.conv2d(h, p["enc.out.w"], p["enc.out.b"])
    c = codec.latent_channels
    out_dims = tuple(lead) + (height // 4, width // 4, c)
    mean = ops.reshape(h[:, :, :, :c], out_dims)
    logvar = ops.reshape(ops.clip(h[:, :, :, c:], LOGVAR_MIN, LOGVAR_MAX), out_dims)
    return mean, logvar


def sample_posterior(mean: ArrayLike, logvar: ArrayLike, rng: np.random.Generator) -> np.ndarray:
    """
    mean + exp(logvar/2)·ε, ε ~ N(0, 1) из rng.

    log-дисперсия на нижней границе LOGVAR_MIN (и ниже) означает нулевую дисперсию.
    """
    mean = mean.data if isinstance(mean, NdTensor) else np.asarray(mean)
    logvar = logvar.data if isinstance(logvar, NdTensor) else np.asarray(logvar)
    logvar = np.clip(logvar, LOGVAR_MIN, LOGVAR_MAX)
    std = np.where(logvar <= LOGVAR_MIN, 0.0, np.exp(0.5 * logvar)).astype(mean.dtype)
    eps = rng.standard_normal(mean.shape).astype(mean.dtype)
    return mean + std * eps


# ============================================================================
# Нормализация латентов
# ============================================================================

def _check_constants(mu, sigma) -> Tuple[np.ndarray, np.ndarray]:
    if mu is None or sigma is None:
        raise ContractError("latent normalization constants are not computed")
    sigma = np.asarray(sigma)
    if not (sigma > 0).all():
        raise ContractError("latent normalization: sigma must be > 0 for every channel")
    return np.asarray(mu), sigma


def normalize_latent(z: ArrayLike, mu: np.ndarray, sigma: np.ndarray) -> ArrayLike:
    """(z − μ̂)/σ̂ по каналам."""
    mu, sigma = _check_constants(mu, sigma)
    if isinstance(z, NdTensor):
        return ops.div(ops.sub(z, mu.astype(z.dtype)), sigma.astype(z.dtype))
    z = np.asarray(z)
    return ((z - mu) / sigma).astype(z.dtype)


def denormalize_latent(z: ArrayLike, mu: np.ndarray, sigma: np.ndarray) -> ArrayLike:
    """Обратное к normalize_latent: z·σ̂ + μ̂."""
    mu, sigma = _check_constants(mu, sigma)
    if isinstance(z, NdTensor):
        return ops.add(ops.mul(z, sigma.astype(z.dtype)), mu.astype(z.dtype))
    z = np.asarray(z)
    return (z * sigma + mu).astype(z.dtype)


def latent_statistics(means: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Поканальные среднее и стандартное отклонение по корпусу латентов (..., C)."""
    flat = np.asarray(means, dtype=np.float64).reshape(-1, means.shape[-1])
    mu = flat.mean(axis=0)
    sigma = flat.std(axis=0)
    dead = sigma < 1e-6
    if dead.any():
        logger.warning(f"[CODEC] ⚠️ Вырожденные каналы латента: {np.flatnonzero(dead).tolist()}")
        sigma = np.where(dead, 1.0, sigma)
    return mu.astype(np.float32), sigma.astype(np.float32)


# ============================================================================
# Декодер
# ============================================================================

def _decoder_stack(z: NdTensor, p: ParamDict, prefix: str) -> NdTensor:
    h = ops.silu(ops.conv2d(z, p[f"{prefix}.conv_in.w"], p[f"{prefix}.conv_in.b"]))
    h = ops.silu(ops.conv_transpose2d(h, p[f"{prefix}.up1.w"], p[f"{prefix}.up1.b"]))
    h = ops.silu(ops.conv_transpose2d(h, p[f"{prefix}.up2.w"], p[f"{prefix}.up2.b"]))
    return ops.conv2d(h, p[f"{prefix}.out.w"], p[f"{prefix}.out.b"])


def decode_rgb_logits(z: ArrayLike, codec: CodecParams, decoder: Optional[ParamDict] = None,
                      prefix: str = "dec") -> NdTensor:
    """Логиты RGB (N, H, W, 3) для латентов (N, h, w, C)."""
    z = _as_tensor(z)
    return _decoder_stack(z, decoder if decoder is not None else codec.decoder, prefix)


def decode_logits(z: ArrayLike, codec: CodecParams, strategy: str = STRATEGY_FINETUNED,
                  overrides: Optional[ParamDict] = None) -> NdTensor:
    """
    Логиты маски (..., H, W) для латентов (..., h, w, C).

    Args:
        overrides: обучаемые параметры стратегии (head.* или finetuned.*) вместо сохранённых

    Raises:
        ContractError: неизвестная или не обученная стратегия
        ShapeError: число каналов латента не совпадает с кодеком
    """
    z = _as_tensor(z)
    if z.ndim < 3 or z.dims[-1] != codec.latent_channels:
        raise ShapeError("decode", z.dims, (-1, -1, codec.latent_channels))
    *lead, h, w, c = z.dims
    flat = ops.reshape(z, (-1, h, w, c))
    if strategy == STRATEGY_FROZEN:
        logits = ops.mean(_decoder_stack(flat, codec.decoder, "dec"), axis=-1, keepdims=True)
    elif strategy == STRATEGY_CONV_HEAD:
        head = overrides if overrides is not None else codec.head
        if head is None:
            raise ContractError("decode: conv-head strategy requested but no head is trained")
        base = ops.mean(_decoder_stack(flat, codec.decoder, "dec"), axis=-1, keepdims=True)
        hidden = ops.silu(ops.conv2d(base, head["head.conv1.w"], head["head.conv1.b"]))
        logits = ops.add(base, ops.conv2d(hidden, head["head.conv2.w"], head["head.conv2.b"]))
    elif strategy == STRATEGY_FINETUNED:
        decoder = overrides if overrides is not None else codec.finetuned
        if decoder is None:
            raise ContractError("decode: finetuned strategy requested but the decoder is not finetuned")
        logits = _decoder_stack(flat, decoder, "finetuned")
        if logits.dims[-1] != 1:
            raise ShapeError("decode", logits.dims, (-1, 4 * h, 4 * w, 1), detail="finetuned decoder must emit one channel")
    else:
        raise ContractError(f"decode: unknown strategy {strategy!r}")
    return ops.reshape(logits, tuple(lead) + (4 * h, 4 * w))


def decode(z: ArrayLike, codec: CodecParams, strategy: str = STRATEGY_FINETUNED) -> NdTensor:
    """Вероятности маски (..., H, W) в [0, 1]: сигмоида логитов выбранной стратегии."""
    return ops.sigmoid(decode_logits(z, codec, strategy))


def frozen(codec: CodecParams) -> CodecParams:
    """Копия кодека с замороженными параметрами всех частей."""
    return CodecParams(
        codec.latent_channels,
        codec.width,
        freeze(codec.encoder),
        freeze(codec.decoder),
        None if codec.head is None else freeze(codec.head),
        None if codec.finetuned is None else freeze(codec.finetuned),
        codec.mu,
        codec.sigma,
        codec.head_channels,
    )
