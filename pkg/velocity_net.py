# velocity_net.py
"""
Сеть поля скорости v([z_t, z_0], c, t): небольшой трансформер над патчами латента.

Латент T×h×w×Cin режется на патчи 1×2×2 (токены), каждый блок - самовнимание
по токенам, перекрёстное внимание к K слотам запроса и MLP. Все три подслоя
модулируются adaLN от (эмбеддинг времени + среднее по слотам запроса).
Проекции модуляции инициализируются нулями.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from constants import QUERY_SLOTS, VOCAB_SIZE
from errors import ContractError, ShapeError
from numerics import ops
from numerics.layers import ParamDict, linear, make_params, param_count, trunc_normal, zeros
from numerics.tensor import NdTensor, default_dtype
from shapes.query import embed_tokens

logger = logging.getLogger(__name__)

INIT_STD = 0.02
TIME_SCALE = 1000.0
PATCH = 2


@dataclass(frozen=True)
class NetConfig:
    """
    Архитектура сети скорости.

    Attributes:
        width: ширина модели D
        in_channels: C или 2C (при прямой подаче видео)
        out_channels: C
        frames, latent_height, latent_width: размер латента T×h×w
    """

    width: int = 128
    blocks: int = 4
    heads: int = 4
    in_channels: int = 16
    out_channels: int = 8
    slots: int = QUERY_SLOTS
    vocab: int = VOCAB_SIZE
    time_features: int = 64
    mlp_ratio: int = 4
    frames: int = 8
    latent_height: int = 8
    latent_width: int = 8

    def __post_init__(self):
        if self.width % self.heads:
            raise ContractError(f"NetConfig: width {self.width} not divisible by heads {self.heads}")
        if self.latent_height % PATCH or self.latent_width % PATCH:
            raise ContractError("NetConfig: latent height and width must be even (2×2 patches)")
        if self.time_features % 2:
            raise ContractError("NetConfig: time_features must be even")

    @property
    def tokens(self) -> int:
        return self.frames * (self.latent_height // PATCH) * (self.latent_width // PATCH)

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @classmethod
    def from_run_config(cls, config, dvi: Optional[bool] = None) -> "NetConfig":
        """NetConfig из RunConfig; dvi=None берёт флаг из конфигурации."""
        dvi = config.dvi if dvi is None else dvi
        channels = config.latent_channels
        return cls(
            width=config.model_width,
            blocks=config.blocks,
            heads=config.heads,
            in_channels=2 * channels if dvi else channels,
            out_channels=channels,
            time_features=config.time_features,
            mlp_ratio=config.mlp_ratio,
            frames=config.frames,
            latent_height=config.height // 4,
            latent_width=config.width // 4,
        )


# ============================================================================
# Инициализация
# ============================================================================

def init_params(config: NetConfig, seed: int) -> ParamDict:
    """
    Параметры сети: усечённое нормальное (σ = 0.02), смещения нулевые,
    проекции модуляции adaLN нулевые (блок в начале - тождество плюс пропуск).
    """
    rng = np.random.default_rng(seed)
    d = config.width
    hidden = d * config.mlp_ratio
    patch_in = PATCH * PATCH * config.in_channels
    patch_out = PATCH * PATCH * config.out_channels
    arrays = {
        "patch.w": trunc_normal(rng, (patch_in, d), INIT_STD),
        "patch.b": zeros((d,)),
        "pos": trunc_normal(rng, (config.tokens, d), INIT_STD),
        "time.fc1.w": trunc_normal(rng, (config.time_features, d), INIT_STD),
        "time.fc1.b": zeros((d,)),
        "time.fc2.w": trunc_normal(rng, (d, d), INIT_STD),
        "time.fc2.b": zeros((d,)),
        "cond.table": trunc_normal(rng, (config.vocab, d), INIT_STD),
    }
    for i in range(config.blocks):
        p = f"blocks.{i}"
        arrays.update({
            f"{p}.mod.w": zeros((d, 6 * d)),
            f"{p}.mod.b": zeros((6 * d,)),
            f"{p}.attn.qkv.w": trunc_normal(rng, (d, 3 * d), INIT_STD),
            f"{p}.attn.qkv.b": zeros((3 * d,)),
            f"{p}.attn.out.w": trunc_normal(rng, (d, d), INIT_STD),
            f"{p}.attn.out.b": zeros((d,)),
            f"{p}.cross.q.w": trunc_normal(rng, (d, d), INIT_STD),
            f"{p}.cross.q.b": zeros((d,)),
            f"{p}.cross.kv.w": trunc_normal(rng, (d, 2 * d), INIT_STD),
            f"{p}.cross.kv.b": zeros((2 * d,)),
            f"{p}.cross.out.w": trunc_normal(rng, (d, d), INIT_STD),
            f"{p}.cross.out.b": zeros((d,)),
            f"{p}.mlp.fc1.w": trunc_normal(rng, (d, hidden), INIT_STD),
            f"{p}.mlp.fc1.b": zeros((hidden,)),
            f"{p}.mlp.fc2.w": trunc_normal(rng, (hidden, d), INIT_STD),
            f"{p}.mlp.fc2.b": zeros((d,)),
        })
    arrays.update({
        "final.mod.w": zeros((d, 2 * d)),
        "final.mod.b": zeros((2 * d,)),
        "final.out.w": trunc_normal(rng, (d, patch_out), INIT_STD),
        "final.out.b": zeros((patch_out,)),
    })
    params = make_params(arrays)
    logger.info(f"[FLOW] ✓ Сеть скорости: {param_count(params):,} параметров, {config.tokens} токенов")
    return params


# ============================================================================
# Патчи и время
# ============================================================================

def patchify(z: NdTensor, config: NetConfig) -> NdTensor:
    """B×T×h×w×C → B×N×(4C)."""
    b, t, h, w, c = z.dims
    x = ops.reshape(z, (b, t, h // PATCH, PATCH, w // PATCH, PATCH, c))
    x = ops.transpose(x, (0, 1, 2, 4, 3, 5, 6))
    return ops.reshape(x, (b, config.tokens, PATCH * PATCH * c))


def unpatchify(x: NdTensor, config: NetConfig) -> NdTensor:
    """B×N×(4C) → B×T×h×w×C."""
    b = x.dims[0]
    hp, wp = config.latent_height // PATCH, config.latent_width // PATCH
    x = ops.reshape(x, (b, config.frames, hp, wp, PATCH, PATCH, config.out_channels))
    x = ops.transpose(x, (0, 1, 2, 4, 3, 5, 6))
    return ops.reshape(x, (b, config.frames, config.latent_height, config.latent_width, config.out_channels))


def timestep_features(t: np.ndarray, size: int = 64) -> np.ndarray:
    """Синусоидальные признаки времени: [cos(1000·t·f_i), sin(1000·t·f_i)]."""
    half = size // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64).reshape(-1, 1) * TIME_SCALE * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1).astype(default_dtype())


def time_embedding(params: ParamDict, t: np.ndarray, config: NetConfig) -> NdTensor:
    """Время (B,) → эмбеддинг B×D (признаки → Linear → SiLU → Linear)."""
    feats = NdTensor(timestep_features(t, config.time_features))
    h = ops.silu(linear(feats, params["time.fc1.w"], params["time.fc1.b"]))
    return linear(h, params["time.fc2.w"], params["time.fc2.b"])


# ============================================================================
# Блоки
# ============================================================================

def _modulate(x: NdTensor, shift: NdTensor, scale: NdTensor) -> NdTensor:
    return ops.add(ops.mul(ops.layer_norm(x), ops.add(scale, 1.0)), shift)


def _split_heads(x: NdTensor, heads: int) -> NdTensor:
    b, n, d = x.dims
    return ops.transpose(ops.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: NdTensor) -> NdTensor:
    b, h, n, dh = x.dims
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def attention(q: NdTensor, k: NdTensor, v: NdTensor, heads: int) -> NdTensor:
    """Многоголовое внимание softmax(q·kᵀ/√d_h)·v; q: B×N×D, k и v: B×M×D."""
    qh, kh, vh = (_split_heads(x, heads) for x in (q, k, v))
    scores = ops.mul(ops.matmul(qh, ops.transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(qh.dims[-1]))
    return _merge_heads(ops.matmul(ops.softmax(scores), vh))


def _block(params: ParamDict, prefix: str, x: NdTensor, cond: NdTensor, sc: NdTensor,
           config: NetConfig) -> NdTensor:
    d = config.width
    p = lambda name: params[f"{prefix}.{name}"]  # noqa: E731
    mod = ops.reshape(linear(sc, p("mod.w"), p("mod.b")), (sc.dims[0], 6, d))
    shift_sa, scale_sa, shift_ca, scale_ca, shift_mlp, scale_mlp = (mod[:, i:i + 1, :] for i in range(6))

    h = _modulate(x, shift_sa, scale_sa)
    qkv = linear(h, p("attn.qkv.w"), p("attn.qkv.b"))
    q, k, v = (qkv[:, :, i * d:(i + 1) * d] for i in range(3))
    x = ops.add(x, linear(attention(q, k, v, config.heads), p("attn.out.w"), p("attn.out.b")))

    h = _modulate(x, shift_ca, scale_ca)
    q = linear(h, p("cross.q.w"), p("cross.q.b"))
    kv = linear(cond, p("cross.kv.w"), p("cross.kv.b"))
    k, v = kv[:, :, :d], kv[:, :, d:]
    x = ops.add(x, linear(attention(q, k, v, config.heads), p("cross.out.w"), p("cross.out.b")))

    h = _modulate(x, shift_mlp, scale_mlp)
    h = ops.gelu(linear(h, p("mlp.fc1.w"), p("mlp.fc1.b")))
    return ops.add(x, linear(h, p("mlp.fc2.w"), p("mlp.fc2.b")))


# ============================================================================
# Прямой проход
# ============================================================================

def _batch_time(t: Union[float, np.ndarray], batch: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if t.size == 1:
        t = np.full(batch, float(t[0]))
    if t.size != batch:
        raise ShapeError("forward", (batch,), t.shape, detail="one timestep per batch item")
    if (t < 0.0).any() or (t > 1.0).any():
        raise ContractError("forward: timestep must lie in [0, 1]")
    return t


def forward(params: ParamDict, z_in: Union[np.ndarray, NdTensor], token_ids, t,
            config: NetConfig) -> NdTensor:
    """
    Скорость для состояния z_in (C или 2C каналов) при запросе token_ids и времени t.

    Args:
        z_in: B×T×h×w×Cin (или T×h×w×Cin без оси пакета)
        token_ids: B×K (или K) идентификаторы токенов запроса
        t: скаляр или вектор (B,) в [0, 1]

    Returns:
        NdTensor: скорость B×T×h×w×C (без оси пакета, если её не было на входе)

    Raises:
        ShapeError: число каналов или размер латента не совпадает с NetConfig
    """
    if not isinstance(z_in, NdTensor):
        z_in = NdTensor(np.asarray(z_in, dtype=default_dtype()))
    unbatched = z_in.ndim == 4
    if unbatched:
        z_in = ops.reshape(z_in, (1,) + z_in.dims)
    expected = (config.frames, config.latent_height, config.latent_width, config.in_channels)
    if z_in.ndim != 5 or z_in.dims[1:] != expected:
        raise ShapeError("velocity forward", z_in.dims, (-1,) + expected,
                         detail=f"expected {config.in_channels} input channels")
    batch = z_in.dims[0]
    ids = np.asarray(token_ids).reshape(-1, config.slots)
    if len(ids) == 1 and batch > 1:
        ids = np.repeat(ids, batch, axis=0)
    if len(ids) != batch:
        raise ShapeError("velocity forward", (batch, config.slots), ids.shape, detail="token ids per batch item")

    x = ops.add(linear(patchify(z_in, config), params["patch.w"], params["patch.b"]), params["pos"])
    cond = embed_tokens(params["cond.table"], ids)
    c_vec = ops.add(time_embedding(params, _batch_time(t, batch), config), ops.mean(cond, axis=1))
    sc = ops.silu(c_vec)

    for i in range(config.blocks):
        x = _block(params, f"blocks.{i}", x, cond, sc, config)

    mod = ops.reshape(linear(sc, params["final.mod.w"], params["final.mod.b"]), (batch, 2, config.width))
    x = _modulate(x, mod[:, 0:1, :], mod[:, 1:2, :])
    out = unpatchify(linear(x, params["final.out.w"], params["final.out.b"]), config)
    if unbatched:
        out = ops.reshape(out, out.dims[1:])
    return out


def modulation_params(params: ParamDict) -> Tuple[str, ...]:
    """Имена параметров проекций модуляции adaLN."""
    return tuple(name for name in params if name.endswith(".mod.w") or name.endswith(".mod.b"))
