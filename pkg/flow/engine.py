# flow/engine.py
"""
Поток латент видео → латент маски: сэмплирование времени, линейный путь,
сборка пакетов (SPA, DVI), поля скорости и интегрирование Эйлером.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from codec.model import CodecParams, decode, denormalize_latent, encode, normalize_latent, sample_posterior
from config import RunConfig
from constants import (
    BINARIZE_THRESHOLD,
    FLOW_PARADIGMS,
    ONESTEP_PARADIGMS,
    PARADIGM_NOISE2MASK,
    PARADIGM_ONESTEP_MASK,
    PARADIGM_ONESTEP_VELOCITY,
    PARADIGMS,
)
from errors import ContractError, NumericError, ShapeError
from numerics.layers import ParamDict
from numerics.tensor import NdTensor, default_dtype, no_grad
from shapes.dataset import Sample
from utils.parallel import parallel_map
from utils.seeding import rng_for
from velocity_net import NetConfig, forward

logger = logging.getLogger(__name__)

Array = np.ndarray


@dataclass(frozen=True)
class FlowConfig:
    """
    Параметры потока.

    Одношаговые парадигмы не используют p_bbs и ode_steps: время всегда 0,
    сеть вызывается один раз.
    """

    paradigm: str = "video2mask-flow"
    p_bbs: float = 0.5
    spa: bool = True
    dvi: bool = True
    ode_steps: int = 10
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0
    decoder_strategy: str = "finetuned"

    def __post_init__(self):
        if self.paradigm not in PARADIGMS:
            raise ContractError(f"unknown paradigm {self.paradigm!r}")
        if not 0.0 <= self.p_bbs <= 1.0:
            raise ContractError(f"p_bbs = {self.p_bbs} must lie in [0, 1]")
        if self.ode_steps < 1:
            raise ContractError("ode_steps must be >= 1")
        if self.paradigm == PARADIGM_NOISE2MASK and not self.dvi:
            raise ContractError("noise2mask-flow needs dvi = true: the video enters only as the injected channels")
        if not self.is_flow and (self.p_bbs != 0.0 or self.ode_steps != 1):
            logger.info(f"[FLOW] {self.paradigm}: p_bbs={self.p_bbs:g} и ode_steps={self.ode_steps} не используются "
                        f"(одношаговая парадигма: t = 0, один вызов сети)")

    @property
    def is_flow(self) -> bool:
        return self.paradigm in FLOW_PARADIGMS

    @classmethod
    def from_run_config(cls, config: RunConfig) -> "FlowConfig":
        return cls(
            paradigm=config.paradigm,
            p_bbs=config.p_bbs,
            spa=config.spa,
            dvi=config.dvi,
            ode_steps=config.ode_steps,
            batch_size=config.batch_size,
            epochs=config.epochs,
            seed=config.seed,
            decoder_strategy=config.decoder_strategy,
        )


# ============================================================================
# Путь и время
# ============================================================================

def sample_timesteps(p_bbs: float, rng: np.random.Generator, size: int) -> Array:
    """
    Смесь p·δ₀ + (1 − p)·U[0, 1]: с вероятностью p ровно 0, иначе равномерно.

    Raises:
        ContractError: p_bbs вне [0, 1]
    """
    if not 0.0 <= p_bbs <= 1.0:
        raise ContractError(f"p_bbs = {p_bbs} must lie in [0, 1]")
    at_zero = rng.random(size) < p_bbs
    uniform = rng.random(size)
    return np.where(at_zero, 0.0, uniform)


def sample_timestep(p_bbs: float, rng: np.random.Generator) -> float:
    return float(sample_timesteps(p_bbs, rng, 1)[0])


def _check_pair(op: str, z0: Array, z1: Array) -> Tuple[Array, Array]:
    z0, z1 = np.asarray(z0), np.asarray(z1)
    if z0.shape != z1.shape:
        raise ShapeError(op, z0.shape, z1.shape)
    return z0, z1


def _per_item(t, ndim: int) -> Union[float, Array]:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return float(t)
    return t.reshape((-1,) + (1,) * (ndim - 1))


def interpolate_state(z0: Array, z1: Array, t) -> Array:
    """
    z_t = (1 − t)·z0 + t·z1.

    Args:
        t: скаляр или вектор по оси пакета
    """
    z0, z1 = _check_pair("interpolate_state", z0, z1)
    t = _per_item(t, z0.ndim)
    return ((1.0 - t) * z0 + t * z1).astype(z0.dtype)


def target_velocity(z0: Array, z1: Array) -> Array:
    """u = z1 − z0 (постоянна вдоль линейного пути)."""
    z0, z1 = _check_pair("target_velocity", z0, z1)
    return z1 - z0


def net_input(state: Array, video: Optional[Array], dvi: bool) -> Array:
    """Вход сети: состояние, при DVI - со сконкатенированным латентом видео (2C каналов)."""
    if not dvi:
        return state
    if video is None:
        raise ContractError("dvi is on but no video latent was provided")
    return np.concatenate([state, np.asarray(video, dtype=state.dtype)], axis=-1)


# ============================================================================
# Латенты и пакеты
# ============================================================================

@dataclass
class ClipLatents:
    """Апостериорные моменты латента видео и нормализованный латент маски."""

    video_mean: Array
    video_logvar: Array
    mask_latent: Array


def clip_latents(sample: Sample, codec: CodecParams) -> ClipLatents:
    with no_grad():
        v_mean, v_logvar = encode(sample.video, codec)
        m_mean, _ = encode(sample.mask, codec)
    return ClipLatents(v_mean.data, v_logvar.data, normalize_latent(m_mean.data, codec.mu, codec.sigma))


class LatentCache:
    """
    Латенты выборок по индексу; кодер заморожен, поэтому считаются один раз.
    """

    def __init__(self, codec: CodecParams):
        self.codec = codec
        self._items: Dict[int, ClipLatents] = {}

    def __len__(self) -> int:
        return len(self._items)

    def get(self, samples: Sequence[Sample]) -> List[ClipLatents]:
        missing = [s for s in samples if s.index not in self._items]
        if missing:
            for sample, latents in zip(missing, parallel_map(lambda s: clip_latents(s, self.codec), missing)):
                self._items[sample.index] = latents
        return [self._items[s.index] for s in samples]


@dataclass
class FlowBatch:
    """
    Пакет обучения.

    Attributes:
        z0: латент видео (после SPA, если включена), нормализованный
        z1: латент маски (среднее апостериорного, нормализованный)
        start: начало потока (z0 или гауссов шум у noise2mask)
        t: время по элементам пакета
    """

    z0: Array
    z1: Array
    start: Array
    token_ids: Array
    t: Array

    def __len__(self) -> int:
        return len(self.z1)


def make_batch(samples: Sequence[Sample], codec: CodecParams, config: FlowConfig, rng: np.random.Generator,
               cache: Optional[LatentCache] = None) -> FlowBatch:
    """
    Собирает пакет обучения.

    SPA: z0 = normalize(sample_posterior(encode(video))), иначе normalize(среднее).
    noise2mask: начало - N(0, 1), видео только как канал DVI.

    Raises:
        ContractError: у кодека нет констант нормализации
    """
    if not codec.has_constants():
        raise ContractError("make_batch: codec has no latent normalization constants")
    latents = (cache if cache is not None else LatentCache(codec)).get(samples)
    z0 = []
    for item in latents:
        raw = sample_posterior(item.video_mean, item.video_logvar, rng) if config.spa else item.video_mean
        z0.append(normalize_latent(raw, codec.mu, codec.sigma))
    z0 = np.stack(z0).astype(default_dtype())
    z1 = np.stack([item.mask_latent for item in latents]).astype(default_dtype())
    if config.paradigm == PARADIGM_NOISE2MASK:
        start = rng.standard_normal(z1.shape).astype(z1.dtype)
    else:
        start = z0
    if config.is_flow:
        t = sample_timesteps(config.p_bbs, rng, len(samples))
    else:
        t = np.zeros(len(samples))
    token_ids = np.stack([s.query.token_ids for s in samples])
    return FlowBatch(z0=z0, z1=z1, start=start, token_ids=token_ids, t=t)


# ============================================================================
# Поля скорости
# ============================================================================

VelocityField = Callable[..., Union[NdTensor, Array]]


class NetField:
    """Поле скорости, заданное сетью и её параметрами."""

    def __init__(self, params: ParamDict, config: NetConfig):
        self.params = params
        self.config = config

    def __call__(self, z_in, token_ids, t, params: Optional[ParamDict] = None) -> NdTensor:
        return forward(self.params if params is None else params, z_in, token_ids, t, self.config)

    def with_params(self, params: ParamDict) -> "NetField":
        return NetField(params, self.config)


class OracleField:
    """
    Поле, знающее ответ z1.

    velocity: (z1 − z)/(1 − t) по первым C каналам входа; на линейном пути это
    ровно z1 − start. state: выход - само z1 (для onestep-mask).
    """

    VELOCITY = "velocity"
    STATE = "state"

    def __init__(self, z1: Array, mode: str = VELOCITY):
        if mode not in (self.VELOCITY, self.STATE):
            raise ContractError(f"OracleField: unknown mode {mode!r}")
        self.z1 = np.asarray(z1)
        self.mode = mode
        self.params: ParamDict = {}

    def __call__(self, z_in, token_ids, t, params: Optional[ParamDict] = None) -> NdTensor:
        z_in = z_in.data if isinstance(z_in, NdTensor) else np.asarray(z_in)
        if self.mode == self.STATE:
            return NdTensor(self.z1.astype(z_in.dtype))
        state = z_in[..., :self.z1.shape[-1]]
        remaining = 1.0 - _per_item(t, state.ndim)
        return NdTensor(((self.z1 - state) / remaining).astype(z_in.dtype))

    def with_params(self, params: ParamDict) -> "OracleField":
        return self


def oracle_for(paradigm: str, z1: Array) -> OracleField:
    return OracleField(z1, OracleField.STATE if paradigm == PARADIGM_ONESTEP_MASK else OracleField.VELOCITY)


def _evaluate(field: VelocityField, z_in: Array, token_ids, t) -> Array:
    out = field(z_in, token_ids, t)
    return out.data if isinstance(out, NdTensor) else np.asarray(out)


# ============================================================================
# Интегрирование
# ============================================================================

def euler_integrate(start: Array, token_ids, field: VelocityField, n_steps: int,
                    paradigm: str = "video2mask-flow", video: Optional[Array] = None,
                    dvi: bool = False) -> Array:
    """
    Явный метод Эйлера от t = 0 до t = 1: z ← z + (1/N)·v(in(z), c, k/N).

    Одношаговые парадигмы - один вызов: onestep-velocity добавляет скорость
    при t = 0, onestep-mask берёт выход как состояние (N не используется).

    Args:
        start: начальное состояние (..., T, h, w, C)
        video: латент видео для DVI
        dvi: конкатенировать латент видео к состоянию на каждом вызове

    Raises:
        NumericError: нечисловое состояние (с номером шага)
        ContractError: N < 1
    """
    z = np.asarray(start)
    with no_grad():
        if paradigm in ONESTEP_PARADIGMS:
            out = _evaluate(field, net_input(z, video, dvi), token_ids, 0.0)
            z = z + out if paradigm == PARADIGM_ONESTEP_VELOCITY else out
            if not np.isfinite(z).all():
                raise NumericError(f"euler_integrate: non-finite state at step 0 ({paradigm})")
            return z.astype(np.asarray(start).dtype)
        if n_steps < 1:
            raise ContractError(f"euler_integrate: n_steps = {n_steps} must be >= 1")
        h = 1.0 / n_steps
        for k in range(n_steps):
            z = z + h * _evaluate(field, net_input(z, video, dvi), token_ids, k * h)
            if not np.isfinite(z).all():
                raise NumericError(f"euler_integrate: non-finite state at step {k}")
    return z


# ============================================================================
# Инференс
# ============================================================================

def pick_strategy(codec: CodecParams, requested: str) -> str:
    """Запрошенная стратегия декодера, если обучена, иначе лучшая из доступных."""
    available = codec.strategies()
    if requested in available:
        return requested
    fallback = available[-1]
    logger.warning(f"[FLOW] ⚠️ Стратегия декодера '{requested}' не обучена, используется '{fallback}'")
    return fallback


@dataclass
class Prediction:
    mask: Array                  # T×H×W uint8
    probs: Array                 # T×H×W float32
    latent: Optional[Array] = None


def _start_noise(seed: int, index: int, dims: Tuple[int, ...], dtype) -> Array:
    return rng_for(seed, "infer", index).standard_normal(dims).astype(dtype)


def infer_clips(videos: Array, token_ids: Array, field: VelocityField, codec: CodecParams, config: FlowConfig,
                indices: Optional[Sequence[int]] = None) -> List[Prediction]:
    """
    Инференс для пакета клипов B×T×H×W×3.

    Среднее апостериорного (без SPA) → нормализация → Эйлер → денормализация
    → декодер → бинаризация по 0.5. У noise2mask начальный шум берётся из
    потока (seed, "infer", индекс выборки).
    """
    if not codec.has_constants():
        raise ContractError("infer: codec has no latent normalization constants")
    videos = np.asarray(videos, dtype=default_dtype())
    indices = list(range(len(videos))) if indices is None else list(indices)
    with no_grad():
        mean, _ = encode(videos, codec)
    z0 = normalize_latent(mean.data, codec.mu, codec.sigma)
    if config.paradigm == PARADIGM_NOISE2MASK:
        start = np.stack([_start_noise(config.seed, i, z0.shape[1:], z0.dtype) for i in indices])
    else:
        start = z0
    z1_hat = euler_integrate(start, token_ids, field, config.ode_steps, config.paradigm, video=z0, dvi=config.dvi)
    strategy = pick_strategy(codec, config.decoder_strategy)
    with no_grad():
        probs = decode(denormalize_latent(z1_hat.astype(z0.dtype), codec.mu, codec.sigma), codec, strategy).data
    probs = probs.astype(np.float32)
    masks = (probs >= BINARIZE_THRESHOLD).astype(np.uint8)
    return [Prediction(masks[i], probs[i], z1_hat[i]) for i in range(len(videos))]


def infer(sample: Sample, field: VelocityField, codec: CodecParams, config: FlowConfig) -> Prediction:
    """Предсказанная маска одной выборки."""
    return infer_clips(sample.video[None], sample.query.token_ids[None], field, codec, config, [sample.index])[0]


def infer_batch(samples: Sequence[Sample], field: VelocityField, codec: CodecParams, config: FlowConfig,
                batch_size: Optional[int] = None) -> List[Prediction]:
    """Инференс для набора выборок пакетами; порядок совпадает с входным."""
    batch_size = batch_size or config.batch_size
    out: List[Prediction] = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        out += infer_clips(
            np.stack([s.video for s in chunk]),
            np.stack([s.query.token_ids for s in chunk]),
            field, codec, config, [s.index for s in chunk],
        )
    return out
