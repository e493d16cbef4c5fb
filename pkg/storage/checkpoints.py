# storage/checkpoints.py
"""
Чекпоинты кодека и сети скорости в контейнере FRVS.

Параметры хранятся под своими именами (`enc.conv_in.w`, `blocks.0.mod.w`, ...),
в чекпоинте потока - с префиксами `net.` и `codec.`; моменты AdamW -
`optim.m.*` / `optim.v.*`; счётчики - скаляры float64; действующая
конфигурация - UTF-8 байты тензора `config`.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np

from codec.model import CodecParams
from config import RunConfig, parse_config, serialize_config
from errors import FrvsFormatError
from numerics.layers import ParamDict, make_params
from numerics.optim import OptimState
from numerics.tensor import NdTensor
from storage.frvs import read_frvs, write_frvs

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_CODEC_PARTS = ("enc.", "dec.", "head.", "finetuned.")


def _scalar(value: float) -> np.ndarray:
    return np.array([value], dtype=np.float64)


def _arrays(params: Mapping[str, NdTensor], prefix: str = "") -> Dict[str, np.ndarray]:
    return {prefix + name: p.data for name, p in params.items()}


def _strip(tensors: Mapping[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {name[len(prefix):]: value for name, value in tensors.items() if name.startswith(prefix)}


def _require(tensors: Mapping[str, np.ndarray], name: str, path: PathLike) -> np.ndarray:
    if name not in tensors:
        raise FrvsFormatError(f"{path}: checkpoint has no tensor '{name}'")
    return tensors[name]


# ============================================================================
# Кодек
# ============================================================================

def codec_tensors(codec: CodecParams) -> Dict[str, np.ndarray]:
    """Все тензоры кодека под их именами (+ константы нормализации и размеры)."""
    tensors = _arrays(codec.encoder)
    tensors.update(_arrays(codec.decoder))
    if codec.head is not None:
        tensors.update(_arrays(codec.head))
    if codec.finetuned is not None:
        tensors.update(_arrays(codec.finetuned))
    if codec.has_constants():
        tensors["norm.mu"] = np.asarray(codec.mu, dtype=np.float32)
        tensors["norm.sigma"] = np.asarray(codec.sigma, dtype=np.float32)
    tensors["meta.latent_channels"] = _scalar(codec.latent_channels)
    tensors["meta.width"] = _scalar(codec.width)
    tensors["meta.head_channels"] = _scalar(codec.head_channels)
    return tensors


def codec_from_tensors(tensors: Mapping[str, np.ndarray], path: PathLike = "<memory>") -> CodecParams:
    def part(prefix: str) -> Optional[ParamDict]:
        arrays = {name: value for name, value in tensors.items() if name.startswith(prefix)}
        return make_params(arrays, trainable=False) if arrays else None

    encoder, decoder = part("enc."), part("dec.")
    if encoder is None or decoder is None:
        raise FrvsFormatError(f"{path}: codec checkpoint has no encoder/decoder parameters")
    return CodecParams(
        latent_channels=int(_require(tensors, "meta.latent_channels", path)[0]),
        width=int(_require(tensors, "meta.width", path)[0]),
        encoder=encoder,
        decoder=decoder,
        head=part("head."),
        finetuned=part("finetuned."),
        mu=tensors.get("norm.mu"),
        sigma=tensors.get("norm.sigma"),
        head_channels=int(_require(tensors, "meta.head_channels", path)[0]),
    )


def save_codec(path: PathLike, codec: CodecParams) -> Path:
    path = write_frvs(path, codec_tensors(codec))
    logger.info(f"[CODEC] ✅ Чекпоинт кодека сохранён: {path} (стратегии: {', '.join(codec.strategies())})")
    return path


def load_codec(path: PathLike) -> CodecParams:
    """
    Загружает кодек (все части заморожены).

    Raises:
        DatasetIOError: файл не читается
        FrvsFormatError: файл не является чекпоинтом кодека
    """
    codec = codec_from_tensors(read_frvs(path), path)
    logger.debug(f"[CODEC] чекпоинт загружен: {path}")
    return codec


# ============================================================================
# Поток
# ============================================================================

@dataclass
class FlowCheckpoint:
    """Состояние обучения потока на границе эпохи."""

    params: ParamDict
    codec: CodecParams
    config: RunConfig
    optim: Optional[OptimState] = None
    step: int = 0
    epoch: int = 0


def save_flow_checkpoint(path: PathLike, checkpoint: FlowCheckpoint) -> Path:
    tensors = _arrays(checkpoint.params, "net.")
    tensors.update({f"codec.{name}": value for name, value in codec_tensors(checkpoint.codec).items()})
    optim = checkpoint.optim
    if optim is not None:
        tensors.update({f"optim.m.{name}": value for name, value in optim.m.items()})
        tensors.update({f"optim.v.{name}": value for name, value in optim.v.items()})
        tensors["optim.step"] = _scalar(optim.step)
    tensors["state.step"] = _scalar(checkpoint.step)
    tensors["state.epoch"] = _scalar(checkpoint.epoch)
    tensors["config"] = np.frombuffer(serialize_config(checkpoint.config).encode("utf-8"), dtype=np.uint8)
    return write_frvs(path, tensors)


def load_flow_checkpoint(path: PathLike, trainable: bool = False) -> FlowCheckpoint:
    """
    Загружает чекпоинт потока.

    Args:
        trainable: параметры сети с requires_grad (продолжение обучения)

    Raises:
        FrvsFormatError: нет сети, кодека или конфигурации
        ConfigError: встроенная конфигурация не разбирается
    """
    tensors = read_frvs(path)
    net = _strip(tensors, "net.")
    if not net:
        raise FrvsFormatError(f"{path}: flow checkpoint has no network parameters")
    config = parse_config(bytes(_require(tensors, "config", path)).decode("utf-8"))
    optim = None
    if "optim.step" in tensors:
        optim = OptimState(
            lr=config.lr,
            weight_decay=config.weight_decay,
            beta1=config.beta1,
            beta2=config.beta2,
            eps=config.adam_eps,
            step=int(tensors["optim.step"][0]),
            m={name: value.copy() for name, value in _strip(tensors, "optim.m.").items()},
            v={name: value.copy() for name, value in _strip(tensors, "optim.v.").items()},
        )
    return FlowCheckpoint(
        params=make_params(net, trainable=trainable),
        codec=codec_from_tensors(_strip(tensors, "codec."), path),
        config=config,
        optim=optim,
        step=int(_require(tensors, "state.step", path)[0]),
        epoch=int(_require(tensors, "state.epoch", path)[0]),
    )
