# config.py
"""
Конфигурация: переменные окружения и файл конфигурации запуска.

Переменные окружения читаются из .env (python-dotenv), параметры запуска -
из плоского текстового файла `key = value` (UTF-8, комментарии через `#`).
"""
import logging
import os
from dataclasses import dataclass, fields, asdict
from pathlib import Path
from typing import Any, Dict, Union

from dotenv import load_dotenv

from constants import CONFIG_ECHO, DECODER_STRATEGIES, PARADIGMS
from errors import ConfigError

logger = logging.getLogger(__name__)

# Загрузка переменных из .env
load_dotenv()

# ============================================================================
# Окружение
# ============================================================================
LOG_LEVEL = os.getenv("FLOWSEG_LOG_LEVEL", "INFO").upper()
# ограничение числа потоков для генерации данных и оценки
THREADS = max(1, int(os.getenv("FLOWSEG_THREADS", "1") or "1"))
PROGRESS = os.getenv("FLOWSEG_PROGRESS", "1").lower() not in ("0", "false", "off")
CHECK_FINITE = os.getenv("FLOWSEG_CHECK_FINITE", "1").lower() not in ("0", "false", "off")


_CHOICES = {
    "paradigm": PARADIGMS,
    "decoder_strategy": DECODER_STRATEGIES,
    "precision": ("float32", "float64"),
    "jaccard_aggregation": ("clip", "frame"),
}

_TRUE = ("true", "on", "yes", "1")
_FALSE = ("false", "off", "no", "0")


@dataclass
class RunConfig:
    """Все параметры запуска с документированными значениями по умолчанию."""

    # данные
    data_dir: str = "data"
    train_split: str = "train"
    val_split: str = "val"
    train_limit: int = 0          # 0 - все выборки
    val_limit: int = 0
    frames: int = 8
    height: int = 32
    width: int = 32

    # кодек
    latent_channels: int = 8
    codec_width: int = 32
    codec_epochs: int = 2
    codec_lr: float = 1e-3
    codec_batch: int = 32         # кадров на шаг
    kl_weight: float = 1e-4
    decoder_strategy: str = "finetuned"
    decoder_epochs: int = 1
    decoder_lr: float = 3e-4
    head_channels: int = 16
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    # сеть скорости
    model_width: int = 128
    blocks: int = 4
    heads: int = 4
    time_features: int = 64
    mlp_ratio: int = 4

    # поток
    paradigm: str = "video2mask-flow"
    p_bbs: float = 0.5
    spa: bool = True
    dvi: bool = True
    ode_steps: int = 10
    batch_size: int = 8
    epochs: int = 10

    # оптимизатор (AdamW, постоянный шаг)
    lr: float = 3e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    warmup_steps: int = 0

    # прочее
    seed: int = 0
    precision: str = "float32"
    jaccard_aggregation: str = "clip"
    log_every: int = 50

    def __post_init__(self):
        validate_config(self)

    def replace(self, **changes) -> "RunConfig":
        """Копия конфигурации с изменёнными ключами (ключи проверяются)."""
        values = asdict(self)
        for key, value in changes.items():
            if key not in values:
                raise ConfigError(f"unknown config key '{key}'")
            values[key] = value
        return RunConfig(**values)


def validate_config(config: RunConfig) -> None:
    """
    Проверяет допустимость значений.

    Raises:
        ConfigError: значение вне допустимого диапазона
    """
    for key, choices in _CHOICES.items():
        value = getattr(config, key)
        if value not in choices:
            raise ConfigError(f"{key} = {value!r}; expected one of: {', '.join(choices)}")
    if not 0.0 <= config.p_bbs <= 1.0:
        raise ConfigError(f"p_bbs = {config.p_bbs} must lie in [0, 1]")
    if config.ode_steps < 1:
        raise ConfigError(f"ode_steps = {config.ode_steps} must be >= 1")
    if config.height % 8 or config.width % 8:
        raise ConfigError("height and width must be divisible by 8 (4x codec, 2x2 patches)")
    if config.model_width % config.heads:
        raise ConfigError(f"model_width {config.model_width} not divisible by heads {config.heads}")
    for key in ("frames", "batch_size", "latent_channels", "codec_width", "blocks", "heads", "codec_batch"):
        if getattr(config, key) < 1:
            raise ConfigError(f"{key} must be >= 1")
    for key in ("epochs", "codec_epochs", "decoder_epochs", "warmup_steps", "train_limit", "val_limit"):
        if getattr(config, key) < 0:
            raise ConfigError(f"{key} must be >= 0")


def _coerce(key: str, kind: type, text: str) -> Any:
    text = text.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> RunConfig:
    """
    Разбирает текст конфигурации.

    Args:
        text: строки `key = value`, пустые строки и комментарии `#` пропускаются

    Returns:
        RunConfig: конфигурация; отсутствующие ключи берутся по умолчанию

    Raises:
        ConfigError: неизвестный ключ, повтор ключа или неразбираемое значение
    """
    kinds = {f.name: f.type for f in fields(RunConfig)}
    values: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"line {number}: unknown config key '{key}'")
        if key in values:
            raise ConfigError(f"line {number}: duplicate config key '{key}'")
        values[key] = _coerce(key, kinds[key], value)
    return RunConfig(**values)


def serialize_config(config: RunConfig) -> str:
    """Сериализует конфигурацию: все ключи, по одному на строку."""
    lines = ["# effective run configuration"]
    for item in fields(RunConfig):
        lines.append(f"{item.name} = {_format(getattr(config, item.name))}")
    return "\n".join(lines) + "\n"


def load_config(path: Union[str, Path, None]) -> RunConfig:
    """
    Загружает конфигурацию из файла (None - значения по умолчанию).

    Raises:
        ConfigError: файл не читается или содержит ошибки
    """
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e})") from e
    config = parse_config(text)
    logger.info(f"[CONFIG] ✓ Конфигурация загружена: {path}")
    return config


def echo_config(config: RunConfig, run_dir: Union[str, Path]) -> Path:
    """Записывает действующую конфигурацию в каталог запуска."""
    from storage.atomic import atomic_write_bytes

    path = Path(run_dir) / CONFIG_ECHO
    atomic_write_bytes(path, serialize_config(config).encode("utf-8"))
    return path
