# conftest.py
"""
Общие фикстуры тестов: крошечная конфигурация, кодек и выборки.

Клипы 2×24×24, латент 2×6×6×4, сеть ширины 16 с одним блоком -
достаточно, чтобы пройти весь конвейер за секунды.
"""
import os

os.environ.setdefault("FLOWSEG_PROGRESS", "0")

from dataclasses import replace  # noqa: E402

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from codec.model import init_codec  # noqa: E402
from config import RunConfig  # noqa: E402
from shapes.dataset import make_sample  # noqa: E402

TINY = dict(
    frames=2,
    height=24,
    width=24,
    latent_channels=4,
    codec_width=8,
    codec_epochs=1,
    codec_batch=8,
    decoder_epochs=1,
    head_channels=4,
    model_width=16,
    blocks=1,
    heads=2,
    time_features=8,
    mlp_ratio=2,
    batch_size=2,
    epochs=1,
    log_every=1000,
)


@pytest.fixture
def tiny_config(tmp_path) -> RunConfig:
    return RunConfig(data_dir=str(tmp_path / "data"), **TINY)


@pytest.fixture
def tiny_codec():
    """Случайный кодек с единичными константами нормализации (стратегия frozen)."""
    codec = init_codec(0, latent_channels=4, width=8, head_channels=4)
    return replace(codec, mu=np.zeros(4, dtype=np.float32), sigma=np.ones(4, dtype=np.float32))


@pytest.fixture
def tiny_samples():
    return [make_sample(i, 0, "train", 6, frames=2, height=24, width=24) for i in range(6)]
