# utils/seeding.py
"""
Независимые потоки случайных чисел из (seed, ключи...).

Каждая выборка, эпоха и шаг получает собственный генератор, поэтому порядок
обработки (и параллелизм) не влияет на результат.
"""
import hashlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seed_sequence(seed: int, *keys: Key) -> np.random.SeedSequence:
    return np.random.SeedSequence([_key_to_int(seed), *(_key_to_int(k) for k in keys)])


def rng_for(seed: int, *keys: Key) -> np.random.Generator:
    """Генератор для пары (seed, ключи); одинаковые аргументы - одинаковый поток."""
    return np.random.default_rng(seed_sequence(seed, *keys))


def derive_seed(seed: int, *keys: Key) -> int:
    """Производное 32-битное зерно (для сохранения в текстовых файлах)."""
    return int(seed_sequence(seed, *keys).generate_state(1, dtype=np.uint32)[0])
