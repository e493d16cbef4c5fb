# shapes/dataset.py
"""
Генерация и загрузка набора MovingShapes-Ref.

Выборки с позициями 0 и 1 в каждом блоке из пяти индексов делят одно видео
и ссылаются на разные фигуры (парные запросы, 40% набора).
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from constants import DEFAULT_FRAMES, DEFAULT_HEIGHT, DEFAULT_WIDTH
from errors import ContractError, DatasetIOError
from shapes.query import QuerySpec, build_query, query_from_record
from shapes.render import render
from shapes.scene import SceneSpec, generate_scene
from storage.dataset_io import corpus_digest, list_indices, read_sample_files, write_sample_files
from utils.parallel import parallel_map
from utils.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

PAIR_BLOCK = 5
PAIRED_POSITIONS = (0, 1)


@dataclass
class Sample:
    """Видео, маска референта, запрос и сцена."""

    index: int
    video: np.ndarray          # T×H×W×3 float32
    mask: np.ndarray           # T×H×W uint8
    query: QuerySpec
    scene: SceneSpec
    referent: int
    partner: int = -1          # индекс парной выборки (то же видео), -1 - нет пары


@dataclass
class DatasetSummary:
    split: str
    count: int
    paired: int
    digest: str


def _scene_seed(seed: int, split: str, index: int) -> Tuple[int, int, int]:
    """(зерно сцены, позиция в паре или -1, индекс партнёра до обрезки по n)."""
    block, position = divmod(index, PAIR_BLOCK)
    if position in PAIRED_POSITIONS:
        partner = block * PAIR_BLOCK + (1 - position)
        return derive_seed(seed, split, "pair", block), position, partner
    return derive_seed(seed, split, "scene", index), -1, -1


def make_sample(index: int, seed: int, split: str, n: Optional[int] = None, frames: int = DEFAULT_FRAMES,
                height: int = DEFAULT_HEIGHT, width: int = DEFAULT_WIDTH) -> Sample:
    """Детерминированно строит выборку index набора (seed, split)."""
    scene_seed, position, partner = _scene_seed(seed, split, index)
    scene = generate_scene(scene_seed, frames, height, width)
    video, masks = render(scene)
    if position >= 0:
        order = rng_for(seed, split, "pair-referents", index // PAIR_BLOCK).permutation(len(scene.tracks))
        referent = int(order[position])
        if n is not None and partner >= n:
            partner = -1
    else:
        referent = int(rng_for(seed, split, "referent", index).integers(len(scene.tracks)))
    query = build_query(scene, referent, rng_for(seed, split, "query", index))
    return Sample(index, video, masks[referent], query, scene, referent, partner)


def sample_record(sample: Sample) -> dict:
    record = dict(sample.query.attributes())
    record.update(
        text=sample.query.text,
        scene_seed=sample.scene.seed,
        referent=sample.referent,
        partner=sample.partner,
    )
    return record


def generate_dataset(out_dir: Union[str, Path], n: int, seed: int, split: str, frames: int = DEFAULT_FRAMES,
                     height: int = DEFAULT_HEIGHT, width: int = DEFAULT_WIDTH,
                     workers: Optional[int] = None) -> DatasetSummary:
    """
    Генерирует n выборок в <out_dir>/<split>/.

    Returns:
        DatasetSummary: число выборок, число парных, дайджест каталога сплита

    Raises:
        ContractError: n < 1
        DatasetIOError: ошибка записи (с путём)
    """
    if n < 1:
        raise ContractError(f"generate_dataset: n must be >= 1, got {n}")
    split_dir = Path(out_dir) / split
    logger.info(f"[DATA] 🔄 Генерация {n} выборок split={split} seed={seed} → {split_dir}")

    def build_and_write(index: int) -> bool:
        sample = make_sample(index, seed, split, n, frames, height, width)
        write_sample_files(split_dir, index, sample.video, sample.mask, sample_record(sample))
        return sample.partner >= 0

    paired = sum(parallel_map(build_and_write, range(n), workers))
    digest = corpus_digest(split_dir)
    logger.info(f"[DATA] ✅ {split}: {n} выборок, парных {paired}, digest {digest[:16]}")
    return DatasetSummary(split, n, paired, digest)


def load_sample(split_dir: Union[str, Path], index: int) -> Sample:
    """Читает выборку; сцена восстанавливается по scene_seed."""
    video, mask, record = read_sample_files(split_dir, index)
    try:
        query = query_from_record(record)
        scene_seed = int(record["scene_seed"])
        referent = int(record.get("referent", -1))
        partner = int(record.get("partner", -1))
    except (KeyError, ValueError) as e:
        raise DatasetIOError(split_dir, f"sample {index}: malformed query record ({e})") from None
    frames, height, width = mask.shape
    scene = generate_scene(scene_seed, frames, height, width)
    return Sample(index, video, mask, query, scene, referent, partner)


def load_split(root: Union[str, Path], split: str, limit: int = 0) -> List[Sample]:
    """
    Загружает сплит (limit > 0 - только первые limit выборок).

    Raises:
        DatasetIOError: каталог отсутствует или пуст
    """
    split_dir = Path(root) / split
    indices = list_indices(split_dir)
    if limit > 0:
        indices = indices[:limit]
    if not indices:
        raise DatasetIOError(split_dir, "no samples found")
    samples = parallel_map(lambda i: load_sample(split_dir, i), indices)
    # пары, вышедшие за limit, не считаются парами
    present = {s.index for s in samples}
    for s in samples:
        if s.partner not in present:
            s.partner = -1
    logger.info(f"[DATA] ✓ Загружено {len(samples)} выборок из {split_dir}")
    return samples


def paired_indices(samples: List[Sample]) -> List[Tuple[int, int]]:
    """Пары позиций (i, j) в списке samples, делящие одно видео."""
    position = {s.index: i for i, s in enumerate(samples)}
    pairs = []
    for i, s in enumerate(samples):
        j = position.get(s.partner)
        if j is not None and i < j:
            pairs.append((i, j))
    return pairs
