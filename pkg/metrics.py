# metrics.py
"""
Оценка по протоколу DAVIS: региональное сходство J (Jaccard), точность
границ F и их среднее J&F; recall и decay по кадрам.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from constants import MASK_SUFFIX, QUERY_SUFFIX
from errors import AlignmentError, ShapeError
from storage.atomic import atomic_write_bytes
from storage.dataset_io import list_indices, read_mask, read_query_record, sample_stem
from utils.parallel import parallel_map

logger = logging.getLogger(__name__)

BOUNDARY_FRACTION = 0.008
RECALL_THRESHOLD = 0.5
DECAY_BINS = 4

PathLike = Union[str, Path]


def _pair(op: str, pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    pred, gt = np.asarray(pred) > 0, np.asarray(gt) > 0
    if pred.shape != gt.shape:
        raise ShapeError(op, pred.shape, gt.shape)
    return pred, gt


def _frames(mask: np.ndarray) -> np.ndarray:
    return mask[None] if mask.ndim == 2 else mask.reshape((-1,) + mask.shape[-2:])


# ============================================================================
# J - региональное сходство
# ============================================================================

def frame_jaccard(pred, gt) -> float:
    pred, gt = _pair("jaccard", pred, gt)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def frame_jaccards(pred, gt) -> np.ndarray:
    """J каждого кадра."""
    pred, gt = _pair("jaccard", pred, gt)
    return np.array([frame_jaccard(p, g) for p, g in zip(_frames(pred), _frames(gt))])


def jaccard(pred, gt, aggregation: str = "clip") -> float:
    """
    |P∩G| / |P∪G|; 1, если обе маски пусты.

    Args:
        aggregation: "clip" - пересечения и объединения суммируются по всем
            кадрам; "frame" - среднее J по кадрам

    Raises:
        ShapeError: размеры масок не совпадают
    """
    pred, gt = _pair("jaccard", pred, gt)
    if aggregation == "frame":
        return float(frame_jaccards(pred, gt).mean())
    if aggregation != "clip":
        raise ValueError(f"unknown jaccard aggregation {aggregation!r}")
    return frame_jaccard(pred, gt)


# ============================================================================
# F - точность границ
# ============================================================================

def boundary_tolerance(height: int, width: int) -> int:
    """Допуск границы: max(1, round(0.008·диагональ)) пикселей."""
    return max(1, int(round(BOUNDARY_FRACTION * math.hypot(height, width))))


def boundary_map(mask) -> np.ndarray:
    """
    Граничные пиксели кадра: пиксели маски, у которых хотя бы один из
    четырёх соседей вне маски (край изображения считается «вне»).
    """
    mask = np.asarray(mask) > 0
    padded = np.pad(mask, 1, constant_values=False)
    interior = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    return mask & ~interior


def _within(source: np.ndarray, target: np.ndarray, tolerance: float) -> float:
    """Доля пикселей source на расстоянии ≤ tolerance от ближайшего пикселя target."""
    distance = ndimage.distance_transform_edt(~target)
    return float((distance[source] <= tolerance).mean())


def frame_boundary_f(pred, gt, tolerance: Optional[float] = None) -> float:
    """
    F-мера границ одного кадра; 1, если обе границы пусты, 0 при P + R = 0.
    """
    pred, gt = _pair("boundary_f", pred, gt)
    if tolerance is None:
        tolerance = boundary_tolerance(*pred.shape)
    bp, bg = boundary_map(pred), boundary_map(gt)
    if not bp.any() and not bg.any():
        return 1.0
    if not bp.any() or not bg.any():
        return 0.0
    precision = _within(bp, bg, tolerance)
    recall = _within(bg, bp, tolerance)
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def frame_boundary_fs(pred, gt, tolerance: Optional[float] = None) -> np.ndarray:
    pred, gt = _pair("boundary_f", pred, gt)
    return np.array([frame_boundary_f(p, g, tolerance) for p, g in zip(_frames(pred), _frames(gt))])


def boundary_f(pred, gt, tolerance: Optional[float] = None) -> float:
    """F последовательности - среднее F по кадрам."""
    return float(frame_boundary_fs(pred, gt, tolerance).mean())


# ============================================================================
# Статистики последовательности
# ============================================================================

def sequence_statistics(scores: Sequence[float]) -> Tuple[float, float]:
    """
    (recall, decay) по покадровым оценкам.

    recall - доля кадров с оценкой > 0.5; decay - среднее первой четверти
    кадров минус среднее последней.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return 0.0, 0.0
    recall = float((scores > RECALL_THRESHOLD).mean())
    bins = np.array_split(scores, min(DECAY_BINS, scores.size))
    return recall, float(bins[0].mean() - bins[-1].mean())


# ============================================================================
# Оценка сплита
# ============================================================================

@dataclass
class SampleScore:
    j: float
    f: float
    frame_j: np.ndarray
    frame_f: np.ndarray

    @property
    def jf(self) -> float:
        return (self.j + self.f) / 2.0


@dataclass
class EvalResult:
    """
    Результат оценки сплита.

    Attributes:
        j, f, jf: оценки по выборкам (jf = (j + f)/2 для каждой)
        paired_rate: доля направлений пар, где IoU(pred_q, gt_q) > IoU(pred_q, gt_other);
            None - пар нет
    """

    j: List[float] = field(default_factory=list)
    f: List[float] = field(default_factory=list)
    jf: List[float] = field(default_factory=list)
    names: List[str] = field(default_factory=list)
    paired_rate: Optional[float] = None
    pairs: int = 0
    j_recall: float = 0.0
    j_decay: float = 0.0
    f_recall: float = 0.0
    f_decay: float = 0.0

    @property
    def count(self) -> int:
        return len(self.j)

    @property
    def mean_j(self) -> float:
        return float(np.mean(self.j)) if self.j else 0.0

    @property
    def mean_f(self) -> float:
        return float(np.mean(self.f)) if self.f else 0.0

    @property
    def mean_jf(self) -> float:
        return float(np.mean(self.jf)) if self.jf else 0.0


def evaluate_sample(pred, gt, aggregation: str = "clip", tolerance: Optional[float] = None) -> SampleScore:
    frame_j = frame_jaccards(pred, gt)
    frame_f = frame_boundary_fs(pred, gt, tolerance)
    return SampleScore(jaccard(pred, gt, aggregation), float(frame_f.mean()), frame_j, frame_f)


def paired_wins(predictions: Sequence[np.ndarray], ground_truths: Sequence[np.ndarray],
                pairs: Sequence[Tuple[int, int]]) -> Tuple[int, int]:
    """(выигрыши, всего) по обоим направлениям каждой пары."""
    wins = total = 0
    for i, j in pairs:
        for own, other in ((i, j), (j, i)):
            total += 1
            if jaccard(predictions[own], ground_truths[own]) > jaccard(predictions[own], ground_truths[other]):
                wins += 1
    return wins, total


def evaluate_split(predictions: Sequence[np.ndarray], ground_truths: Sequence[np.ndarray],
                   pairs: Optional[Sequence[Tuple[int, int]]] = None, aggregation: str = "clip",
                   tolerance: Optional[float] = None, names: Optional[Sequence[str]] = None,
                   workers: Optional[int] = None) -> EvalResult:
    """
    J, F и J&F по выборкам и средние по сплиту.

    Args:
        predictions, ground_truths: выровненные списки масок T×H×W
        pairs: пары позиций с общим видео (для доли разрешённых пар)
        names: имена выборок для отчёта

    Raises:
        AlignmentError: списки разной длины
        ShapeError: размеры маски и эталона не совпадают
    """
    if len(predictions) != len(ground_truths):
        raise AlignmentError(f"{len(predictions)} predictions vs {len(ground_truths)} ground truths")
    scores = parallel_map(
        lambda k: evaluate_sample(predictions[k], ground_truths[k], aggregation, tolerance),
        range(len(predictions)),
        workers,
    )
    result = EvalResult(
        j=[s.j for s in scores],
        f=[s.f for s in scores],
        jf=[s.jf for s in scores],
        names=list(names) if names is not None else [str(k) for k in range(len(scores))],
    )
    if scores:
        result.j_recall, result.j_decay = _pooled_statistics([s.frame_j for s in scores])
        result.f_recall, result.f_decay = _pooled_statistics([s.frame_f for s in scores])
    if pairs:
        wins, total = paired_wins(predictions, ground_truths, pairs)
        result.paired_rate = wins / total
        result.pairs = len(pairs)
    logger.info(f"[EVAL] ✅ {result.count} выборок: J {result.mean_j:.4f}  F {result.mean_f:.4f}  "
                f"J&F {result.mean_jf:.4f}")
    return result


def _pooled_statistics(sequences: List[np.ndarray]) -> Tuple[float, float]:
    """Средние recall и decay по выборкам."""
    stats = np.array([sequence_statistics(s) for s in sequences])
    return float(stats[:, 0].mean()), float(stats[:, 1].mean())


# ============================================================================
# Отчёты
# ============================================================================

def format_eval_tsv(result: EvalResult) -> str:
    lines = ["sample\tJ\tF\tJF"]
    for name, j, f, jf in zip(result.names, result.j, result.f, result.jf):
        lines.append(f"{name}\t{j:.6f}\t{f:.6f}\t{jf:.6f}")
    return "\n".join(lines) + "\n"


def write_eval_tsv(path: PathLike, result: EvalResult) -> Path:
    return atomic_write_bytes(path, format_eval_tsv(result).encode("utf-8"))


def format_summary(result: EvalResult, title: str = "evaluation") -> str:
    """Человекочитаемый блок итогов."""
    lines = [
        f"# {title}",
        f"samples      {result.count}",
        f"J            {result.mean_j:.4f}",
        f"F            {result.mean_f:.4f}",
        f"J&F          {result.mean_jf:.4f}",
        f"J recall     {result.j_recall:.4f}",
        f"J decay      {result.j_decay:.4f}",
        f"F recall     {result.f_recall:.4f}",
        f"F decay      {result.f_decay:.4f}",
    ]
    if result.paired_rate is None:
        lines.append("paired rate  n/a")
    else:
        lines.append(f"paired rate  {result.paired_rate:.4f} ({result.pairs} pairs)")
    return "\n".join(lines) + "\n"


# ============================================================================
# Каталоги масок
# ============================================================================

def load_mask_dir(path: PathLike) -> Tuple[List[int], List[np.ndarray]]:
    """Индексы и маски всех `<index>.mask.frvs` каталога (тензор mask или prediction)."""
    path = Path(path)
    indices = list_indices(path)
    masks = parallel_map(lambda i: read_mask(path / f"{sample_stem(i)}{MASK_SUFFIX}"), indices)
    return indices, masks


def pairs_from_records(gt_dir: PathLike, indices: Sequence[int]) -> List[Tuple[int, int]]:
    """Пары позиций по полю partner файлов запросов (если файлы есть)."""
    gt_dir = Path(gt_dir)
    position = {index: k for k, index in enumerate(indices)}
    pairs = []
    for k, index in enumerate(indices):
        record_path = gt_dir / f"{sample_stem(index)}{QUERY_SUFFIX}"
        if not record_path.exists():
            continue
        partner = int(read_query_record(record_path).get("partner", -1))
        other = position.get(partner)
        if other is not None and k < other:
            pairs.append((k, other))
    return pairs


def evaluate_dirs(pred_dir: PathLike, gt_dir: PathLike, aggregation: str = "clip") -> EvalResult:
    """
    Оценка каталога предсказаний против каталога эталонов.

    Raises:
        AlignmentError: число или индексы выборок не совпадают
    """
    pred_indices, predictions = load_mask_dir(pred_dir)
    gt_indices, ground_truths = load_mask_dir(gt_dir)
    if len(pred_indices) != len(gt_indices):
        raise AlignmentError(f"{pred_dir}: {len(pred_indices)} predictions vs {len(gt_indices)} ground truths in {gt_dir}")
    if pred_indices != gt_indices:
        missing = sorted(set(gt_indices) - set(pred_indices))[:5]
        raise AlignmentError(f"{pred_dir}: sample indices differ from {gt_dir} (missing e.g. {missing})")
    return evaluate_split(
        predictions,
        ground_truths,
        pairs=pairs_from_records(gt_dir, gt_indices),
        aggregation=aggregation,
        names=[sample_stem(i) for i in gt_indices],
    )
