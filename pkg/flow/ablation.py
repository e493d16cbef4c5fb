# flow/ablation.py
"""
Абляции: сетка (парадигма × p_bbs × SPA × DVI) × зёрна на общих данных
и общем кодеке, отчёт TSV и сводка средних.

Формат файла сетки (UTF-8, комментарии через `#`):

    seeds: 0 1 2
    c-base: paradigm=video2mask-flow p_bbs=0 spa=off dvi=off
    h:      paradigm=video2mask-flow p_bbs=0.5 spa=on dvi=on

Пустой файл (или только строка seeds) - стандартная сетка из семи строк.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from codec.model import CodecParams
from config import RunConfig
from constants import (
    ABLATION_COLUMNS,
    ABLATION_SUMMARY,
    ABLATION_TSV,
    DEFAULT_GRID,
    DEFAULT_SEEDS,
    FULL_GRID,
    PARADIGMS,
)
from errors import ConfigError
from flow.engine import FlowConfig, infer_batch
from flow.training import train_flow
from metrics import EvalResult, evaluate_split
from shapes.dataset import Sample, paired_indices
from storage.atomic import atomic_write_bytes

logger = logging.getLogger(__name__)

GridRow = Tuple[str, Dict[str, object]]

GRID_P_BBS = (0.0, 0.25, 0.5, 0.75)
_SWITCH = {"on": True, "true": True, "1": True, "off": False, "false": False, "0": False}


@dataclass
class AblationRow:
    """Одна ячейка сетки для одного зерна."""

    name: str
    paradigm: str
    p_bbs: float
    spa: bool
    dvi: bool
    seed: int
    j: float
    f: float
    jf: float


# ============================================================================
# Сетка
# ============================================================================

def _cell(name: str, values: Dict[str, str]) -> Dict[str, object]:
    unknown = set(values) - {"paradigm", "p_bbs", "spa", "dvi"}
    if unknown:
        raise ConfigError(f"grid row '{name}': unknown keys {sorted(unknown)}")
    try:
        cell = {
            "paradigm": values.get("paradigm", "video2mask-flow"),
            "p_bbs": float(values.get("p_bbs", "0")),
            "spa": _SWITCH[values.get("spa", "off").lower()],
            "dvi": _SWITCH[values.get("dvi", "off").lower()],
        }
    except (KeyError, ValueError) as e:
        raise ConfigError(f"grid row '{name}': bad value ({e})") from None
    if cell["paradigm"] not in PARADIGMS:
        raise ConfigError(f"grid row '{name}': unknown paradigm {cell['paradigm']!r}")
    if cell["p_bbs"] not in GRID_P_BBS:
        raise ConfigError(f"grid row '{name}': p_bbs must be one of {GRID_P_BBS}")
    return cell


def parse_grid(text: str) -> Tuple[List[GridRow], List[int]]:
    """
    Разбирает файл сетки.

    Returns:
        (строки сетки, зёрна)

    Raises:
        ConfigError: неизвестный ключ, повтор имени, неразбираемое значение
    """
    rows: List[GridRow] = []
    seeds = list(DEFAULT_SEEDS)
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ConfigError(f"grid line {number}: expected 'name: key=value ...'")
        name, rest = (part.strip() for part in line.split(":", 1))
        if name == "seeds":
            try:
                seeds = [int(s) for s in rest.split()]
            except ValueError:
                raise ConfigError(f"grid line {number}: seeds must be integers") from None
            continue
        if name == "grid":
            preset = {"default": DEFAULT_GRID, "full": FULL_GRID}.get(rest)
            if preset is None:
                raise ConfigError(f"grid line {number}: preset must be 'default' or 'full'")
            rows.extend((n, dict(c)) for n, c in preset)
            continue
        if any(existing == name for existing, _ in rows):
            raise ConfigError(f"grid line {number}: duplicate row '{name}'")
        pairs = {}
        for item in rest.split():
            if "=" not in item:
                raise ConfigError(f"grid line {number}: expected key=value, got {item!r}")
            key, value = item.split("=", 1)
            pairs[key.strip()] = value.strip()
        rows.append((name, _cell(name, pairs)))
    if not rows:
        rows = [(n, dict(c)) for n, c in DEFAULT_GRID]
    if not seeds:
        raise ConfigError("grid: at least one seed is required")
    return rows, seeds


# ============================================================================
# Запуск
# ============================================================================

def _evaluate(net, samples: Sequence[Sample], codec: CodecParams, config: RunConfig) -> EvalResult:
    predictions = infer_batch(samples, net, codec, FlowConfig.from_run_config(config))
    return evaluate_split(
        [p.mask for p in predictions],
        [s.mask for s in samples],
        pairs=paired_indices(list(samples)),
        aggregation=config.jaccard_aggregation,
    )


def run_ablation(grid: Sequence[GridRow], seeds: Sequence[int], train_samples: Sequence[Sample],
                 val_samples: Sequence[Sample], codec: CodecParams, config: RunConfig,
                 out_dir: Optional[Union[str, Path]] = None) -> List[AblationRow]:
    """
    Обучает и оценивает каждую ячейку сетки для каждого зерна.

    Данные и кодек общие для всех ячеек; в out_dir пишутся ablation.tsv
    и сводка средних по ячейкам.
    """
    rows: List[AblationRow] = []
    total = len(grid) * len(seeds)
    for name, cell in grid:
        for seed in seeds:
            run_config = config.replace(seed=seed, **cell)
            logger.info(f"[ABLATE] 🔄 ({len(rows) + 1}/{total}) {name}: {cell} seed={seed}")
            trained = train_flow(train_samples, codec, run_config)
            scores = _evaluate(trained.net, val_samples, codec, run_config)
            rows.append(AblationRow(name, cell["paradigm"], cell["p_bbs"], cell["spa"], cell["dvi"], seed,
                                    scores.mean_j, scores.mean_f, scores.mean_jf))
            logger.info(f"[ABLATE] ✅ {name} seed={seed}: J&F {scores.mean_jf:.4f}")
            if out_dir is not None:
                write_ablation(out_dir, rows)
    return rows


def _switch(value: bool) -> str:
    return "on" if value else "off"


def format_ablation_tsv(rows: Sequence[AblationRow]) -> str:
    lines = ["\t".join(ABLATION_COLUMNS)]
    for row in rows:
        lines.append("\t".join([
            row.paradigm, f"{row.p_bbs:g}", _switch(row.spa), _switch(row.dvi), str(row.seed),
            f"{row.j:.6f}", f"{row.f:.6f}", f"{row.jf:.6f}",
        ]))
    return "\n".join(lines) + "\n"


def summarize_ablation(rows: Sequence[AblationRow]) -> str:
    """Средние J, F, J&F по ячейкам (в порядке сетки) со значениями по зёрнам."""
    groups: Dict[str, List[AblationRow]] = {}
    for row in rows:
        groups.setdefault(row.name, []).append(row)
    lines = ["row\tparadigm\tp_bbs\tspa\tdvi\tseeds\tJ\tF\tJF\tJF per seed"]
    for name, group in groups.items():
        first = group[0]
        per_seed = " ".join(f"{r.jf:.4f}" for r in group)
        lines.append("\t".join([
            name, first.paradigm, f"{first.p_bbs:g}", _switch(first.spa), _switch(first.dvi), str(len(group)),
            f"{np.mean([r.j for r in group]):.4f}",
            f"{np.mean([r.f for r in group]):.4f}",
            f"{np.mean([r.jf for r in group]):.4f}",
            per_seed,
        ]))
    return "\n".join(lines) + "\n"


def write_ablation(out_dir: Union[str, Path], rows: Sequence[AblationRow]) -> Path:
    out_dir = Path(out_dir)
    atomic_write_bytes(out_dir / ABLATION_SUMMARY, summarize_ablation(rows).encode("utf-8"))
    return atomic_write_bytes(out_dir / ABLATION_TSV, format_ablation_tsv(rows).encode("utf-8"))


# ============================================================================
# Стратегии декодера
# ============================================================================

def evaluate_decoder_strategies(net, codec: CodecParams, samples: Sequence[Sample],
                                config: RunConfig) -> Dict[str, EvalResult]:
    """J, F и J&F сегментации одной и той же сетью при каждой обученной стратегии декодера."""
    report = {}
    for strategy in codec.strategies():
        report[strategy] = _evaluate(net, samples, codec, config.replace(decoder_strategy=strategy))
        logger.info(f"[ABLATE] {strategy}: J&F {report[strategy].mean_jf:.4f}")
    return report
