# utils/stages.py
"""
Этапы конвейера обучения (машина состояний каталога запуска).

Этап определяется по файлам, уже записанным в каталог запуска:
    DATA → CODEC_PRETRAINED → DECODER_FINETUNED → FLOW_TRAINED
"""
import logging
from pathlib import Path
from typing import Optional, Union

from constants import CODEC_CHECKPOINT, FLOW_CHECKPOINT
from errors import MissingStageError

logger = logging.getLogger(__name__)

# ============================================================================
# STAGES - Этапы конвейера
# ============================================================================

class Stages:
    """Константы этапов в порядке выполнения"""
    DATA = "data"                            # набор данных сгенерирован
    CODEC_PRETRAINED = "codec-pretrained"    # кодек обучен, константы нормализации есть
    DECODER_FINETUNED = "decoder-finetuned"  # декодер адаптирован к маскам
    FLOW_TRAINED = "flow-trained"            # сеть скорости обучена

    ORDER = (DATA, CODEC_PRETRAINED, DECODER_FINETUNED, FLOW_TRAINED)


def _codec_finetuned(path: Path) -> bool:
    from storage.frvs import read_frvs

    try:
        tensors = read_frvs(path)
    except Exception as e:
        logger.warning(f"[STAGE] ⚠️ Не удалось прочитать {path}: {e}")
        return False
    return any(name.startswith(("finetuned.", "head.")) for name in tensors)


def detect_stage(run_dir: Union[str, Path]) -> Optional[str]:
    """
    Последний завершённый этап каталога запуска.

    Returns:
        str или None, если каталог пуст
    """
    run_dir = Path(run_dir)
    if (run_dir / FLOW_CHECKPOINT).exists():
        return Stages.FLOW_TRAINED
    codec_path = run_dir / CODEC_CHECKPOINT
    if codec_path.exists():
        return Stages.DECODER_FINETUNED if _codec_finetuned(codec_path) else Stages.CODEC_PRETRAINED
    if run_dir.exists() and any(run_dir.iterdir()):
        return Stages.DATA
    return None


def stage_reached(run_dir: Union[str, Path], stage: str) -> bool:
    current = detect_stage(run_dir)
    if current is None:
        return False
    return Stages.ORDER.index(current) >= Stages.ORDER.index(stage)


def require_stage(run_dir: Union[str, Path], stage: str) -> Path:
    """
    Проверяет, что этап выполнен.

    Returns:
        Path: файл, подтверждающий этап

    Raises:
        MissingStageError: этап не выполнен
    """
    run_dir = Path(run_dir)
    expected = run_dir / (FLOW_CHECKPOINT if stage == Stages.FLOW_TRAINED else CODEC_CHECKPOINT)
    if not stage_reached(run_dir, stage) or not expected.exists():
        logger.error(f"[STAGE] ❌ Этап '{stage}' не выполнен в {run_dir}")
        raise MissingStageError(stage, expected)
    logger.debug(f"🔄 Этап {stage} подтверждён: {expected}")
    return expected
