# errors.py
"""
Иерархия исключений проекта.

Все доменные ошибки наследуются от FlowSegError и от ближайшего встроенного
исключения, поэтому вызывающий код может ловить любое из них.
CLI переводит классы ошибок в коды выхода (cli.exit_code_for).
"""
from typing import List, Optional, Sequence


class FlowSegError(Exception):
    """Базовое исключение проекта."""


class ShapeError(FlowSegError, ValueError):
    """Несовместимые размерности тензоров."""

    def __init__(self, op: str, *dims: Sequence[int], detail: str = ""):
        self.op = op
        self.dims = [tuple(d) for d in dims]
        dims_text = " vs ".join(str(list(d)) for d in self.dims)
        message = f"{op}: shape mismatch {dims_text}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class NumericError(FlowSegError, ArithmeticError):
    """Нечисловые значения (nan / inf) во входах или состоянии."""


class ContractError(FlowSegError, ValueError):
    """Нарушено предусловие операции."""


class ConfigError(ContractError):
    """Ошибка разбора конфигурации или неизвестный ключ."""


class QueryParseError(ContractError):
    """Запрос не укладывается в грамматику атрибутов."""

    def __init__(self, message: str, valid: Optional[dict] = None):
        self.valid = valid or {}
        if self.valid:
            listing = "; ".join(f"{key}: {', '.join(values)}" for key, values in self.valid.items())
            message = f"{message}. Valid attributes - {listing}"
        super().__init__(message)


class AlignmentError(ContractError):
    """Списки предсказаний и разметки не выровнены."""


class FrvsFormatError(FlowSegError, ValueError):
    """Повреждённый или неподдерживаемый контейнер FRVS."""


class DatasetIOError(FlowSegError, OSError):
    """Ошибка чтения/записи файлов с указанием пути."""

    def __init__(self, path, message: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class MissingStageError(FlowSegError):
    """Не выполнен обязательный предыдущий этап конвейера."""

    def __init__(self, stage: str, path=None):
        self.stage = stage
        self.path = None if path is None else str(path)
        where = f" (expected {self.path})" if self.path else ""
        super().__init__(f"missing prerequisite stage '{stage}'{where}")


class TrainingDivergedError(NumericError):
    """Функция потерь стала нечисловой во время обучения."""

    def __init__(self, step: int, lr: float, history: List[float]):
        self.step = step
        self.lr = lr
        self.history = list(history)
        tail = ", ".join(f"{value:.4g}" for value in self.history[-10:])
        super().__init__(f"non-finite loss at step {step} (lr={lr:g}); last losses: [{tail}]")
