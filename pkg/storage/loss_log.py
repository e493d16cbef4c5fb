# storage/loss_log.py
"""
Журнал потерь: по строке `step<TAB>loss` на шаг оптимизатора.
"""
from pathlib import Path
from typing import List, Sequence, Tuple, Union

from storage.atomic import atomic_write_bytes, read_bytes

PathLike = Union[str, Path]


def format_loss_log(losses: Sequence[Tuple[int, float]]) -> str:
    return "".join(f"{step}\t{loss:.8e}\n" for step, loss in losses)


def read_loss_log(path: PathLike) -> List[Tuple[int, float]]:
    """Записи журнала; отсутствующий файл - пустой журнал."""
    path = Path(path)
    if not path.exists():
        return []
    records = []
    for line in read_bytes(path).decode("utf-8").splitlines():
        if line.strip():
            step, loss = line.split("\t")
            records.append((int(step), float(loss)))
    return records


def write_loss_log(path: PathLike, losses: Sequence[Tuple[int, float]]) -> Path:
    return atomic_write_bytes(path, format_loss_log(losses).encode("utf-8"))
