from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence


@dataclass(slots=True)
class Table:
    """Column-oriented payload shared by every writer."""

    columns: Sequence[str]
    rows: Sequence[Sequence]
    title: str = ""
    notes: list = field(default_factory=list)


class BaseWriter:
    suffix: str = ""
    summaries_only: bool = False

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)

    def write(self, name: str, payload: Table) -> Path:
        raise NotImplementedError("Subclasses must implement this method")

    def path_for(self, name: str) -> Path:
        return self.out_dir / f"{name}{self.suffix}"


def format_value(column: str, value) -> str:
    """Microsecond columns get 4 decimals, other numbers 9 significant digits."""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, int)) and not column.endswith("_us"):
        return str(value)
    if column.endswith("_us"):
        return f"{float(value):.4f}"
    return f"{float(value):.9g}"
