from dataclasses import dataclass
from enum import Enum
from typing import Self, Sequence

from rich.console import Console
from rich.table import Table


class ColorMode(str, Enum):
    always = "always"
    auto = "auto"
    off = "off"


@dataclass(frozen=True)
class Consoles:
    """stdout for results and tables, stderr for logging."""
    main: Console
    error: Console

    @staticmethod
    def _create_console(color_mode: ColorMode, stderr: bool = False) -> Console:
        match color_mode:
            case ColorMode.always:
                return Console(force_terminal=True, color_system="truecolor", stderr=stderr)
            case ColorMode.off:
                return Console(force_terminal=False, color_system=None, stderr=stderr)
            case _:
                return Console(stderr=stderr)

    @classmethod
    def create(cls: type[Self], color_mode: ColorMode) -> Self:
        return cls(
            main=cls._create_console(color_mode),
            error=cls._create_console(color_mode, stderr=True),
        )


_consoles: Consoles | None = None


def initialize(color_mode: ColorMode) -> Consoles:
    global _consoles
    _consoles = Consoles.create(color_mode)
    return _consoles


def get() -> Consoles:
    if _consoles is None:
        return initialize(ColorMode.auto)
    return _consoles


def results_table(title: str, columns: Sequence[str], rows: Sequence[Sequence[object]]) -> Table:
    """Numeric columns are right-aligned; floats print with four decimals."""
    table = Table(title=title, show_header=True, header_style="bold blue")
    numeric = [bool(rows) and all(isinstance(row[i], (int, float)) for row in rows) for i in range(len(columns))]
    for name, is_numeric in zip(columns, numeric):
        table.add_column(name, justify="right" if is_numeric else "left")
    for row in rows:
        table.add_row(*(f"{cell:.4f}" if isinstance(cell, float) else str(cell) for cell in row))
    return table
