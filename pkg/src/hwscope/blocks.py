"""Render block types for report output.

Reports are built as a flat list of blocks and turned into text by one of
the formatters, so the same report renders as plain text, markdown or a
colored terminal view.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Style(Enum):
    """Style hints for rendering."""

    # Text styles
    BOLD = "bold"
    DIM = "dim"

    # Semantic styles
    SUCCESS = "success"
    WARNING = "warning"
    INFO = "info"

    # Report roles
    ANOMALY = "anomaly"
    EVIDENCE = "evidence"


@dataclass
class RenderBlock:
    """Base class for rendering primitives."""

    styles: set[Style] = field(default_factory=set)


@dataclass
class HeaderBlock(RenderBlock):
    text: str = ""
    level: int = 1
    suffix: str = ""  # styled independently (e.g. host count)


@dataclass
class TextBlock(RenderBlock):
    text: str = ""
    indent: int = 0


@dataclass
class KeyValueBlock(RenderBlock):
    key: str = ""
    value: str = ""
    indent: int = 0


@dataclass
class DividerBlock(RenderBlock):
    char: str = "─"
    width: int = 40


@dataclass
class ListBlock(RenderBlock):
    items: list[str] = field(default_factory=list)
    indent: int = 0
    bullet: str = "*"


@dataclass
class TableBlock(RenderBlock):
    """Rows of cells under a header; every row has len(headers) cells."""

    headers: list[str] = field(default_factory=list)
    rows: list[list[str]] = field(default_factory=list)

    def widths(self) -> list[int]:
        widths = [len(h) for h in self.headers]
        for row in self.rows:
            for i, cell in enumerate(row):
                widths[i] = max(widths[i], len(cell))
        return widths


@dataclass
class SpacerBlock(RenderBlock):
    lines: int = 1
