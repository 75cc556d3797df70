"""Output formatters turning render blocks into text.

PlainFormatter produces the fixed-width text report, MarkdownFormatter pipe
tables, ANSIFormatter the colored terminal view.
"""

from __future__ import annotations

from abc import ABC
from typing import Any

from .blocks import (
    DividerBlock,
    HeaderBlock,
    KeyValueBlock,
    ListBlock,
    RenderBlock,
    SpacerBlock,
    Style,
    TableBlock,
    TextBlock,
)
from .errors import ConfigError

COLUMN_GAP = "  "


class Formatter(ABC):
    """Base class for output formatters."""

    def _indent(self, text: str, level: int) -> str:
        if level <= 0:
            return text
        prefix = "  " * level
        return "\n".join(prefix + line for line in text.split("\n"))

    def format(self, blocks: list[RenderBlock]) -> str:
        """Convert render blocks to a formatted string."""
        lines: list[str] = []
        for block in blocks:
            formatted = self.format_block(block)
            if formatted:
                lines.append(formatted)
        return "\n".join(lines) + "\n"

    def format_block(self, block: RenderBlock) -> str:
        handler = self._block_handlers.get(type(block))
        if handler:
            return handler(self, block)
        return ""

    # Subclasses populate this with {BlockType: handler_method}
    _block_handlers: dict[type, Any] = {}

    def _format_spacer(self, block: SpacerBlock) -> str:
        return "\n" * (block.lines - 1)  # join adds one

    def _fixed_width(self, block: TableBlock) -> list[str]:
        widths = block.widths()
        lines = [COLUMN_GAP.join(h.ljust(w) for h, w in zip(block.headers, widths)).rstrip()]
        lines.append(COLUMN_GAP.join("-" * w for w in widths))
        for row in block.rows:
            lines.append(COLUMN_GAP.join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        return lines


class PlainFormatter(Formatter):
    """Plain text, tables as fixed-width columns."""

    def _format_header(self, block: HeaderBlock) -> str:
        text = block.text
        if block.suffix:
            text += f" {block.suffix}"
        if block.level == 1:
            return f"{text}\n{'=' * len(text)}"
        return text

    def _format_text(self, block: TextBlock) -> str:
        return self._indent(block.text, block.indent)

    def _format_keyvalue(self, block: KeyValueBlock) -> str:
        return self._indent(f"{block.key}: {block.value}", block.indent)

    def _format_divider(self, block: DividerBlock) -> str:
        return block.char * block.width

    def _format_list(self, block: ListBlock) -> str:
        lines = [f"{block.bullet} {item}" for item in block.items]
        return self._indent("\n".join(lines), block.indent)

    def _format_table(self, block: TableBlock) -> str:
        return "\n".join(self._fixed_width(block))

    _block_handlers = {
        HeaderBlock: _format_header,
        TextBlock: _format_text,
        KeyValueBlock: _format_keyvalue,
        DividerBlock: _format_divider,
        ListBlock: _format_list,
        TableBlock: _format_table,
        SpacerBlock: Formatter._format_spacer,
    }


class MarkdownFormatter(Formatter):
    """Markdown with pipe tables."""

    def _apply_styles(self, text: str, styles: set[Style]) -> str:
        if Style.BOLD in styles or Style.ANOMALY in styles:
            text = f"**{text}**"
        return text

    def _format_header(self, block: HeaderBlock) -> str:
        text = f"{'#' * min(block.level, 6)} {block.text}"
        if block.suffix:
            text += f" {block.suffix}"
        return text

    def _format_text(self, block: TextBlock) -> str:
        return self._indent(self._apply_styles(block.text, block.styles), block.indent)

    def _format_keyvalue(self, block: KeyValueBlock) -> str:
        return self._indent(f"**{block.key}:** {block.value}", block.indent)

    def _format_divider(self, block: DividerBlock) -> str:
        return "---"

    def _format_list(self, block: ListBlock) -> str:
        lines = [f"- {item}" for item in block.items]
        return self._indent("\n".join(lines), block.indent)

    def _format_table(self, block: TableBlock) -> str:
        def row(cells: list[str]) -> str:
            escaped = [c.replace("|", "\\|") for c in cells]
            return "| " + " | ".join(escaped) + " |"

        lines = [row(block.headers), "|" + "|".join("---" for _ in block.headers) + "|"]
        lines.extend(row(r) for r in block.rows)
        return "\n".join(lines)

    _block_handlers = {
        HeaderBlock: _format_header,
        TextBlock: _format_text,
        KeyValueBlock: _format_keyvalue,
        DividerBlock: _format_divider,
        ListBlock: _format_list,
        TableBlock: _format_table,
        SpacerBlock: Formatter._format_spacer,
    }


class ANSIFormatter(Formatter):
    """Terminal output with ANSI colors."""

    RESET = "\033[0m"
    BOLD = "\033[1m"
    DIM = "\033[2m"

    GREEN = "\033[32m"
    YELLOW = "\033[33m"
    CYAN = "\033[36m"
    MAGENTA = "\033[35m"

    STYLE_MAP: dict[Style, str] = {
        Style.BOLD: BOLD,
        Style.DIM: DIM,
        Style.SUCCESS: GREEN,
        Style.WARNING: YELLOW,
        Style.INFO: CYAN,
        Style.ANOMALY: MAGENTA,
        Style.EVIDENCE: DIM,
    }

    def _apply_styles(self, text: str, styles: set[Style]) -> str:
        if not styles:
            return text
        codes = "".join(self.STYLE_MAP.get(s, "") for s in sorted(styles, key=lambda s: s.value))
        if codes:
            return f"{codes}{text}{self.RESET}"
        return text

    def _format_header(self, block: HeaderBlock) -> str:
        text = self._apply_styles(block.text, block.styles | {Style.BOLD})
        if block.suffix:
            text += self._apply_styles(f" {block.suffix}", {Style.DIM})
        return text

    def _format_text(self, block: TextBlock) -> str:
        return self._indent(self._apply_styles(block.text, block.styles), block.indent)

    def _format_keyvalue(self, block: KeyValueBlock) -> str:
        key = self._apply_styles(f"{block.key}:", {Style.BOLD})
        value = self._apply_styles(block.value, block.styles)
        return self._indent(f"{key} {value}", block.indent)

    def _format_divider(self, block: DividerBlock) -> str:
        return self._apply_styles(block.char * block.width, block.styles)

    def _format_list(self, block: ListBlock) -> str:
        lines = [f"{block.bullet} {item}" for item in block.items]
        return self._indent(self._apply_styles("\n".join(lines), block.styles), block.indent)

    def _format_table(self, block: TableBlock) -> str:
        lines = self._fixed_width(block)
        lines[0] = self._apply_styles(lines[0], {Style.BOLD})
        lines[1] = self._apply_styles(lines[1], {Style.DIM})
        if block.styles:
            lines[2:] = [self._apply_styles(line, block.styles) for line in lines[2:]]
        return "\n".join(lines)

    _block_handlers = {
        HeaderBlock: _format_header,
        TextBlock: _format_text,
        KeyValueBlock: _format_keyvalue,
        DividerBlock: _format_divider,
        ListBlock: _format_list,
        TableBlock: _format_table,
        SpacerBlock: Formatter._format_spacer,
    }


FORMATTERS: dict[str, type[Formatter]] = {
    "plain": PlainFormatter,
    "markdown": MarkdownFormatter,
    "ansi": ANSIFormatter,
}


def get_formatter(name: str) -> Formatter:
    try:
        return FORMATTERS[name]()
    except KeyError:
        raise ConfigError(f"unknown format {name!r}; choose from {', '.join(FORMATTERS)}") from None
