"""Exception types raised across the pipeline.

Every error carries the name of the pipeline stage that raised it so the CLI
can print `error: [module] message` without guessing where it came from.
"""

from __future__ import annotations


class HwscopeError(ValueError):
    """Base class for all pipeline errors."""

    module: str = "hwscope"

    def __init__(self, message: str, module: str | None = None):
        if module is not None:
            self.module = module
        self.message = message
        super().__init__(f"[{self.module}] {message}")


class CorruptTraceError(HwscopeError):
    """More than half of a trace's records could not be parsed."""

    module = "ingest"


class InsufficientDataError(HwscopeError):
    """Too few channels, windows or observations for the requested operation."""


class DegenerateMatrixError(HwscopeError):
    """A feature matrix has no usable (non-constant) columns."""

    module = "detectors"


class WindowMismatchError(HwscopeError):
    """Detector results do not cover the same windows."""

    module = "detectors"


class ConfigError(HwscopeError):
    """Invalid configuration or command-line value."""

    module = "config"
