"""Wall-clock base for rendering window timestamps.

Window start times are relative to the trace epoch. Reports show them as
wall-clock times when an epoch is known, given either as a date/time string,
as Unix milliseconds, or as `trace` (the trace's own minimum timestamp is
taken to be Unix milliseconds).
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

from dateutil.parser import ParserError
from dateutil.parser import parse as dateutil_parse

from .errors import ConfigError

TRACE_EPOCH = "trace"


def _ensure_aware(dt: datetime) -> datetime:
    """Ensure a datetime is timezone-aware (assume UTC if naive)."""
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def from_unix_ms(ms: int) -> datetime:
    return datetime.fromtimestamp(ms / 1000.0, tz=timezone.utc)


def parse_epoch(text: str, trace_epoch_ms: int | None = None) -> datetime:
    """Parse an `--epoch` value into an aware UTC datetime.

    Accepts `trace`, Unix milliseconds (all digits) or anything dateutil
    understands (2026-03-17T10:32:00Z, "March 17 2026 10:32").

    Raises:
        ConfigError: unparseable text, or `trace` without a trace epoch.
    """
    text = text.strip()
    if not text:
        raise ConfigError("empty epoch")
    if text == TRACE_EPOCH:
        if trace_epoch_ms is None:
            raise ConfigError("epoch 'trace' needs a loaded trace")
        return from_unix_ms(trace_epoch_ms)
    if text.isdigit():
        return from_unix_ms(int(text))
    try:
        return _ensure_aware(dateutil_parse(text))
    except (ParserError, ValueError, OverflowError) as e:
        raise ConfigError(f"cannot parse epoch {text!r}") from e


def wall_time(epoch: datetime | None, offset_ms: int) -> str | None:
    """`HH:MM:SS` of `epoch + offset_ms`, or None without an epoch."""
    if epoch is None:
        return None
    return (epoch + timedelta(milliseconds=offset_ms)).strftime("%H:%M:%S")


def format_offset(offset_ms: int) -> str:
    """Relative time label used when no epoch is known, e.g. `t+37.0s`."""
    return f"t+{offset_ms / 1000:.1f}s"
