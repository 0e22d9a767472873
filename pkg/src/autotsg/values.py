"""Typed scalar values shared by contexts, query tables, and expressions.

Six value types exist: string, long, real, bool, datetime, timespan.
Every value has exactly one canonical text rendering, and parsing the
canonical rendering back under the same declared type yields an equal
value. Canonical renderings are a cross-module contract: they appear in
substituted query text, memoization keys, and serialized output, so they
must stay bit-stable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Any, Union


class Dtype(str, Enum):
    STRING = "string"
    LONG = "long"
    REAL = "real"
    BOOL = "bool"
    DATETIME = "datetime"
    TIMESPAN = "timespan"

    @classmethod
    def from_name(cls, name: str) -> "Dtype":
        try:
            return cls(name)
        except ValueError:
            raise ConversionError(
                f"unknown type {name!r}; expected one of "
                f"{', '.join(d.value for d in cls)}"
            ) from None


LONG_MIN = -(2**63)
LONG_MAX = 2**63 - 1

_COMPACT_SPAN_RE = re.compile(r"^(-?)(\d+(?:\.\d+)?)([dhms])$")
_CLOCK_SPAN_RE = re.compile(
    r"^(-?)(?:(\d+)\.)?(\d{1,2}):(\d{2}):(\d{2})(?:\.(\d{1,6}))?$"
)
_SPAN_UNIT_SECONDS = {"d": 86400.0, "h": 3600.0, "m": 60.0, "s": 1.0}


class ConversionError(ValueError):
    """Raised when raw text cannot be parsed under a declared type."""


@dataclass(frozen=True)
class ContextValue:
    """A typed scalar: the dtype tag makes equality type-aware (long 5 != "5")."""

    dtype: Dtype
    value: Any

    def __post_init__(self) -> None:
        expected = _PYTHON_TYPES[self.dtype]
        if not isinstance(self.value, expected) or (
            self.dtype is Dtype.LONG and isinstance(self.value, bool)
        ):
            raise ConversionError(
                f"{self.dtype.value} value must be {expected}, got {type(self.value)}"
            )
        if self.dtype is Dtype.DATETIME and self.value.tzinfo is None:
            object.__setattr__(self, "value", self.value.replace(tzinfo=timezone.utc))

    def render(self) -> str:
        return render_value(self.dtype, self.value)

    @staticmethod
    def string(v: str) -> "ContextValue":
        return ContextValue(Dtype.STRING, v)

    @staticmethod
    def long(v: int) -> "ContextValue":
        return ContextValue(Dtype.LONG, int(v))

    @staticmethod
    def real(v: float) -> "ContextValue":
        return ContextValue(Dtype.REAL, float(v))

    @staticmethod
    def boolean(v: bool) -> "ContextValue":
        return ContextValue(Dtype.BOOL, bool(v))

    @staticmethod
    def dt(v: datetime) -> "ContextValue":
        return ContextValue(Dtype.DATETIME, _to_utc(v))

    @staticmethod
    def span(v: timedelta) -> "ContextValue":
        return ContextValue(Dtype.TIMESPAN, v)


_PYTHON_TYPES = {
    Dtype.STRING: str,
    Dtype.LONG: int,
    Dtype.REAL: float,
    Dtype.BOOL: bool,
    Dtype.DATETIME: datetime,
    Dtype.TIMESPAN: timedelta,
}


def _to_utc(v: datetime) -> datetime:
    if v.tzinfo is None:
        return v.replace(tzinfo=timezone.utc)
    return v.astimezone(timezone.utc)


def parse_timespan(raw: str) -> timedelta:
    """Parse ``d.hh:mm:ss[.ffffff]`` (day prefix optional) or ``Nd|Nh|Nm|Ns``."""
    text = raw.strip()
    m = _COMPACT_SPAN_RE.match(text)
    if m:
        sign, amount, unit = m.groups()
        seconds = float(amount) * _SPAN_UNIT_SECONDS[unit]
        return timedelta(seconds=-seconds if sign else seconds)
    m = _CLOCK_SPAN_RE.match(text)
    if m:
        sign, days, hh, mm, ss, frac = m.groups()
        micros = int((frac or "").ljust(6, "0")) if frac else 0
        total = (
            int(days or 0) * 86400_000_000
            + int(hh) * 3600_000_000
            + int(mm) * 60_000_000
            + int(ss) * 1_000_000
            + micros
        )
        return timedelta(microseconds=-total if sign else total)
    raise ConversionError(f"cannot parse {raw!r} as timespan")


def parse_datetime(raw: str) -> datetime:
    """Parse ISO-8601 text; naive values are taken as UTC."""
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError:
        raise ConversionError(f"cannot parse {raw!r} as datetime") from None
    return _to_utc(parsed)


def render_timespan(v: timedelta) -> str:
    total = round(v.total_seconds() * 1_000_000)
    sign = "-" if total < 0 else ""
    total = abs(total)
    micros = total % 1_000_000
    seconds = total // 1_000_000
    days, rem = divmod(seconds, 86400)
    hh, rem = divmod(rem, 3600)
    mm, ss = divmod(rem, 60)
    return f"{sign}{days}.{hh:02d}:{mm:02d}:{ss:02d}.{micros:06d}"


def render_datetime(v: datetime) -> str:
    return _to_utc(v).strftime("%Y-%m-%dT%H:%M:%S.%f") + "Z"


def render_value(dtype: Dtype, value: Any) -> str:
    if dtype is Dtype.STRING:
        return value
    if dtype is Dtype.LONG:
        return str(value)
    if dtype is Dtype.REAL:
        return repr(value)
    if dtype is Dtype.BOOL:
        return "true" if value else "false"
    if dtype is Dtype.DATETIME:
        return render_datetime(value)
    if dtype is Dtype.TIMESPAN:
        return render_timespan(value)
    raise ConversionError(f"unknown dtype {dtype!r}")


def parse_value(raw: Union[str, int, float, bool], declared: Union[Dtype, str]) -> ContextValue:
    """Convert raw text (or a YAML/JSON scalar) into a value of the declared type."""
    dtype = declared if isinstance(declared, Dtype) else Dtype.from_name(declared)
    if isinstance(raw, bool):
        raw = "true" if raw else "false"
    elif isinstance(raw, (int, float)) and dtype is Dtype.TIMESPAN:
        # YAML 1.1 reads unquoted h:mm:ss as sexagesimal seconds.
        return ContextValue.span(timedelta(seconds=raw))
    elif not isinstance(raw, str):
        raw = str(raw)

    try:
        if dtype is Dtype.STRING:
            return ContextValue.string(raw)
        if dtype is Dtype.LONG:
            n = int(raw.strip())
            if not LONG_MIN <= n <= LONG_MAX:
                raise ConversionError(f"{raw!r} outside 64-bit range")
            return ContextValue.long(n)
        if dtype is Dtype.REAL:
            x = float(raw.strip())
            if x != x or x in (float("inf"), float("-inf")):
                raise ConversionError("non-finite reals are not allowed")
            return ContextValue.real(x)
        if dtype is Dtype.BOOL:
            lowered = raw.strip().lower()
            if lowered == "true":
                return ContextValue.boolean(True)
            if lowered == "false":
                return ContextValue.boolean(False)
            raise ConversionError(f"cannot parse {raw!r} as bool")
        if dtype is Dtype.DATETIME:
            return ContextValue.dt(parse_datetime(raw))
        if dtype is Dtype.TIMESPAN:
            return ContextValue.span(parse_timespan(raw))
    except ConversionError:
        raise
    except (TypeError, ValueError):
        pass
    raise ConversionError(f"cannot parse {raw!r} as {dtype.value}")
