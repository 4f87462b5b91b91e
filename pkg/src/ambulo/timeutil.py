"""UTC millisecond timestamps and participant-local calendar days."""

from __future__ import annotations

import datetime as _dt
import re

import numpy as np

MS_PER_S = 1000
MS_PER_DAY = 86_400_000

_OFFSET_RE = re.compile(r"^(?:UTC)?([+-])(\d{1,2}):?(\d{2})$")


def parse_offset(value) -> int:
    """Return a UTC offset in minutes from an int or a '+HH:MM' / 'UTC-04:00' string."""
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, float) and value.is_integer():
        return int(value)
    text = str(value).strip()
    if text in ("Z", "UTC", "0"):
        return 0
    m = _OFFSET_RE.match(text)
    if not m:
        raise ValueError(f"unrecognized UTC offset {value!r}")
    sign = -1 if m.group(1) == "-" else 1
    hours, minutes = int(m.group(2)), int(m.group(3))
    if hours > 14 or minutes >= 60:
        raise ValueError(f"UTC offset out of range: {value!r}")
    return sign * (hours * 60 + minutes)


def local_day_index(t_ms, offset_min: int):
    """Integer day number (days since 1970-01-01, local) for each timestamp."""
    t = np.asarray(t_ms, dtype=np.int64)
    return np.floor_divide(t + np.int64(offset_min) * 60_000, MS_PER_DAY)


def day_to_date(day_index: int) -> _dt.date:
    return _dt.date(1970, 1, 1) + _dt.timedelta(days=int(day_index))


def local_ms_of_day(t_ms, offset_min: int):
    """Milliseconds elapsed since local midnight."""
    t = np.asarray(t_ms, dtype=np.int64)
    return np.mod(t + np.int64(offset_min) * 60_000, MS_PER_DAY)


def parse_clock(text: str) -> int:
    """'HH:MM' -> milliseconds after midnight."""
    hh, mm = str(text).split(":")
    h, m = int(hh), int(mm)
    if not (0 <= h <= 24 and 0 <= m < 60) or (h == 24 and m):
        raise ValueError(f"bad clock time {text!r}")
    return (h * 60 + m) * 60_000


def iso_utc(t_ms: int) -> str:
    return _dt.datetime.fromtimestamp(t_ms / 1000, tz=_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3] + "Z"
