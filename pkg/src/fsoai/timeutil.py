"""UTC datestamp helpers. Everything internal is an aware datetime at second granularity."""

from __future__ import annotations

import re
from datetime import datetime, timedelta, timezone
from email.utils import format_datetime, parsedate_to_datetime

SECONDS_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

_DAY_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_SECONDS_RE = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z$")


def utcnow() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def from_timestamp(ts: float) -> datetime:
    return datetime.fromtimestamp(int(ts), timezone.utc)


def to_timestamp(dt: datetime) -> int:
    return int(dt.timestamp())


def format_datestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime(SECONDS_FORMAT)


def granularity_of(value: str) -> str | None:
    """Return "day" or "seconds" for a legal OAI date string, else None."""
    if _DAY_RE.match(value):
        return "day"
    if _SECONDS_RE.match(value):
        return "seconds"
    return None


def parse_datestamp(value: str, *, end_of_day: bool = False) -> datetime:
    """Parse YYYY-MM-DD or YYYY-MM-DDThh:mm:ssZ.

    Day-granularity values are widened: to 00:00:00 by default, to 23:59:59
    when ``end_of_day`` is set (used for ``until``).
    """
    kind = granularity_of(value)
    if kind == "day":
        dt = datetime.strptime(value, "%Y-%m-%d").replace(tzinfo=timezone.utc)
        if end_of_day:
            dt += timedelta(hours=23, minutes=59, seconds=59)
        return dt
    if kind == "seconds":
        return datetime.strptime(value, SECONDS_FORMAT).replace(tzinfo=timezone.utc)
    raise ValueError(f"not an OAI datestamp: {value!r}")


def http_date(dt: datetime) -> str:
    return format_datetime(dt.astimezone(timezone.utc), usegmt=True)


def parse_http_date(value: str) -> datetime | None:
    try:
        dt = parsedate_to_datetime(value)
    except (TypeError, ValueError, IndexError):
        return None
    if dt is None:
        return None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)
