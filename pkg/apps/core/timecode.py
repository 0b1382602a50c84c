"""
HHMMSS integer time codes.

Times are stored as hour*10000 + minute*100 + second, the same integer layout
as the start_t / end_t columns of the entity graph table (132609 is 13:26:09).
"""
import re
from typing import Tuple

from apps.core.exceptions import InvalidTimeError

MAX_CODE = 235959
SECONDS_PER_DAY = 86400

# "D4 11:34:00" or "11:34:00"
TIMESTAMP_RE = re.compile(r'\b(?:D(?P<day>\d+)\s+)?(?P<h>\d{1,2}):(?P<m>\d{2}):(?P<s>\d{2})\b')


def encode_time(hour: int, minute: int, second: int) -> int:
    if not 0 <= hour < 24:
        raise InvalidTimeError(f"hour out of range: {hour}")
    if not 0 <= minute < 60:
        raise InvalidTimeError(f"minute out of range: {minute}")
    if not 0 <= second < 60:
        raise InvalidTimeError(f"second out of range: {second}")
    return hour * 10000 + minute * 100 + second


def decode_time(code: int) -> Tuple[int, int, int]:
    if isinstance(code, bool) or not isinstance(code, int):
        raise InvalidTimeError(f"time code must be an integer, got {code!r}")
    if not 0 <= code <= MAX_CODE:
        raise InvalidTimeError(f"time code out of range: {code}")
    hour, rest = divmod(code, 10000)
    minute, second = divmod(rest, 100)
    if minute >= 60 or second >= 60:
        raise InvalidTimeError(f"invalid minute/second digits in {code:06d}")
    return hour, minute, second


def validate_code(code: int) -> int:
    decode_time(code)
    return code


def code_to_seconds(code: int) -> int:
    hour, minute, second = decode_time(code)
    return hour * 3600 + minute * 60 + second


def seconds_to_code(seconds: int) -> int:
    if not 0 <= seconds < SECONDS_PER_DAY:
        raise InvalidTimeError(f"seconds of day out of range: {seconds}")
    hour, rest = divmod(seconds, 3600)
    minute, second = divmod(rest, 60)
    return encode_time(hour, minute, second)


def format_code(code: int) -> str:
    hour, minute, second = decode_time(code)
    return f"{hour:02d}:{minute:02d}:{second:02d}"


def parse_clock(text: str) -> int:
    """'13:26:09' -> 132609"""
    parts = text.strip().split(':')
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise InvalidTimeError(f"expected HH:MM:SS, got {text!r}")
    return encode_time(int(parts[0]), int(parts[1]), int(parts[2]))
