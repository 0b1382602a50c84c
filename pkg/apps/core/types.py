"""
Domain value types shared by every app.

All of them are immutable and safe to share between threads.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from apps.core.exceptions import InvalidEnumError, InvalidTimeError
from apps.core.timecode import (
    TIMESTAMP_RE, code_to_seconds, encode_time, format_code, parse_clock, validate_code,
)


@dataclass(frozen=True, order=True)
class DayTime:
    day: int
    time_hhmmss: int

    def __post_init__(self):
        if isinstance(self.day, bool) or not isinstance(self.day, int) or self.day < 1:
            raise InvalidTimeError(f"day must be an integer >= 1, got {self.day!r}")
        validate_code(self.time_hhmmss)

    @classmethod
    def parse(cls, text: str) -> 'DayTime':
        """Parse 'D4 11:34:00'."""
        value = (text or '').strip()
        if not value.upper().startswith('D') or ' ' not in value:
            raise InvalidTimeError(f"expected 'D<day> HH:MM:SS', got {text!r}")
        day_part, clock = value.split(None, 1)
        if not day_part[1:].isdigit():
            raise InvalidTimeError(f"invalid day in {text!r}")
        return cls(int(day_part[1:]), parse_clock(clock))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DayTime':
        return cls(int(data['day']), int(data['t']))

    def to_dict(self) -> Dict[str, int]:
        return {'day': self.day, 't': self.time_hhmmss}

    def format(self) -> str:
        return f"D{self.day} {format_code(self.time_hhmmss)}"

    @property
    def seconds_of_day(self) -> int:
        return code_to_seconds(self.time_hhmmss)

    def absolute_seconds(self, day_length_s: int = 86400) -> int:
        return (self.day - 1) * day_length_s + self.seconds_of_day

    def __str__(self):
        return self.format()


def seconds_between(a: DayTime, b: DayTime, day_length_s: int = 86400) -> int:
    if day_length_s <= 0:
        raise InvalidTimeError(f"day_length_s must be positive, got {day_length_s}")
    return abs(a.absolute_seconds(day_length_s) - b.absolute_seconds(day_length_s))


@dataclass(frozen=True, order=True)
class TimeInterval:
    start: DayTime
    end: DayTime

    def __post_init__(self):
        if self.start.day != self.end.day:
            raise InvalidTimeError(
                f"interval crosses a day boundary: {self.start} -> {self.end}"
            )
        if self.start > self.end:
            raise InvalidTimeError(f"interval start after end: {self.start} -> {self.end}")

    @classmethod
    def on_day(cls, day: int, start_t: int, end_t: int) -> 'TimeInterval':
        return cls(DayTime(day, start_t), DayTime(day, end_t))

    @property
    def day(self) -> int:
        return self.start.day

    @property
    def start_t(self) -> int:
        return self.start.time_hhmmss

    @property
    def end_t(self) -> int:
        return self.end.time_hhmmss

    def intersects_half_open(self, other: 'TimeInterval') -> bool:
        """[start, end) intersection; touching endpoints do not count."""
        return self.start < other.end and other.start < self.end

    def intersects(self, start: DayTime, end: DayTime) -> bool:
        """Closed intersection with [start, end]."""
        return self.start <= end and start <= self.end

    def contains(self, moment: DayTime) -> bool:
        return self.start <= moment <= self.end

    def format(self) -> str:
        return f"D{self.day} {format_code(self.start_t)}-{format_code(self.end_t)}"


def hull(intervals: List[TimeInterval]) -> TimeInterval:
    return TimeInterval(min(i.start for i in intervals), max(i.end for i in intervals))


class EntityType(str, Enum):
    PERSON = 'Person'
    OBJECT = 'Object'
    LOCATION = 'Location'

    @classmethod
    def parse(cls, value: Any) -> 'EntityType':
        if isinstance(value, cls):
            return value
        text = str(value or '').strip().lower()
        for member in cls:
            if member.value.lower() == text:
                return member
        raise InvalidEnumError(f"unknown entity type: {value!r}")

    def __str__(self):
        return self.value


class RelationType(str, Enum):
    TALKS_TO = 'TALKS_TO'
    INTERACTS_WITH = 'INTERACTS_WITH'
    MENTIONS = 'MENTIONS'
    USES = 'USES'

    @classmethod
    def parse(cls, value: Any) -> 'RelationType':
        if isinstance(value, cls):
            return value
        text = str(value or '').strip().upper().replace('-', '_').replace(' ', '_')
        try:
            return cls(text)
        except ValueError:
            raise InvalidEnumError(f"unknown relation type: {value!r}") from None

    def __str__(self):
        return self.value


def normalize_id(value: str) -> str:
    return (value or '').strip().lower()


@dataclass(frozen=True)
class EntityRef:
    id: str
    etype: EntityType

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id.strip():
            raise InvalidEnumError("entity id must be a non-empty string")
        if isinstance(self.id, bool) or self.id.strip().isdigit():
            raise InvalidEnumError(f"entity id must be a name, not an integer: {self.id!r}")
        object.__setattr__(self, 'etype', EntityType.parse(self.etype))

    @property
    def key(self) -> str:
        return normalize_id(self.id)

    def to_dict(self) -> Dict[str, str]:
        return {'id': self.id, 'type': self.etype.value}


def find_timestamps(text: str, default_day: Optional[int] = None) -> List[DayTime]:
    """
    Pull every 'D<d> HH:MM:SS' or bare 'HH:MM:SS' citation out of free text.
    Bare clocks take default_day; without one they are skipped. Malformed
    clocks are ignored.
    """
    found: List[DayTime] = []
    for match in TIMESTAMP_RE.finditer(text or ''):
        day = match.group('day')
        day = int(day) if day is not None else default_day
        if day is None or day < 1:
            continue
        try:
            code = encode_time(int(match.group('h')), int(match.group('m')), int(match.group('s')))
        except InvalidTimeError:
            continue
        moment = DayTime(day, code)
        if moment not in found:
            found.append(moment)
    return found


class ToolName(str, Enum):
    ENTITY_GRAPH = 'eg'
    VISUAL = 'visual'
    AUDIO = 'audio'

    @classmethod
    def parse(cls, value: Any) -> 'ToolName':
        if isinstance(value, cls):
            return value
        text = str(value or '').strip().lower().replace('-', '_').replace(' ', '_')
        aliases = {
            'entitygraph': cls.ENTITY_GRAPH, 'entity_graph': cls.ENTITY_GRAPH, 'graph': cls.ENTITY_GRAPH,
            'frames': cls.VISUAL, 'video': cls.VISUAL, 'f': cls.VISUAL,
            'transcript': cls.AUDIO, 'transcripts': cls.AUDIO, 't': cls.AUDIO,
        }
        if text in aliases:
            return aliases[text]
        try:
            return cls(text)
        except ValueError:
            raise InvalidEnumError(f"unknown tool: {value!r}") from None

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class AnalysisNote:
    """One working-memory entry: what a retriever tool found for a sub-task."""
    subtask_index: int
    tool: ToolName
    summary: str
    cited_timestamps: Tuple[DayTime, ...] = ()
    cited_edges: Tuple[int, ...] = ()
    retrieved_count: int = 0
    retrieved_timestamps: Tuple[DayTime, ...] = ()
    error: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'tool', ToolName.parse(self.tool))
        object.__setattr__(self, 'cited_timestamps', tuple(self.cited_timestamps))
        object.__setattr__(self, 'cited_edges', tuple(int(e) for e in self.cited_edges))
        object.__setattr__(self, 'retrieved_timestamps', tuple(self.retrieved_timestamps))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'subtask_index': self.subtask_index,
            'tool': self.tool.value,
            'summary': self.summary,
            'cited_timestamps': [t.format() for t in self.cited_timestamps],
            'cited_edges': list(self.cited_edges),
            'retrieved_count': self.retrieved_count,
            'retrieved_timestamps': [t.format() for t in self.retrieved_timestamps],
            'error': self.error,
        }

    def render(self) -> str:
        """Plain-text form handed to later prompts as working memory."""
        head = f"[{self.subtask_index}:{self.tool.value}]"
        if self.error:
            return f"{head} tool error: {self.error}"
        cited = ', '.join(t.format() for t in self.cited_timestamps)
        return f"{head} {self.summary}" + (f" (cited: {cited})" if cited else '')
