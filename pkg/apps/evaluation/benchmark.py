import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from rest_framework import serializers

from apps.core.exceptions import BenchmarkError, InvalidEnumError
from apps.core.serializers import DayTimeField, first_error
from apps.core.types import DayTime

logger = logging.getLogger(__name__)

LETTERS = 'ABCD'


class Category(str, Enum):
    ENTITY_LOG = 'EntityLog'
    EVENT_RECALL = 'EventRecall'
    HABIT_INSIGHT = 'HabitInsight'
    RELATION_MAP = 'RelationMap'
    TASK_MASTER = 'TaskMaster'

    @classmethod
    def parse(cls, value: Any) -> Optional['Category']:
        if value is None or value == '':
            return None
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower().replace('_', '').replace(' ', '')
        for member in cls:
            if member.value.lower() == text:
                return member
        raise InvalidEnumError(f"unknown question category: {value!r}")


@dataclass(frozen=True)
class MCQItem:
    qid: str
    question: str
    candidates: Tuple[str, str, str, str]
    gold: int
    query_time: DayTime
    category: Optional[Category] = None
    target_times: Tuple[DayTime, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'candidates', tuple(self.candidates))
        object.__setattr__(self, 'target_times', tuple(self.target_times))
        if len(self.candidates) != 4:
            raise BenchmarkError(f"expected 4 candidates, got {len(self.candidates)}", qid=self.qid)
        if not 0 <= self.gold < 4:
            raise BenchmarkError(f"gold index {self.gold} out of range", qid=self.qid)
        late = [t for t in self.target_times if t > self.query_time]
        if late:
            raise BenchmarkError(f"target time {late[0]} is after query time {self.query_time}", qid=self.qid)

    @property
    def gold_letter(self) -> str:
        return LETTERS[self.gold]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'qid': self.qid,
            'question': self.question,
            'candidates': list(self.candidates),
            'gold': self.gold,
            'category': self.category.value if self.category else None,
            'query_time': self.query_time.format(),
            'target_times': [t.format() for t in self.target_times],
        }


class MCQItemSerializer(serializers.Serializer):
    qid = serializers.CharField()
    question = serializers.CharField()
    candidates = serializers.ListField(child=serializers.CharField(), min_length=4, max_length=4)
    gold = serializers.JSONField()
    category = serializers.CharField(required=False, allow_null=True, allow_blank=True, default=None)
    query_time = DayTimeField()
    target_times = serializers.ListField(child=DayTimeField(), required=False, default=list)

    def validate_gold(self, value):
        # Index 0..3 or a letter A..D
        if isinstance(value, str) and value.strip().upper() in LETTERS and len(value.strip()) == 1:
            return LETTERS.index(value.strip().upper())
        if isinstance(value, int) and not isinstance(value, bool) and 0 <= value < 4:
            return value
        raise serializers.ValidationError(f"gold must be 0..3 or A..D, got {value!r}")

    def validate_category(self, value):
        try:
            return Category.parse(value)
        except InvalidEnumError as e:
            raise serializers.ValidationError(str(e))

    def validate(self, data):
        late = [t for t in data['target_times'] if t > data['query_time']]
        if late:
            raise serializers.ValidationError(
                f"target time {late[0]} is after query time {data['query_time']}"
            )
        return data


def load_benchmark(path: Union[str, Path]) -> List[MCQItem]:
    """A JSON array of items; any invalid item fails the load, naming its qid."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError:
        raise BenchmarkError(f"benchmark not found: {path}") from None
    except json.JSONDecodeError as e:
        raise BenchmarkError(f"{path}: invalid JSON at line {e.lineno} ({e.msg})") from None

    if isinstance(data, dict):
        data = data.get('items')
    if not isinstance(data, list):
        raise BenchmarkError(f"{path}: expected a JSON array of items")

    items: List[MCQItem] = []
    seen = set()
    for position, row in enumerate(data):
        qid = row.get('qid') if isinstance(row, dict) else None
        qid = qid or f"#{position}"
        serializer = MCQItemSerializer(data=row)
        if not serializer.is_valid():
            raise BenchmarkError(first_error(serializer.errors), qid=qid)
        if qid in seen:
            raise BenchmarkError("duplicate qid", qid=qid)
        seen.add(qid)
        items.append(MCQItem(**serializer.validated_data))

    logger.info(f"Loaded {len(items)} benchmark items from {path}")
    return items
