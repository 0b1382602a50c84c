import json

from rest_framework import serializers

from apps.core.exceptions import InvalidTimeError
from apps.core.timecode import validate_code
from apps.core.types import DayTime


class TimeCodeField(serializers.IntegerField):
    """HHMMSS integer (132609 is 13:26:09)."""

    def to_internal_value(self, data):
        value = super().to_internal_value(data)
        try:
            return validate_code(value)
        except InvalidTimeError as e:
            raise serializers.ValidationError(str(e))


class DayTimeField(serializers.Field):
    """Accepts "D4 11:34:00" or {"day": 4, "t": 113400}."""

    def to_internal_value(self, data):
        try:
            if isinstance(data, dict):
                return DayTime.from_dict(data)
            return DayTime.parse(str(data))
        except (KeyError, TypeError, ValueError) as e:
            raise serializers.ValidationError(f"invalid day/time {data!r}: {e}")

    def to_representation(self, value):
        return value.format()


class IntervalRowSerializer(serializers.Serializer):
    """Common day/start_t/end_t columns of every ingested row."""
    day = serializers.IntegerField(min_value=1)
    start_t = TimeCodeField()
    end_t = TimeCodeField()

    def validate(self, data):
        if data['start_t'] > data['end_t']:
            raise serializers.ValidationError("start_t must not be after end_t")
        return data


def first_error(errors) -> str:
    """Flatten a serializer's error dict into one 'field: message' line."""
    if isinstance(errors, dict):
        for field, messages in errors.items():
            message = first_error(messages)
            return message if field == 'non_field_errors' else f"{field}: {message}"
    if isinstance(errors, list) and errors:
        return first_error(errors[0])
    return str(errors)


def read_rows(path, serializer_class, error_class, context=None):
    """
    Validate a JSONL file row by row. Returns a list of (line number,
    validated data); the first bad line raises error_class naming it.
    """
    rows = []
    with open(path, encoding='utf-8') as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise error_class(f"{path} line {lineno}: invalid JSON ({e.msg})") from None
            serializer = serializer_class(data=data, context=context or {})
            if not serializer.is_valid():
                raise error_class(f"{path} line {lineno}: {first_error(serializer.errors)}")
            rows.append((lineno, serializer.validated_data))
    return rows
