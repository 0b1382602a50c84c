from rest_framework import serializers

from apps.core.exceptions import InvalidEnumError
from apps.core.serializers import IntervalRowSerializer
from apps.core.types import EntityRef, EntityType, RelationType


class CaptionRowSerializer(IntervalRowSerializer):
    doc_id = serializers.CharField(max_length=255)
    text = serializers.CharField(trim_whitespace=False)


class EdgeRowSerializer(IntervalRowSerializer):
    """One line of an entity_graph_table JSONL export."""
    id = serializers.IntegerField(required=False, allow_null=True)
    transcript = serializers.CharField(required=False, allow_blank=True, default='', trim_whitespace=False)
    source_id = serializers.CharField(trim_whitespace=False)
    source_type = serializers.CharField()
    target_id = serializers.CharField(trim_whitespace=False)
    target_type = serializers.CharField()
    rel_type = serializers.CharField()

    def validate_source_type(self, value):
        return self._entity_type(value)

    def validate_target_type(self, value):
        return self._entity_type(value)

    def validate_rel_type(self, value):
        try:
            return RelationType.parse(value).value
        except InvalidEnumError as e:
            raise serializers.ValidationError(str(e))

    @staticmethod
    def _entity_type(value):
        try:
            return EntityType.parse(value).value
        except InvalidEnumError as e:
            raise serializers.ValidationError(str(e))

    def validate(self, data):
        data = super().validate(data)
        for side in ('source', 'target'):
            try:
                EntityRef(data[f'{side}_id'], data[f'{side}_type'])
            except InvalidEnumError as e:
                raise serializers.ValidationError({f'{side}_id': str(e)})
        return data
