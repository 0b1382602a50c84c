from rest_framework import serializers

from apps.core.serializers import TimeCodeField


class FrameRowSerializer(serializers.Serializer):
    frame_id = serializers.CharField(max_length=255)
    day = serializers.IntegerField(min_value=1)
    t = TimeCodeField()
    location = serializers.CharField(required=False, allow_null=True, allow_blank=True, default=None)
    embedding = serializers.ListField(child=serializers.FloatField(), allow_empty=False)

    def validate_embedding(self, value):
        dim = self.context.get('dim')
        if dim is not None and len(value) != dim:
            raise serializers.ValidationError(f"expected {dim} values, got {len(value)}")
        return value


class FrameHeaderSerializer(serializers.Serializer):
    dim = serializers.IntegerField(min_value=1)
