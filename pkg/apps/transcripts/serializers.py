from rest_framework import serializers

from apps.core.serializers import IntervalRowSerializer


class UtteranceRowSerializer(IntervalRowSerializer):
    utt_id = serializers.CharField(max_length=255)
    speaker = serializers.CharField(required=False, allow_null=True, allow_blank=True, default=None)
    text = serializers.CharField()
