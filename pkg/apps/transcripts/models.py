from django.db import models


class UtteranceRecord(models.Model):
    utt_id = models.CharField(max_length=255, unique=True)
    speaker = models.CharField(max_length=255, blank=True, null=True)
    day = models.IntegerField()
    start_t = models.IntegerField()  # HHMMSS
    end_t = models.IntegerField()  # HHMMSS
    text = models.TextField()

    class Meta:
        indexes = [
            models.Index(fields=['day', 'start_t'], name='utterance_day_start_idx'),
        ]
        ordering = ['day', 'start_t', 'end_t', 'utt_id']

    def __str__(self):
        speaker = f"{self.speaker}: " if self.speaker else ''
        return f"{self.utt_id} D{self.day} {self.start_t:06d} {speaker}{self.text[:40]}"
