from django.db import models


class FrameRecordModel(models.Model):
    """One 1 FPS frame; embedding is little-endian float32 bytes of length dim * 4."""
    frame_id = models.CharField(max_length=255, unique=True)
    day = models.IntegerField()
    t = models.IntegerField()  # HHMMSS
    location = models.CharField(max_length=255, blank=True, null=True)
    dim = models.PositiveIntegerField()
    embedding = models.BinaryField()

    class Meta:
        indexes = [
            models.Index(fields=['day', 't'], name='frame_day_t_idx'),
        ]
        ordering = ['day', 't', 'frame_id']

    def __str__(self):
        return f"{self.frame_id} (D{self.day} {self.t:06d})"
