from django.db import models


class RelationEdgeRecord(models.Model):
    """
    One temporally annotated relationship. Column names and types up to
    rel_type are fixed: other tooling (and model-written SQL) addresses this
    table directly. The *_key columns are derived.
    """
    id = models.AutoField(primary_key=True)
    day = models.IntegerField()
    start_t = models.IntegerField()  # HHMMSS
    end_t = models.IntegerField()  # HHMMSS
    transcript = models.TextField(blank=True, default='')  # evidence snippet
    source_id = models.TextField()
    source_type = models.TextField()
    target_id = models.TextField()
    target_type = models.TextField()
    rel_type = models.TextField()
    # normalize_id forms, written at insert; entity and evidence lookups read these
    source_key = models.TextField(default='', editable=False)
    target_key = models.TextField(default='', editable=False)
    transcript_key = models.TextField(default='', editable=False)

    class Meta:
        db_table = 'entity_graph_table'
        indexes = [
            models.Index(fields=['day', 'start_t'], name='egt_day_start_idx'),
            models.Index(fields=['rel_type', 'day'], name='egt_rel_day_idx'),
            models.Index(fields=['source_key'], name='egt_source_key_idx'),
            models.Index(fields=['target_key'], name='egt_target_key_idx'),
        ]
        ordering = ['day', 'start_t', 'id']

    def __str__(self):
        return f"{self.source_id} -{self.rel_type}-> {self.target_id} (D{self.day} {self.start_t:06d})"


class CaptionRecord(models.Model):
    """A visual caption window as ingested, before fusion."""
    doc_id = models.CharField(max_length=255, unique=True)
    day = models.IntegerField()
    start_t = models.IntegerField()
    end_t = models.IntegerField()
    text = models.TextField()

    class Meta:
        indexes = [
            models.Index(fields=['day', 'start_t'], name='caption_day_start_idx'),
        ]
        ordering = ['day', 'start_t', 'doc_id']

    def __str__(self):
        return f"{self.doc_id} (D{self.day} {self.start_t:06d}-{self.end_t:06d})"


class DocumentRecord(models.Model):
    """Fused caption document, the unit the graph extractor reads."""
    doc_id = models.CharField(max_length=255, unique=True)
    day = models.IntegerField()
    start_t = models.IntegerField()
    end_t = models.IntegerField()
    caption_text = models.TextField()
    utterance_ids = models.JSONField(default=list)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        indexes = [
            models.Index(fields=['day', 'start_t'], name='document_day_start_idx'),
        ]
        ordering = ['day', 'start_t', 'doc_id']

    def __str__(self):
        return self.doc_id
