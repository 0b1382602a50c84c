# Generated by Django 4.2.7 on 2026-10-19 10:02

from django.db import migrations, models


def fill_keys(apps, schema_editor):
    RelationEdgeRecord = apps.get_model('graph', 'RelationEdgeRecord')
    for record in RelationEdgeRecord.objects.all().iterator():
        record.source_key = record.source_id.strip().lower()
        record.target_key = record.target_id.strip().lower()
        record.transcript_key = record.transcript.lower()
        record.save(update_fields=['source_key', 'target_key', 'transcript_key'])


class Migration(migrations.Migration):

    dependencies = [
        ('graph', '0001_initial'),
    ]

    operations = [
        migrations.AddField(
            model_name='relationedgerecord',
            name='source_key',
            field=models.TextField(default='', editable=False),
        ),
        migrations.AddField(
            model_name='relationedgerecord',
            name='target_key',
            field=models.TextField(default='', editable=False),
        ),
        migrations.AddField(
            model_name='relationedgerecord',
            name='transcript_key',
            field=models.TextField(default='', editable=False),
        ),
        migrations.RunPython(fill_keys, migrations.RunPython.noop),
        migrations.AddIndex(
            model_name='relationedgerecord',
            index=models.Index(fields=['source_key'], name='egt_source_key_idx'),
        ),
        migrations.AddIndex(
            model_name='relationedgerecord',
            index=models.Index(fields=['target_key'], name='egt_target_key_idx'),
        ),
    ]
