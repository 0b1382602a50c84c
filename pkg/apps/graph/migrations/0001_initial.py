# Generated by Django 4.2.7 on 2026-10-12 09:14

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='RelationEdgeRecord',
            fields=[
                ('id', models.AutoField(primary_key=True, serialize=False)),
                ('day', models.IntegerField()),
                ('start_t', models.IntegerField()),
                ('end_t', models.IntegerField()),
                ('transcript', models.TextField(blank=True, default='')),
                ('source_id', models.TextField()),
                ('source_type', models.TextField()),
                ('target_id', models.TextField()),
                ('target_type', models.TextField()),
                ('rel_type', models.TextField()),
            ],
            options={
                'db_table': 'entity_graph_table',
                'ordering': ['day', 'start_t', 'id'],
                'indexes': [
                    models.Index(fields=['day', 'start_t'], name='egt_day_start_idx'),
                    models.Index(fields=['rel_type', 'day'], name='egt_rel_day_idx'),
                ],
            },
        ),
        migrations.CreateModel(
            name='CaptionRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('doc_id', models.CharField(max_length=255, unique=True)),
                ('day', models.IntegerField()),
                ('start_t', models.IntegerField()),
                ('end_t', models.IntegerField()),
                ('text', models.TextField()),
            ],
            options={
                'ordering': ['day', 'start_t', 'doc_id'],
                'indexes': [models.Index(fields=['day', 'start_t'], name='caption_day_start_idx')],
            },
        ),
        migrations.CreateModel(
            name='DocumentRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('doc_id', models.CharField(max_length=255, unique=True)),
                ('day', models.IntegerField()),
                ('start_t', models.IntegerField()),
                ('end_t', models.IntegerField()),
                ('caption_text', models.TextField()),
                ('utterance_ids', models.JSONField(default=list)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'ordering': ['day', 'start_t', 'doc_id'],
                'indexes': [models.Index(fields=['day', 'start_t'], name='document_day_start_idx')],
            },
        ),
    ]
