# Generated by Django 4.2.7 on 2026-10-12 09:14

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='UtteranceRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('utt_id', models.CharField(max_length=255, unique=True)),
                ('speaker', models.CharField(blank=True, max_length=255, null=True)),
                ('day', models.IntegerField()),
                ('start_t', models.IntegerField()),
                ('end_t', models.IntegerField()),
                ('text', models.TextField()),
            ],
            options={
                'ordering': ['day', 'start_t', 'end_t', 'utt_id'],
                'indexes': [models.Index(fields=['day', 'start_t'], name='utterance_day_start_idx')],
            },
        ),
    ]
