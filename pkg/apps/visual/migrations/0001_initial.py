# Generated by Django 4.2.7 on 2026-10-12 09:14

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='FrameRecordModel',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('frame_id', models.CharField(max_length=255, unique=True)),
                ('day', models.IntegerField()),
                ('t', models.IntegerField()),
                ('location', models.CharField(blank=True, max_length=255, null=True)),
                ('dim', models.PositiveIntegerField()),
                ('embedding', models.BinaryField()),
            ],
            options={
                'ordering': ['day', 't', 'frame_id'],
                'indexes': [models.Index(fields=['day', 't'], name='frame_day_t_idx')],
            },
        ),
    ]
