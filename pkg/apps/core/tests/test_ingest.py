import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from apps.core.serializers import first_error
from apps.core.testing import write_jsonl
from apps.graph.models import CaptionRecord
from apps.transcripts.models import UtteranceRecord
from apps.visual.models import FrameRecordModel


def utterance_rows(n=8):
    return [
        {'utt_id': f'u{i}', 'speaker': 'Jake' if i % 2 else None, 'day': 1,
         'start_t': 100000 + i * 5, 'end_t': 100004 + i * 5, 'text': f'line number {i}'}
        for i in range(n)
    ]


class IngestCommandTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def ingest(self, **options):
        out = StringIO()
        call_command('ingest', stdout=out, **options)
        return out.getvalue()

    def test_loads_every_kind_and_prints_counts(self):
        transcripts = write_jsonl(self.dir / 'utterances.jsonl', utterance_rows())
        captions = write_jsonl(self.dir / 'captions.jsonl', [
            {'doc_id': 'c1', 'day': 1, 'start_t': 100000, 'end_t': 100030, 'text': 'Jake at the desk'},
            {'doc_id': 'c2', 'day': 1, 'start_t': 100030, 'end_t': 100100, 'text': 'Jake picks up a phone'},
        ])
        frames = write_jsonl(self.dir / 'frames.jsonl', [
            {'dim': 2},
            {'frame_id': 'f1', 'day': 1, 't': 100000, 'location': 'kitchen', 'embedding': [1.0, 0.0]},
            {'frame_id': 'f2', 'day': 1, 't': 100001, 'embedding': [0.0, 1.0]},
        ])

        output = self.ingest(transcripts=str(transcripts), captions=str(captions), frames=str(frames))

        self.assertIn('utterances: 8 new', output)
        self.assertIn('captions: 2 new', output)
        self.assertIn('frames: 2 new', output)
        self.assertEqual(UtteranceRecord.objects.count(), 8)
        self.assertEqual(CaptionRecord.objects.count(), 2)
        self.assertEqual(FrameRecordModel.objects.get(frame_id='f1').location, 'kitchen')

    def test_reingest_is_idempotent(self):
        transcripts = write_jsonl(self.dir / 'utterances.jsonl', utterance_rows())
        self.ingest(transcripts=str(transcripts))
        output = self.ingest(transcripts=str(transcripts))
        self.assertIn('utterances: 0 new', output)
        self.assertEqual(UtteranceRecord.objects.count(), 8)

    def test_malformed_line_names_its_number(self):
        rows = utterance_rows()
        rows[6] = {'utt_id': 'u6', 'day': 1, 'start_t': 100000, 'end_t': 100005}
        transcripts = write_jsonl(self.dir / 'utterances.jsonl', rows)

        with self.assertRaises(CommandError) as ctx:
            self.ingest(transcripts=str(transcripts))

        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('line 7', str(ctx.exception))
        self.assertEqual(UtteranceRecord.objects.count(), 0)

    def test_invalid_json_and_bad_time_code(self):
        bad_json = write_jsonl(self.dir / 'a.jsonl', [utterance_rows(1)[0], '{not json'])
        with self.assertRaises(CommandError) as ctx:
            self.ingest(transcripts=str(bad_json))
        self.assertIn('line 2', str(ctx.exception))

        row = dict(utterance_rows(1)[0], end_t=106000)
        bad_time = write_jsonl(self.dir / 'b.jsonl', [row])
        with self.assertRaises(CommandError) as ctx:
            self.ingest(transcripts=str(bad_time))
        self.assertIn('end_t', str(ctx.exception))

    def test_frame_norm_and_dimension_are_checked(self):
        frames = write_jsonl(self.dir / 'frames.jsonl', [
            {'dim': 2},
            {'frame_id': 'f1', 'day': 1, 't': 100000, 'embedding': [0.5, 0.0]},
        ])
        with self.assertRaises(CommandError) as ctx:
            self.ingest(frames=str(frames))
        self.assertIn('f1', str(ctx.exception))

        frames = write_jsonl(self.dir / 'frames3.jsonl', [
            {'dim': 2},
            {'frame_id': 'f1', 'day': 1, 't': 100000, 'embedding': [1.0, 0.0, 0.0]},
        ])
        with self.assertRaises(CommandError) as ctx:
            self.ingest(frames=str(frames))
        self.assertIn('line 2', str(ctx.exception))

    def test_overlapping_captions_rejected(self):
        captions = write_jsonl(self.dir / 'captions.jsonl', [
            {'doc_id': 'c1', 'day': 1, 'start_t': 100000, 'end_t': 100030, 'text': 'a'},
            {'doc_id': 'c2', 'day': 1, 'start_t': 100020, 'end_t': 100050, 'text': 'b'},
        ])
        with self.assertRaises(CommandError) as ctx:
            self.ingest(captions=str(captions))
        self.assertIn('overlaps', str(ctx.exception))
        self.assertEqual(CaptionRecord.objects.count(), 0)

    def test_nothing_to_ingest(self):
        with self.assertRaises(CommandError) as ctx:
            self.ingest()
        self.assertEqual(ctx.exception.returncode, 2)


class FirstErrorTests(TestCase):
    def test_flattens_nested_errors(self):
        self.assertEqual(first_error({'text': ['This field is required.']}), 'text: This field is required.')
        self.assertEqual(first_error({'non_field_errors': ['bad']}), 'bad')
