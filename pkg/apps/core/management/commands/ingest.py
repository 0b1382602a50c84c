from django.core.management.base import CommandError

from apps.core.exceptions import CaptionOrderError, UtteranceValidationError
from apps.core.management.base import EXIT_INPUT, StoreCommand
from apps.core.serializers import read_rows
from apps.core.types import TimeInterval
from apps.graph.extraction import Caption, add_captions
from apps.graph.serializers import CaptionRowSerializer
from apps.transcripts.serializers import UtteranceRowSerializer
from apps.transcripts.services import TranscriptSearch, Utterance
from apps.visual.services import VisualIndex, read_frames


class Command(StoreCommand):
    help = 'Load transcripts, captions and frame embeddings into the store'
    requires_store = False

    def add_command_arguments(self, parser):
        parser.add_argument('--transcripts', help='Utterance JSONL {utt_id, speaker?, day, start_t, end_t, text}')
        parser.add_argument('--captions', help='Caption JSONL {doc_id, day, start_t, end_t, text}')
        parser.add_argument('--frames', help='Frame JSONL with a {"dim": D} header, or .npz')
        parser.add_argument('--dim', type=int, help='Expected frame embedding dimension')

    def run(self, config, **options):
        if not any(options.get(name) for name in ('transcripts', 'captions', 'frames')):
            raise CommandError("nothing to ingest: pass --transcripts, --captions or --frames",
                               returncode=EXIT_INPUT)

        # Parse everything first so a bad line leaves the store untouched
        utterances = self._utterances(options['transcripts']) if options.get('transcripts') else None
        captions = self._captions(options['captions']) if options.get('captions') else None
        frames = read_frames(options['frames'], dim=options.get('dim')) if options.get('frames') else None

        summary = {}
        if utterances is not None:
            summary['utterances'] = TranscriptSearch().add_utterances(utterances, skip_existing=True)
        if captions is not None:
            summary['captions'] = add_captions(captions)
        if frames is not None:
            dim, records = frames
            stored = VisualIndex().dim
            if stored is not None and stored != dim:
                raise CommandError(f"index has dimension {stored}, file has {dim}", returncode=EXIT_INPUT)
            summary['frames'] = VisualIndex(dim=dim).add_frames(records, skip_existing=True)

        for name, count in summary.items():
            self.stdout.write(f"{name}: {count} new")

    @staticmethod
    def _utterances(path):
        utterances = []
        for lineno, row in read_rows(path, UtteranceRowSerializer, UtteranceValidationError):
            try:
                utterances.append(Utterance.from_dict(row))
            except UtteranceValidationError as e:
                raise UtteranceValidationError(f"{path} line {lineno}: {e}") from None
        return utterances

    @staticmethod
    def _captions(path):
        return [
            Caption(row['doc_id'], TimeInterval.on_day(row['day'], row['start_t'], row['end_t']), row['text'])
            for _, row in read_rows(path, CaptionRowSerializer, CaptionOrderError)
        ]
