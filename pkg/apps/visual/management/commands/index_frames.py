from django.core.management.base import CommandError

from apps.core.management.base import EXIT_EMPTY, EXIT_INPUT, StoreCommand
from apps.visual.services import VisualIndex, read_frames


class Command(StoreCommand):
    help = 'Load 1 FPS frame embeddings (JSONL with a {"dim": D} header, or .npz) into the visual index'
    requires_store = False

    def add_command_arguments(self, parser):
        parser.add_argument('path', help='Frame file')
        parser.add_argument('--dim', type=int, help='Expected embedding dimension')

    def run(self, config, **options):
        dim, records = read_frames(options['path'], dim=options.get('dim'))
        stored = VisualIndex().dim
        if stored is not None and stored != dim:
            raise CommandError(f"index has dimension {stored}, file has {dim}", returncode=EXIT_INPUT)

        index = VisualIndex(dim=dim)
        added = index.add_frames(records, skip_existing=True)
        self.stdout.write(f"Indexed {added} new frames of dimension {dim} ({len(index)} total)")
        if not len(index):
            raise CommandError("no frames indexed", returncode=EXIT_EMPTY)
