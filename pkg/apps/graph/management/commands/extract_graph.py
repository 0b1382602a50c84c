import json

from django.conf import settings
from django.core.management.base import CommandError

from apps.core.config import EXTRACTION_SOURCES
from apps.core.management.base import EXIT_EMPTY, StoreCommand
from apps.graph.extraction import BATCHING_MODES, batch_documents, build_graph, prepare_documents
from apps.graph.store import GraphStore
from apps.graph.tasks import build_graph_batch
from apps.transcripts.services import TranscriptSearch


class Command(StoreCommand):
    help = 'Build documents, extract the entity graph and print its statistics'

    def add_command_arguments(self, parser):
        parser.add_argument('--source', choices=EXTRACTION_SOURCES,
                            help='Graph source: captions fused with transcripts, or transcripts alone')
        parser.add_argument('--batching', choices=BATCHING_MODES,
                            help='One extraction batch per hour of a day, or one per video')
        parser.add_argument('--async', action='store_true', dest='run_async',
                            help='Dispatch batches as Celery tasks')
        parser.add_argument('--export', help='Write the graph to this JSONL file afterwards')
        parser.add_argument('--import', dest='import_path',
                            help='Load edges from a JSONL export instead of extracting')

    def run(self, config, **options):
        store = GraphStore()

        if options.get('import_path'):
            report = store.import_jsonl(options['import_path'])
            for lineno, reason in report.rejected:
                self.stderr.write(f"line {lineno}: {reason}")
            self.stdout.write(f"Imported {report.inserted} edges ({report.duplicates} duplicates)")
        else:
            self._extract(config, store, options)

        stats = store.stats()
        self.stdout.write(json.dumps(stats.to_dict(), indent=2))
        if options.get('export'):
            count = store.export_jsonl(options['export'])
            self.stdout.write(f"Exported {count} edges to {options['export']}")
        if stats.total_edges == 0:
            raise CommandError("no edges produced", returncode=EXIT_EMPTY)

    def _extract(self, config, store, options):
        client = self.get_client(config)
        utterances = TranscriptSearch().all_utterances()
        source = options.get('source') or config.extraction_source
        docs = prepare_documents(client, utterances, source=source)
        if not docs:
            raise CommandError(f"no {source} documents to extract from", returncode=EXIT_EMPTY)

        batches = batch_documents(docs, options.get('batching'))
        self.stdout.write(f"Extracting {len(docs)} documents in {len(batches)} batches")

        if options.get('run_async'):
            results = {
                key: build_graph_batch.delay(
                    [doc.doc_id for doc in batch], config.client_mode, config.fixtures, config.cassette,
                )
                for key, batch in batches.items()
            }
            if not settings.CELERY_TASK_ALWAYS_EAGER:
                self.stdout.write(f"Dispatched {len(results)} batches to the extraction queue")
                return
            for key, result in results.items():
                outcome = result.get()
                for doc_id, error in (outcome.get('failures') or {}).items():
                    self.stderr.write(f"{key} {doc_id}: {error}")
                if not outcome.get('success'):
                    self.stderr.write(f"{key}: {outcome.get('error')}")
            return

        lookup = {u.utt_id: u for u in utterances}
        for key, batch in batches.items():
            report = build_graph(batch, client, store, utterance_lookup=lookup)
            for doc_id, error in report.failures.items():
                self.stderr.write(f"{key} {doc_id}: {error}")
