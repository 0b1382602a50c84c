import hashlib
from pathlib import Path
from types import SimpleNamespace

from django.core.management.base import CommandError

from apps.agents.services import AgentRuntime
from apps.core.exceptions import InvalidTimeError
from apps.core.management.base import EXIT_INPUT, StoreCommand
from apps.core.types import DayTime


class Command(StoreCommand):
    help = 'Answer one multiple-choice question over the built stores and write its trace'

    def add_command_arguments(self, parser):
        parser.add_argument('question')
        parser.add_argument('--option', action='append', dest='options', default=[],
                            help='Answer option; give exactly four, in A-D order')
        parser.add_argument('--query-time', dest='query_time', required=True, help='"D4 11:34:00"')
        parser.add_argument('--qid', help='Identifier recorded in the trace')
        parser.add_argument('--trace', help='Trace file (default: <store>/traces/<qid>.json)')

    def run(self, config, **options):
        try:
            query_time = DayTime.parse(options['query_time'])
        except InvalidTimeError as e:
            raise CommandError(f"{e}\nusage: answer QUESTION --option A ... --query-time 'D4 11:34:00'",
                               returncode=EXIT_INPUT)
        if len(options['options']) != 4:
            raise CommandError(f"expected 4 --option values, got {len(options['options'])}", returncode=EXIT_INPUT)

        qid = options.get('qid') or 'q-' + hashlib.sha256(options['question'].encode('utf-8')).hexdigest()[:12]
        item = SimpleNamespace(qid=qid, question=options['question'],
                               candidates=tuple(options['options']), query_time=query_time)

        trace = AgentRuntime(self.get_client(config), config).run(item)

        path = Path(options.get('trace') or config.store_dir / 'traces' / f"{qid}.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(trace.to_json() + '\n', encoding='utf-8')

        self.stdout.write(trace.letter)
        self.stderr.write(f"Trace written to {path}")
