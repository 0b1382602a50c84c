import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from django.core.management.base import CommandError
from django.db import connection

from apps.agents.services import AgentRuntime
from apps.core.exceptions import BenchmarkError
from apps.core.management.base import EXIT_INPUT, StoreCommand
from apps.evaluation.benchmark import load_benchmark
from apps.evaluation.metrics import oracle_context
from apps.evaluation.reports import render_table, report

logger = logging.getLogger(__name__)


class Command(StoreCommand):
    help = 'Run every benchmark question and report accuracy, recall@W, tokens and runtime'

    def add_command_arguments(self, parser):
        parser.add_argument('benchmark', help='JSON array of multiple-choice items')
        parser.add_argument('--oracle', action='store_true',
                            help='Answer from frames and transcripts around the gold target times')
        parser.add_argument('--report', help='Write the JSON report here')
        parser.add_argument('--traces', help='Directory for per-item trace files')

    def run(self, config, **options):
        try:
            items = load_benchmark(options['benchmark'])
        except BenchmarkError as e:
            raise CommandError(str(e), returncode=EXIT_INPUT)
        if not items:
            raise CommandError(f"benchmark {options['benchmark']} has no items", returncode=EXIT_INPUT)

        runtime = AgentRuntime(self.get_client(config), config)
        runtime.warm_up()

        main_thread = threading.get_ident()

        def answer(item):
            try:
                if options.get('oracle'):
                    return runtime.run_oracle(item, oracle_context(item, config.oracle_half_window_s))
                return runtime.run(item)
            finally:
                if threading.get_ident() != main_thread:
                    connection.close()

        self.stderr.write(f"Answering {len(items)} questions with {config.jobs} jobs")
        if config.jobs == 1:
            traces = [answer(item) for item in items]
        else:
            with ThreadPoolExecutor(max_workers=config.jobs) as executor:
                traces = list(executor.map(answer, items))

        data = report(traces, items, config.recall_windows, config.day_length_s)
        data['config'] = {**config.to_dict(), 'oracle': bool(options.get('oracle'))}

        if options.get('traces'):
            directory = Path(options['traces'])
            directory.mkdir(parents=True, exist_ok=True)
            for trace in traces:
                (directory / f"{trace.qid}.json").write_text(trace.to_json() + '\n', encoding='utf-8')
        if options.get('report'):
            Path(options['report']).write_text(json.dumps(data, indent=2, sort_keys=True) + '\n', encoding='utf-8')

        self.stdout.write(render_table(data))
