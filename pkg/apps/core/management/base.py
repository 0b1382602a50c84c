"""
Shared plumbing for the engine's management commands.

Exit codes: 0 success, 1 empty or degenerate result, 2 input or
configuration error.
"""
import logging
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import BaseCommand, CommandError
from django.db import connection
from django.db.migrations.executor import MigrationExecutor

from apps.core.config import RunConfig, parse_tools, parse_windows
from apps.core.exceptions import ClientError, EngineError
from apps.llm.factory import CLIENT_MODES, build_client

logger = logging.getLogger(__name__)

EXIT_EMPTY = 1
EXIT_INPUT = 2


def _positive_int(value):
    number = int(value)
    if number < 1:
        raise ValueError(value)
    return number


class StoreCommand(BaseCommand):
    """
    Base for commands that open the store. Read commands (requires_store)
    refuse to create a store that does not exist yet.
    """
    requires_store = True
    requires_migrations_checks = False

    def add_arguments(self, parser):
        parser.add_argument('--store', help='Store directory (also EGOGRAPH_STORE_DIR)')
        parser.add_argument('--client', choices=CLIENT_MODES, help='Model client mode')
        parser.add_argument('--fixtures', help='Scripted client fixture file or directory')
        parser.add_argument('--cassette', help='Cassette file for record / replay')
        parser.add_argument('--strict', action='store_true', help='Scripted client errors on missing fixtures')
        parser.add_argument('--tools', help='Enabled tools, e.g. eg,visual,audio')
        parser.add_argument('--tsearch', choices=['bm25', 'llm'], help='Transcript search variant')
        parser.add_argument('--k', type=_positive_int, dest='k_total', help='Frames kept per visual search')
        parser.add_argument('--recall-windows', dest='recall_windows', help='Comma-separated seconds')
        parser.add_argument('--jobs', type=_positive_int, help='Parallel items')
        parser.add_argument('--image-token-rate', type=_positive_int, dest='image_token_rate',
                            help='Tokens per image (85 or 258 presets)')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def get_config(self, options) -> RunConfig:
        try:
            return RunConfig.from_settings(
                client_mode=options.get('client'),
                fixtures=options.get('fixtures'),
                cassette=options.get('cassette'),
                strict=options.get('strict') or None,
                tools=parse_tools(options.get('tools')) if options.get('tools') else None,
                tsearch=options.get('tsearch'),
                k_total=options.get('k_total'),
                recall_windows=parse_windows(options['recall_windows']) if options.get('recall_windows') else None,
                jobs=options.get('jobs'),
                image_token_rate=options.get('image_token_rate'),
            )
        except EngineError as e:
            raise CommandError(str(e), returncode=EXIT_INPUT)

    def open_store(self):
        name = connection.settings_dict.get('NAME')
        if (
            self.requires_store
            and connection.vendor == 'sqlite'
            and name and 'memory' not in str(name)
            and not Path(name).exists()
        ):
            raise CommandError(f"no store at {Path(name).parent}; run ingest first", returncode=EXIT_INPUT)

        try:
            executor = MigrationExecutor(connection)
            if executor.migration_plan(executor.loader.graph.leaf_nodes()):
                call_command('migrate', verbosity=0, interactive=False)
        except Exception as e:
            logger.error(f"Cannot open store: {str(e)}")
            raise CommandError(f"cannot open store: {e}", returncode=EXIT_INPUT)

    def get_client(self, config: RunConfig):
        try:
            return build_client(config.client_mode, fixtures=config.fixtures,
                                cassette=config.cassette, strict=config.strict)
        except ClientError as e:
            raise CommandError(str(e), returncode=EXIT_INPUT)

    def handle(self, *args, **options):
        config = self.get_config(options)
        self.open_store()
        try:
            return self.run(config, **options)
        except EngineError as e:
            logger.error(f"{self.__class__.__module__.rsplit('.', 1)[-1]} failed: {str(e)}")
            raise CommandError(str(e), returncode=EXIT_INPUT)

    def run(self, config: RunConfig, **options):
        raise NotImplementedError
