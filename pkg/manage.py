#!/usr/bin/env python
import os
import sys


def _lift_store_flag(argv):
    """Expose --store DIR to settings before Django reads DATABASES."""
    for i, arg in enumerate(argv):
        if arg == '--store' and i + 1 < len(argv):
            os.environ['EGOGRAPH_STORE_DIR'] = argv[i + 1]
        elif arg.startswith('--store='):
            os.environ['EGOGRAPH_STORE_DIR'] = arg.split('=', 1)[1]


def main():
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'config.settings')
    _lift_store_flag(sys.argv)
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed?"
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == '__main__':
    main()
