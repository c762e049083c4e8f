"""``barrierpo`` console entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence

import django
from django.conf import settings
from django.core.management import load_command_class

APP_LABEL = "barrierpo"
COMMANDS = ("train", "eval", "sweep", "compare")
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_django() -> None:
    """Install barrierpo as the only Django app so its management commands resolve."""
    if not settings.configured:
        settings.configure(INSTALLED_APPS=[APP_LABEL], LOGGING_CONFIG=None)
    django.setup()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="barrierpo", description="Constrained policy optimization runs.")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Root logger level (default: INFO).",
    )
    parser.add_argument("command", choices=COMMANDS, help="Command to run.")
    parser.add_argument("args", nargs=argparse.REMAINDER, help="Options passed to the command.")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    options = build_parser().parse_args(argv)
    logging.basicConfig(level=options.log_level, format=LOG_FORMAT, stream=sys.stderr)
    configure_django()
    command = load_command_class(APP_LABEL, options.command)
    try:
        command.run_from_argv(["barrierpo", options.command, *options.args])
    except SystemExit as exc:
        if exc.code:
            logging.getLogger(__name__).error("%s exited with status %s.", options.command, exc.code)
        return exc.code if isinstance(exc.code, int) else 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
