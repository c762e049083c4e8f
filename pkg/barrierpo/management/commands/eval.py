"""Evaluate a trained policy with deterministic mean actions."""

from __future__ import annotations

import argparse
from pathlib import Path

from django.core.management.base import BaseCommand

from barrierpo.experiments import evaluate
from barrierpo.management.commands._command_utils import command_errors, validate_at_least_one, write_json


class Command(BaseCommand):
    help = "Run evaluation episodes from a trainer checkpoint."
    requires_system_checks = ()

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--checkpoint", required=True, help="Trainer checkpoint file, or a run directory to use its latest checkpoint.")
        parser.add_argument("--episodes", type=int, default=10, help="Number of episodes.")
        parser.add_argument("--seed", type=int, default=None, help="Seed for episode resets.")

    def handle(self, *_args: object, **options: object) -> None:
        episodes = options["episodes"]
        assert isinstance(episodes, int)
        validate_at_least_one("--episodes", episodes)
        seed = options.get("seed")
        with command_errors():
            report = evaluate(
                Path(str(options["checkpoint"])),
                episodes,
                seed=seed if isinstance(seed, int) else None,
            )
        write_json(self.stdout, report)
