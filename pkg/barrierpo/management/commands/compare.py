"""Constrained training against the penalty baseline, plus policy-step timing."""

from __future__ import annotations

import argparse

from django.core.management.base import BaseCommand, CommandError

from barrierpo.config import RunMode
from barrierpo.experiments import compare
from barrierpo.management.commands._command_utils import (
    EXIT_USAGE,
    command_errors,
    load_run_config,
    parse_csv_floats,
    parse_csv_ints,
    validate_positive,
    write_json,
)


def _parse_modes(raw: str) -> list[RunMode]:
    try:
        return [RunMode(item.strip()) for item in raw.split(",") if item.strip()]
    except ValueError:
        known = ", ".join(m.value for m in RunMode)
        raise CommandError(f"--modes must be a comma-separated subset of: {known}", returncode=EXIT_USAGE) from None


class Command(BaseCommand):
    help = "Compare run modes on identical seeds and time the policy step across constraint counts."
    requires_system_checks = ()

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--config", required=True, help="Path to a JSON5 run config.")
        parser.add_argument("--ks", default="1,5,10", help="Constraint counts for the timing table.")
        parser.add_argument(
            "--lambda-scales",
            default="1",
            help="Multiples of penalty.lambdas for the penalty runs.",
        )
        parser.add_argument("--modes", default="constrained,penalty", help="Run modes to compare.")
        parser.add_argument("--out", default=None, help="Override the output directory.")

    def handle(self, *_args: object, **options: object) -> None:
        ks = parse_csv_ints("--ks", str(options["ks"]))
        scales = parse_csv_floats("--lambda-scales", str(options["lambda_scales"]))
        validate_positive("--ks", ks)
        validate_positive("--lambda-scales", scales)
        modes = _parse_modes(str(options["modes"]))
        if not modes:
            raise CommandError("--modes needs at least one mode", returncode=EXIT_USAGE)
        with command_errors():
            config = load_run_config(str(options["config"]), output_dir=options.get("out"))
            tables = compare(config, config.output_path, ks=ks, lambda_scales=scales, modes=modes)
        write_json(self.stdout, tables)
