"""Grid sweep over barrier steepness and threshold enlargement."""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from django.core.management.base import BaseCommand

from barrierpo.experiments import SWEEP_SUMMARY_FILE, sweep
from barrierpo.management.commands._command_utils import (
    command_errors,
    load_run_config,
    parse_csv_floats,
    validate_at_least_one,
    validate_positive,
    write_json,
)

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = "Train one run per (t, alpha, seed) cell and aggregate the results."
    requires_system_checks = ()

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--config", required=True, help="Path to a JSON5 run config.")
        parser.add_argument("--t", required=True, help="Comma-separated barrier steepness values.")
        parser.add_argument("--alpha", required=True, help="Comma-separated enlargement factors.")
        parser.add_argument("--seeds", type=int, default=1, help="Seeds per cell.")
        parser.add_argument("--workers", type=int, default=1, help="Cells run in parallel.")
        parser.add_argument("--out", default=None, help="Override the output directory.")

    def handle(self, *_args: object, **options: object) -> None:
        ts = parse_csv_floats("--t", str(options["t"]))
        alphas = parse_csv_floats("--alpha", str(options["alpha"]))
        validate_positive("--t", ts)
        validate_positive("--alpha", alphas)
        seeds = options["seeds"]
        workers = options["workers"]
        assert isinstance(seeds, int) and isinstance(workers, int)
        validate_at_least_one("--seeds", seeds)
        validate_at_least_one("--workers", workers)
        with command_errors():
            config = load_run_config(str(options["config"]), output_dir=options.get("out"))
            output_dir = config.output_path
            summary = sweep(config, ts, alphas, seeds, output_dir, workers=workers)
        logger.info("Sweep summary written to %s.", output_dir / SWEEP_SUMMARY_FILE)
        write_json(self.stdout, summary)
