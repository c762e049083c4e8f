"""Train one run and write metrics, checkpoints and the constraint summary."""

from __future__ import annotations

import argparse
from pathlib import Path

from django.core.management.base import BaseCommand

from barrierpo.experiments import run_training
from barrierpo.management.commands._command_utils import (
    command_errors,
    load_run_config,
    write_json,
)


class Command(BaseCommand):
    help = "Train a policy under the configured constraints."
    requires_system_checks = ()

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--config", required=True, help="Path to a JSON5 run config.")
        parser.add_argument("--seed", type=int, default=None, help="Override the config seed.")
        parser.add_argument("--out", default=None, help="Override the output directory.")
        parser.add_argument(
            "--resume",
            default=None,
            help="Continue from a checkpoint written by the same config, or from the latest checkpoint of a run directory.",
        )
        parser.add_argument(
            "--dump-batch",
            default=None,
            help="Write the last collected batch to this text file.",
        )

    def handle(self, *_args: object, **options: object) -> None:
        with command_errors():
            config = load_run_config(
                str(options["config"]),
                seed=options.get("seed"),
                output_dir=options.get("out"),
            )
            resume = options.get("resume")
            dump = options.get("dump_batch")
            result = run_training(
                config,
                resume=None if resume is None else Path(str(resume)),
                dump_batch_path=None if dump is None else Path(str(dump)),
            )
        write_json(
            self.stdout,
            {
                "output_dir": str(result.output_dir),
                "iterations": len(result.reports),
                "final_reward": result.final_reward,
                "constraints": [
                    {"name": v.name, "j_c": v.j_c, "limit": v.limit, "satisfied": v.satisfied}
                    for v in result.verdicts
                ],
            },
        )
