"""Shared helpers for barrierpo commands."""

from __future__ import annotations

import json
import logging
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any

from django.core.management.base import CommandError

from barrierpo.config import RunConfig, load_config
from barrierpo.exceptions import BarrierPOError, CheckpointError, ConfigError, NumericFailureError

logger = logging.getLogger(__name__)

EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def write_json(stdout: Any, payload: object) -> None:
    stdout.write(json.dumps(payload, indent=2, default=str))


def parse_csv_floats(option: str, raw: str) -> list[float]:
    try:
        values = [float(item) for item in raw.split(",") if item.strip()]
    except ValueError:
        raise CommandError(f"{option} must be a comma-separated list of numbers", returncode=EXIT_USAGE) from None
    if not values:
        raise CommandError(f"{option} needs at least one value", returncode=EXIT_USAGE)
    return values


def parse_csv_ints(option: str, raw: str) -> list[int]:
    values = parse_csv_floats(option, raw)
    if any(not v.is_integer() for v in values):
        raise CommandError(f"{option} must contain whole numbers", returncode=EXIT_USAGE)
    return [int(v) for v in values]


def validate_positive(option: str, values: list[float] | list[int]) -> None:
    if any(v <= 0 for v in values):
        raise CommandError(f"{option} values must be positive", returncode=EXIT_USAGE)


def validate_at_least_one(option: str, value: int | None) -> None:
    if value is not None and value < 1:
        raise CommandError(f"{option} must be at least 1", returncode=EXIT_USAGE)


def load_run_config(path: str, **overrides: Any) -> RunConfig:
    """Load a config file and apply the command-line overrides that were given."""
    config = load_config(Path(path))
    given = {key: value for key, value in overrides.items() if value is not None}
    return config.with_overrides(given) if given else config


@contextmanager
def command_errors() -> Iterator[None]:
    """Turn library failures into ``CommandError`` with the documented exit codes."""
    try:
        yield
    except CommandError:
        raise
    except (ConfigError, CheckpointError) as exc:
        raise CommandError(str(exc), returncode=EXIT_USAGE) from exc
    except NumericFailureError as exc:
        raise CommandError(str(exc), returncode=EXIT_NUMERIC) from exc
    except BarrierPOError as exc:
        raise CommandError(str(exc), returncode=EXIT_FAILURE) from exc
