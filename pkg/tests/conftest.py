"""Pytest configuration"""

from __future__ import annotations

import os
from collections.abc import Callable
from pathlib import Path

import json5
import numpy as np
import pytest

from barrierpo.cli import configure_django
from barrierpo.config import RunConfig, config_from_flat, flatten_keys

# Small enough that a training iteration runs in milliseconds.
TINY_CONFIG = """
{
  // line world, two envs, one hidden layer
  "env.name": "line_world",
  "iterations": 3,
  "checkpoint_every": 2,
  "batch.envs": 2,
  "batch.steps": 10,
  "barrier.value_epochs": 2,
  "barrier.value_minibatches": 2,
  "network.policy_hidden": [8],
  "network.value_hidden": [8],
  "network.cost_hidden": [8],
}
"""


def pytest_configure(config: pytest.Config) -> None:
    """Initialize Django for the management commands and register custom markers."""
    config.addinivalue_line(
        "markers",
        "acceptance: long training runs, enabled with BARRIERPO_ACCEPTANCE=1",
    )

    configure_django()


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    _ = config
    if os.environ.get("BARRIERPO_ACCEPTANCE") == "1":
        return
    skip = pytest.mark.skip(reason="set BARRIERPO_ACCEPTANCE=1 to run acceptance runs")
    for item in items:
        if "acceptance" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def make_config(tmp_path: Path) -> Callable[..., RunConfig]:
    """Build a tiny RunConfig writing under ``tmp_path``, with flat-key overrides."""

    def build(**overrides: object) -> RunConfig:
        values = flatten_keys(json5.loads(TINY_CONFIG))
        values["output_dir"] = str(tmp_path / "run")
        values.update({key.replace("__", "."): value for key, value in overrides.items()})
        return config_from_flat(values)

    return build


@pytest.fixture
def tiny_config(make_config: Callable[..., RunConfig]) -> RunConfig:
    return make_config()


@pytest.fixture
def config_file(tmp_path: Path) -> Callable[..., Path]:
    """Write TINY_CONFIG plus extra JSON5 lines to a file and return its path."""

    def write(extra: str = "", name: str = "run.json5") -> Path:
        body = TINY_CONFIG.rstrip().rstrip("}")
        out = tmp_path / "out"
        text = f'{body}  "output_dir": "{out.as_posix()}",\n{extra}}}\n'
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
