"""Constrained policy optimization with log-barrier trust-region steps."""

from __future__ import annotations

from importlib import import_module
from importlib.metadata import PackageNotFoundError, version
from typing import Any

try:
    __version__ = version("barrierpo")
except PackageNotFoundError:
    __version__ = "0+unknown"

__all__ = [
    "BarrierConfig",
    "BarrierPOError",
    "BarrierProblem",
    "CmdpSpec",
    "ConfigError",
    "ConstraintKind",
    "ConstraintSpec",
    "GaussianPolicy",
    "IterationReport",
    "LineWorld",
    "MirrorSpec",
    "MultiHeadCostValueNet",
    "Pendulum",
    "PointMass2D",
    "RunConfig",
    "RunMode",
    "SeparateCostValueNets",
    "Trainer",
    "TrajectoryBatch",
    "ValueNet",
    "build_advantages",
    "collect",
    "gae",
    "load_config",
    "make_env",
    "policy_step",
    "read_checkpoint",
    "run_training",
    "write_checkpoint",
]

_EXPORTS: dict[str, tuple[str, str]] = {
    "BarrierPOError": ("barrierpo.exceptions", "BarrierPOError"),
    "ConfigError": ("barrierpo.exceptions", "ConfigError"),
    "CmdpSpec": ("barrierpo.cmdp", "CmdpSpec"),
    "ConstraintKind": ("barrierpo.cmdp", "ConstraintKind"),
    "ConstraintSpec": ("barrierpo.cmdp", "ConstraintSpec"),
    "MirrorSpec": ("barrierpo.cmdp", "MirrorSpec"),
    "GaussianPolicy": ("barrierpo.networks", "GaussianPolicy"),
    "MultiHeadCostValueNet": ("barrierpo.networks", "MultiHeadCostValueNet"),
    "SeparateCostValueNets": ("barrierpo.networks", "SeparateCostValueNets"),
    "ValueNet": ("barrierpo.networks", "ValueNet"),
    "LineWorld": ("barrierpo.envs", "LineWorld"),
    "Pendulum": ("barrierpo.envs", "Pendulum"),
    "PointMass2D": ("barrierpo.envs", "PointMass2D"),
    "make_env": ("barrierpo.envs", "make_env"),
    "TrajectoryBatch": ("barrierpo.rollout", "TrajectoryBatch"),
    "build_advantages": ("barrierpo.rollout", "build_advantages"),
    "collect": ("barrierpo.rollout", "collect"),
    "gae": ("barrierpo.rollout", "gae"),
    "BarrierConfig": ("barrierpo.optimizer", "BarrierConfig"),
    "BarrierProblem": ("barrierpo.optimizer", "BarrierProblem"),
    "IterationReport": ("barrierpo.optimizer", "IterationReport"),
    "policy_step": ("barrierpo.optimizer", "policy_step"),
    "Trainer": ("barrierpo.trainer", "Trainer"),
    "RunConfig": ("barrierpo.config", "RunConfig"),
    "RunMode": ("barrierpo.config", "RunMode"),
    "load_config": ("barrierpo.config", "load_config"),
    "read_checkpoint": ("barrierpo.checkpoint", "read_checkpoint"),
    "write_checkpoint": ("barrierpo.checkpoint", "write_checkpoint"),
    "run_training": ("barrierpo.experiments", "run_training"),
}


def __getattr__(name: str) -> Any:
    export = _EXPORTS.get(name)
    if export is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    module_name, attr_name = export
    value = getattr(import_module(module_name), attr_name)
    globals()[name] = value
    return value


def __dir__() -> list[str]:
    return sorted(set(globals()) | set(__all__))
