"""Exception types raised by barrierpo."""

from __future__ import annotations


class BarrierPOError(Exception):
    """Base class for barrierpo domain failures."""


class InvalidDiscountError(BarrierPOError, ValueError):
    """Discount factor outside the open interval (0, 1)."""

    def __init__(self, gamma: float) -> None:
        self.gamma = gamma
        super().__init__(f"Discount gamma must lie strictly between 0 and 1, got {gamma!r}.")


class NumericFailureError(BarrierPOError, ArithmeticError):
    """Non-finite activations in a network forward pass."""

    def __init__(self, layer: int, message: str | None = None) -> None:
        self.layer = layer
        super().__init__(message or f"Non-finite activations at layer {layer}.")


class InfeasiblePointError(BarrierPOError, ValueError):
    """Barrier evaluated at a nonpositive margin."""

    def __init__(self, margin: float, constraint: int | None = None) -> None:
        self.margin = margin
        self.constraint = constraint
        where = "" if constraint is None else f" for constraint {constraint}"
        super().__init__(f"Barrier argument must be positive{where}, got {margin!r}.")


class CGBreakdownError(BarrierPOError):
    """Conjugate gradient met nonpositive curvature."""

    def __init__(self, iteration: int, curvature: float) -> None:
        self.iteration = iteration
        self.curvature = curvature
        super().__init__(
            f"Conjugate gradient breakdown at iteration {iteration}: "
            f"curvature {curvature!r} is not positive."
        )


class EnvFailureError(BarrierPOError, RuntimeError):
    """An environment in a rollout pool raised."""

    def __init__(self, env_index: int, message: str) -> None:
        self.env_index = env_index
        super().__init__(f"Environment {env_index} failed: {message}")


class ConfigError(BarrierPOError, ValueError):
    """Invalid run configuration."""

    def __init__(self, message: str, *, line: int | None = None) -> None:
        self.line = line
        prefix = "" if line is None else f"line {line}: "
        super().__init__(prefix + message)


class CheckpointError(BarrierPOError, ValueError):
    """Unreadable or inconsistent checkpoint payload."""


class TrainingError(BarrierPOError, RuntimeError):
    """An accepted policy step broke the trust region or left the barrier domain."""


__all__ = [
    "BarrierPOError",
    "CGBreakdownError",
    "CheckpointError",
    "ConfigError",
    "EnvFailureError",
    "InfeasiblePointError",
    "InvalidDiscountError",
    "NumericFailureError",
    "TrainingError",
]
