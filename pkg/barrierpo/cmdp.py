"""Constrained MDP data model: constraints, cost kernels, and the env interface."""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import ClassVar

import numpy as np
from numpy.typing import NDArray

from barrierpo.exceptions import InvalidDiscountError

FloatArray = NDArray[np.float64]

# Default probability limit for "fairly small" probabilistic constraints.
DEFAULT_PROBABILITY_LIMIT = 0.025


class ConstraintKind(str, Enum):
    PROBABILISTIC = "probabilistic"
    AVERAGE = "average"
    SYMMETRY = "symmetry"


@dataclass(frozen=True)
class ConstraintSpec:
    """One constraint of a CMDP.

    ``limit`` is the per-step threshold D_k: a probability for probabilistic
    constraints, a physical quantity for average constraints, and a unitless
    mirror mismatch for symmetry constraints. ``group_size`` is the
    denominator of indicator costs (violations are counted over a group of
    joints, axes, legs, ...).
    """

    id: int
    name: str
    kind: ConstraintKind
    limit: float
    group_size: int = 1
    enabled: bool = True

    @property
    def needs_critic(self) -> bool:
        return self.kind is not ConstraintKind.SYMMETRY


@dataclass(frozen=True)
class CmdpSpec:
    gamma: float
    constraints: tuple[ConstraintSpec, ...]
    env_name: str
    episode_steps: int
    dt: float
    episode_length: float | None = None

    @property
    def enabled(self) -> tuple[ConstraintSpec, ...]:
        return tuple(sorted((c for c in self.constraints if c.enabled), key=lambda c: c.id))

    @property
    def num_constraints(self) -> int:
        return len(self.enabled)

    @property
    def critic_constraints(self) -> tuple[ConstraintSpec, ...]:
        return tuple(c for c in self.enabled if c.needs_critic)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.enabled)

    def limits(self) -> FloatArray:
        """Thresholds d for every enabled constraint, in id order.

        Probabilistic and average limits are converted to the discounted
        scale; symmetry limits stay in their own units.
        """
        return np.array(
            [
                c.limit
                if c.kind is ConstraintKind.SYMMETRY
                else discounted_limit(c.limit, self.gamma)
                for c in self.enabled
            ],
            dtype=np.float64,
        )

    def with_overrides(
        self,
        *,
        limits: Mapping[str, float] | None = None,
        enabled: Mapping[str, bool] | None = None,
        gamma: float | None = None,
    ) -> CmdpSpec:
        limits = limits or {}
        enabled = enabled or {}
        known = {c.name for c in self.constraints}
        unknown = sorted((set(limits) | set(enabled)) - known)
        if unknown:
            raise ValueError(f"Unknown constraint names: {', '.join(unknown)}.")
        updated = [
            replace(
                c,
                limit=float(limits.get(c.name, c.limit)),
                enabled=bool(enabled.get(c.name, c.enabled)),
            )
            for c in self.constraints
        ]
        return replace(
            self,
            constraints=renumber(updated),
            gamma=self.gamma if gamma is None else gamma,
        )

    def disable_all(self) -> CmdpSpec:
        return self.with_overrides(enabled={c.name: False for c in self.constraints})


def renumber(constraints: Iterable[ConstraintSpec]) -> tuple[ConstraintSpec, ...]:
    """Give enabled constraints ids 0..K-1 in their current order.

    Disabled constraints are numbered after the enabled ones.
    """
    ordered = list(constraints)
    active = [c for c in ordered if c.enabled]
    inactive = [c for c in ordered if not c.enabled]
    return tuple(
        replace(c, id=index) for index, c in enumerate(active + inactive)
    )


@dataclass(frozen=True)
class Transition:
    state: FloatArray
    action: FloatArray
    reward: float
    costs: FloatArray
    done: bool
    time_limit: bool
    log_prob_old: float

    def __post_init__(self) -> None:
        if self.time_limit and not self.done:
            raise ValueError("A time-limit transition must also be done.")


@dataclass(frozen=True, eq=False)
class StepResult:
    next_state: FloatArray
    reward: float
    costs: FloatArray
    done: bool
    time_limit: bool


@dataclass(frozen=True, eq=False)
class MirrorSpec:
    """Linear state and action mirror maps (Psi_s, Psi_a).

    Both maps must be involutions; they are applied row-wise as
    ``x @ map.T``.
    """

    state_map: FloatArray
    action_map: FloatArray
    tolerance: float = field(default=1e-12, repr=False)

    def __post_init__(self) -> None:
        for label, matrix in (("state", self.state_map), ("action", self.action_map)):
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise ValueError(f"Mirror {label} map must be a square matrix.")
            identity = np.eye(matrix.shape[0])
            if not np.allclose(matrix @ matrix, identity, rtol=0.0, atol=self.tolerance):
                raise ValueError(f"Mirror {label} map must be an involution.")

    @classmethod
    def from_signs(cls, state_signs: Iterable[float], action_signs: Iterable[float]) -> MirrorSpec:
        return cls(
            np.diag(np.asarray(list(state_signs), dtype=np.float64)),
            np.diag(np.asarray(list(action_signs), dtype=np.float64)),
        )

    @classmethod
    def identity(cls, obs_dim: int, act_dim: int) -> MirrorSpec:
        return cls(np.eye(obs_dim), np.eye(act_dim))

    def mirror_states(self, states: FloatArray) -> FloatArray:
        return np.asarray(states @ self.state_map.T, dtype=np.float64)

    def mirror_actions(self, actions: FloatArray) -> FloatArray:
        return np.asarray(actions @ self.action_map.T, dtype=np.float64)


class Env(ABC):
    """A constrained control task.

    Instances are single-owner: one rollout worker drives one env. ``step``
    is deterministic given the state, the action, and the RNG seeded by
    ``reset``. Cost vectors have one entry per enabled constraint of the
    env's ``CmdpSpec``, in id order.
    """

    name: ClassVar[str]
    obs_dim: ClassVar[int]
    act_dim: ClassVar[int]

    def __init__(self, spec: CmdpSpec) -> None:
        self.spec = spec

    @abstractmethod
    def reset(self, seed: int) -> FloatArray: ...

    @abstractmethod
    def step(self, action: FloatArray) -> StepResult: ...

    def mirror(self) -> MirrorSpec | None:
        return None


def discounted_limit(limit: float, gamma: float) -> float:
    """Convert a per-step limit D to the discounted-return scale D / (1 - gamma)."""
    validate_gamma(gamma)
    if not math.isfinite(limit):
        raise ValueError("Constraint limit must be finite.")
    return limit / (1.0 - gamma)


def indicator_cost(violated: int, group_size: int) -> float:
    """Fraction of a group in violation, on the lattice {0, 1/n, ..., 1}."""
    if isinstance(violated, bool) or not isinstance(violated, int | np.integer):
        raise TypeError("violated must be an integer.")
    if group_size < 1:
        raise ValueError("group_size must be at least 1.")
    if not 0 <= violated <= group_size:
        raise ValueError(
            f"violated must be between 0 and group_size ({group_size}), inclusive."
        )
    return int(violated) / group_size


def validate_spec(spec: CmdpSpec) -> list[str]:
    """Report every invariant breach of ``spec``; empty when well-formed."""
    problems: list[str] = []
    if not (0.0 < spec.gamma < 1.0):
        problems.append(f"discount gamma={spec.gamma!r} must lie strictly between 0 and 1")
    if spec.episode_steps < 1:
        problems.append(f"episode_steps={spec.episode_steps!r} must be positive")
    if not spec.dt > 0:
        problems.append(f"dt={spec.dt!r} must be positive")
    if spec.episode_length is not None and not math.isclose(
        spec.episode_steps * spec.dt, spec.episode_length, rel_tol=1e-9, abs_tol=1e-12
    ):
        problems.append(
            f"episode_steps * dt = {spec.episode_steps * spec.dt!r} does not equal "
            f"episode_length={spec.episode_length!r}"
        )

    seen_names: set[str] = set()
    seen_ids: set[int] = set()
    for constraint in spec.constraints:
        label = f"constraint {constraint.name!r}"
        if constraint.name in seen_names:
            problems.append(f"{label} is defined more than once")
        seen_names.add(constraint.name)
        if constraint.id in seen_ids:
            problems.append(f"{label} reuses id {constraint.id}")
        seen_ids.add(constraint.id)
        if constraint.group_size < 1:
            problems.append(f"{label} has group_size={constraint.group_size!r}; must be >= 1")
        if not math.isfinite(constraint.limit):
            problems.append(f"{label} has a non-finite limit")
        elif constraint.kind is ConstraintKind.PROBABILISTIC and not (
            0.0 <= constraint.limit <= 1.0
        ):
            problems.append(
                f"{label} is probabilistic but its limit {constraint.limit!r} is outside [0, 1]"
            )

    enabled_ids = [c.id for c in spec.constraints if c.enabled]
    if enabled_ids != list(range(len(enabled_ids))):
        problems.append(
            f"enabled constraint ids {enabled_ids} are not contiguous 0..{len(enabled_ids) - 1}"
        )
    return problems


def validate_gamma(gamma: float) -> None:
    if isinstance(gamma, bool) or not isinstance(gamma, int | float):
        raise TypeError("gamma must be a number.")
    if not (0.0 < gamma < 1.0):
        raise InvalidDiscountError(gamma)


__all__ = [
    "DEFAULT_PROBABILITY_LIMIT",
    "CmdpSpec",
    "ConstraintKind",
    "ConstraintSpec",
    "Env",
    "MirrorSpec",
    "StepResult",
    "Transition",
    "discounted_limit",
    "indicator_cost",
    "renumber",
    "validate_gamma",
    "validate_spec",
]
