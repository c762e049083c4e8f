"""Analytic constrained-control tasks: point mass, pendulum, and line world.

Cost vectors carry one entry per enabled constraint of the env's CmdpSpec,
in id order. Symmetry constraints have no per-step cost and report 0;
their value comes from the policy itself. Constraint violations never end
an episode; only the time limit does.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping

import numpy as np

from barrierpo.cmdp import (
    DEFAULT_PROBABILITY_LIMIT,
    CmdpSpec,
    ConstraintKind,
    ConstraintSpec,
    Env,
    FloatArray,
    MirrorSpec,
    StepResult,
    indicator_cost,
)


def _checked_action(action: FloatArray, act_dim: int) -> FloatArray:
    action = np.asarray(action, dtype=np.float64).reshape(-1)
    if action.shape != (act_dim,):
        raise ValueError(f"Expected an action of length {act_dim}, got shape {action.shape}.")
    if not np.all(np.isfinite(action)):
        raise ValueError("Action must be finite.")
    return action


class _TimedEnv(Env):
    """Shared episode clock and cost-vector assembly."""

    def __init__(self, spec: CmdpSpec, *, k_c: float = 10.0, effort_coef: float = 0.0) -> None:
        super().__init__(spec)
        if effort_coef < 0:
            raise ValueError("effort_coef must be zero or positive.")
        self.k_c = float(k_c)
        self.effort_coef = float(effort_coef)
        self.steps = 0
        self._rng = np.random.default_rng(0)

    def _begin(self, seed: int) -> np.random.Generator:
        self.steps = 0
        self._rng = np.random.default_rng(seed)
        return self._rng

    def _finish(self, next_state: FloatArray, reward: float, kernels: Mapping[str, float]) -> StepResult:
        self.steps += 1
        time_limit = self.steps >= self.spec.episode_steps
        costs = np.array([kernels.get(c.name, 0.0) for c in self.spec.enabled], dtype=np.float64)
        return StepResult(next_state, float(reward), costs, time_limit, time_limit)


class PointMass2D(_TimedEnv):
    """Planar double integrator tracking a velocity command.

    State is ``[p_x, p_y, v_x, v_y, cmd_x, cmd_y]``; the action is an
    acceleration.
    """

    name = "point_mass_2d"
    obs_dim = 6
    act_dim = 2

    box_bound = 2.0
    actuation_bound = 1.5
    speed_bound = 1.5
    command_range = 1.5
    start_range = 0.5

    def __init__(self, spec: CmdpSpec, *, k_c: float = 10.0, effort_coef: float = 0.0) -> None:
        super().__init__(spec, k_c=k_c, effort_coef=effort_coef)
        self.position = np.zeros(2)
        self.velocity = np.zeros(2)
        self.command = np.zeros(2)

    def observation(self) -> FloatArray:
        return np.concatenate([self.position, self.velocity, self.command])

    def reset(self, seed: int) -> FloatArray:
        rng = self._begin(seed)
        self.position = rng.uniform(-self.start_range, self.start_range, 2)
        self.velocity = np.zeros(2)
        self.command = rng.uniform(-self.command_range, self.command_range, 2)
        return self.observation()

    def step(self, action: FloatArray) -> StepResult:
        action = _checked_action(action, self.act_dim)
        dt = self.spec.dt
        self.velocity = self.velocity + action * dt
        self.position = self.position + self.velocity * dt
        reward = -self.k_c * float(np.sum((self.command - self.velocity) ** 2))
        reward -= self.effort_coef * float(np.sum(action**2))
        kernels = {
            "position_box": indicator_cost(int(np.sum(np.abs(self.position) > self.box_bound)), 2),
            "actuation": indicator_cost(int(np.sum(np.abs(action) > self.actuation_bound)), 2),
            "speed_overshoot": max(0.0, float(np.linalg.norm(self.velocity)) - self.speed_bound),
            "effort": float(np.sum(np.abs(action))) / 2.0,
        }
        return self._finish(self.observation(), reward, kernels)

    def mirror(self) -> MirrorSpec:
        return MirrorSpec.from_signs([1, -1, 1, -1, 1, -1], [1, -1])


class Pendulum(_TimedEnv):
    """Torque-driven pendulum tracking an angular-velocity command.

    ``theta = 0`` is upright and gravity pulls the pole away from it. State
    is ``[theta, omega, cmd]``; integration is semi-implicit Euler.
    """

    name = "pendulum"
    obs_dim = 3
    act_dim = 1

    gravity = 9.81
    length = 1.0
    mass = 1.0
    torque_bound = 2.0
    command_range = 1.0
    start_range = 0.2

    def __init__(self, spec: CmdpSpec, *, k_c: float = 10.0, effort_coef: float = 0.0) -> None:
        super().__init__(spec, k_c=k_c, effort_coef=effort_coef)
        self.theta = 0.0
        self.omega = 0.0
        self.command = 0.0

    def observation(self) -> FloatArray:
        return np.array([self.theta, self.omega, self.command])

    def energy(self) -> float:
        """Kinetic plus potential energy, zero potential at the pivot height."""
        inertia = self.mass * self.length**2
        return 0.5 * inertia * self.omega**2 + self.mass * self.gravity * self.length * math.cos(self.theta)

    def reset(self, seed: int) -> FloatArray:
        rng = self._begin(seed)
        self.theta = float(rng.uniform(-self.start_range, self.start_range))
        self.omega = 0.0
        self.command = float(rng.uniform(-self.command_range, self.command_range))
        return self.observation()

    def step(self, action: FloatArray) -> StepResult:
        torque = float(_checked_action(action, self.act_dim)[0])
        dt = self.spec.dt
        accel = self.gravity / self.length * math.sin(self.theta) + torque / (self.mass * self.length**2)
        self.omega = self.omega + accel * dt
        self.theta = self.theta + self.omega * dt
        reward = -self.k_c * (self.command - self.omega) ** 2 - self.effort_coef * torque**2
        kernels = {
            "torque_limit": indicator_cost(int(abs(torque) > self.torque_bound), 1),
            "angle_deviation": abs(self.theta),
        }
        return self._finish(self.observation(), reward, kernels)

    def mirror(self) -> MirrorSpec:
        return MirrorSpec.from_signs([-1, -1, -1], [-1])


class LineWorld(_TimedEnv):
    """One-dimensional double integrator steered to ``x = 1``.

    Reset is deterministic, so an episode depends only on its actions.
    """

    name = "line_world"
    obs_dim = 2
    act_dim = 1

    target = 1.0
    speed_bound = 1.0

    def __init__(self, spec: CmdpSpec, *, k_c: float = 10.0, effort_coef: float = 0.0) -> None:
        super().__init__(spec, k_c=k_c, effort_coef=effort_coef)
        self.x = 0.0
        self.v = 0.0

    def observation(self) -> FloatArray:
        return np.array([self.x, self.v])

    def reset(self, seed: int) -> FloatArray:
        self._begin(seed)
        self.x = 0.0
        self.v = 0.0
        return self.observation()

    def step(self, action: FloatArray) -> StepResult:
        force = float(_checked_action(action, self.act_dim)[0])
        dt = self.spec.dt
        self.v = self.v + force * dt
        self.x = self.x + self.v * dt
        reward = -(self.x - self.target) ** 2 - self.effort_coef * force**2
        kernels = {
            "speed": indicator_cost(int(abs(self.v) > self.speed_bound), 1),
            "effort": abs(force),
        }
        return self._finish(self.observation(), reward, kernels)


def _point_mass_constraints() -> tuple[ConstraintSpec, ...]:
    return (
        ConstraintSpec(0, "position_box", ConstraintKind.PROBABILISTIC, DEFAULT_PROBABILITY_LIMIT, 2),
        ConstraintSpec(1, "actuation", ConstraintKind.PROBABILISTIC, DEFAULT_PROBABILITY_LIMIT, 2),
        ConstraintSpec(2, "speed_overshoot", ConstraintKind.AVERAGE, 0.35),
        ConstraintSpec(3, "effort", ConstraintKind.AVERAGE, 0.5),
        ConstraintSpec(4, "symmetry", ConstraintKind.SYMMETRY, 0.1),
    )


def _pendulum_constraints() -> tuple[ConstraintSpec, ...]:
    return (
        ConstraintSpec(0, "torque_limit", ConstraintKind.PROBABILISTIC, DEFAULT_PROBABILITY_LIMIT),
        ConstraintSpec(1, "angle_deviation", ConstraintKind.AVERAGE, 0.5),
        ConstraintSpec(2, "symmetry", ConstraintKind.SYMMETRY, 0.1),
    )


def _line_world_constraints() -> tuple[ConstraintSpec, ...]:
    return (
        ConstraintSpec(0, "speed", ConstraintKind.PROBABILISTIC, DEFAULT_PROBABILITY_LIMIT),
        ConstraintSpec(1, "effort", ConstraintKind.AVERAGE, 1.0),
    )


ENV_REGISTRY: dict[str, tuple[type[_TimedEnv], int, float, Callable[[], tuple[ConstraintSpec, ...]]]] = {
    PointMass2D.name: (PointMass2D, 80, 0.05, _point_mass_constraints),
    Pendulum.name: (Pendulum, 80, 0.05, _pendulum_constraints),
    LineWorld.name: (LineWorld, 10, 0.1, _line_world_constraints),
}


def _registry_entry(name: str) -> tuple[type[_TimedEnv], int, float, Callable[[], tuple[ConstraintSpec, ...]]]:
    try:
        return ENV_REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(ENV_REGISTRY))
        raise ValueError(f"Unknown environment {name!r}; expected one of: {known}.") from None


def default_spec(
    name: str,
    *,
    gamma: float = 0.99,
    episode_steps: int | None = None,
    dt: float | None = None,
) -> CmdpSpec:
    """The CmdpSpec an environment ships with, optionally re-timed."""
    _, default_steps, default_dt, constraints = _registry_entry(name)
    steps = default_steps if episode_steps is None else episode_steps
    step_dt = default_dt if dt is None else dt
    return CmdpSpec(gamma, constraints(), name, steps, step_dt, steps * step_dt)


def make_env(spec: CmdpSpec, *, k_c: float = 10.0, effort_coef: float = 0.0) -> Env:
    env_cls, *_ = _registry_entry(spec.env_name)
    return env_cls(spec, k_c=k_c, effort_coef=effort_coef)


__all__ = [
    "ENV_REGISTRY",
    "LineWorld",
    "Pendulum",
    "PointMass2D",
    "default_spec",
    "make_env",
]
