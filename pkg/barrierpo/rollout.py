"""On-policy data collection, GAE, advantage normalization, and J_C estimates."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from barrierpo.cmdp import Env, Transition, validate_gamma
from barrierpo.exceptions import EnvFailureError
from barrierpo.losses import log_prob
from barrierpo.networks import CostCritic, GaussianPolicy, ValueNet, policy_forward

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
BoolArray = NDArray[np.bool_]

_SEED_BOUND = 2**31 - 1
_STD_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Flat, env-major transitions of one collection round.

    Row ``i * steps_per_env + t`` is step ``t`` of env ``i``. ``costs`` has
    one column per enabled constraint; ``cost_values`` one column per
    critic-backed constraint. Bootstrap arrays are zero except on
    time-limit rows, where they hold the critics' values of the cut state.
    """

    states: FloatArray
    actions: FloatArray
    rewards: FloatArray
    costs: FloatArray
    dones: BoolArray
    time_limits: BoolArray
    log_probs_old: FloatArray
    values: FloatArray
    cost_values: FloatArray
    bootstrap_values: FloatArray
    bootstrap_cost_values: FloatArray
    num_envs: int
    steps_per_env: int

    def __post_init__(self) -> None:
        n = self.states.shape[0]
        for name in ("actions", "rewards", "costs", "dones", "time_limits", "log_probs_old",
                     "values", "cost_values", "bootstrap_values", "bootstrap_cost_values"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"TrajectoryBatch field {name!r} must have {n} rows.")
        if np.any(self.time_limits & ~self.dones):
            raise ValueError("A time-limit transition must also be done.")

    def __len__(self) -> int:
        return int(self.states.shape[0])

    @property
    def num_costs(self) -> int:
        return int(self.costs.shape[1])

    def transition(self, row: int) -> Transition:
        return Transition(
            state=self.states[row],
            action=self.actions[row],
            reward=float(self.rewards[row]),
            costs=self.costs[row],
            done=bool(self.dones[row]),
            time_limit=bool(self.time_limits[row]),
            log_prob_old=float(self.log_probs_old[row]),
        )

    def with_rewards(self, rewards: FloatArray) -> TrajectoryBatch:
        return replace(self, rewards=np.asarray(rewards, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class AdvantageSet:
    """Normalized advantages, critic targets, and J_C estimates.

    ``adv_c``/``ret_c``/``j_c`` cover the critic-backed constraints only.
    """

    adv_r: FloatArray
    ret_r: FloatArray
    adv_c: FloatArray
    ret_c: FloatArray
    j_c: FloatArray


class EnvPool:
    """Independent envs, each with its own RNG stream seeded ``seed + index``."""

    def __init__(self, envs: Sequence[Env], seed: int) -> None:
        if not envs:
            raise ValueError("EnvPool needs at least one environment.")
        self.envs = list(envs)
        self.seed = seed
        self.rngs = [np.random.default_rng(seed + index) for index in range(len(envs))]

    @classmethod
    def create(cls, factory: Callable[[], Env], size: int, seed: int) -> EnvPool:
        return cls([factory() for _ in range(size)], seed)

    def __len__(self) -> int:
        return len(self.envs)

    @property
    def obs_dim(self) -> int:
        return self.envs[0].obs_dim

    @property
    def act_dim(self) -> int:
        return self.envs[0].act_dim

    def rng_states(self) -> list[dict[str, Any]]:
        return [rng.bit_generator.state for rng in self.rngs]

    def restore_rng_states(self, states: Sequence[dict[str, Any]]) -> None:
        if len(states) != len(self.rngs):
            raise ValueError(f"Expected {len(self.rngs)} RNG states, got {len(states)}.")
        for rng, state in zip(self.rngs, states, strict=True):
            rng.bit_generator.state = state

    def reset_env(self, index: int) -> FloatArray:
        seed = int(self.rngs[index].integers(_SEED_BOUND))
        try:
            return np.asarray(self.envs[index].reset(seed), dtype=np.float64)
        except Exception as exc:
            raise EnvFailureError(index, str(exc)) from exc


def collect(
    policy: GaussianPolicy,
    pool: EnvPool,
    total_steps: int,
    value_net: ValueNet | None = None,
    cost_critic: CostCritic | None = None,
) -> TrajectoryBatch:
    """Run every env for ``total_steps / len(pool)`` steps from a fresh reset.

    Actions are sampled from the policy with per-env noise. The last step of
    each env segment is marked as a time-limit cut when the env did not end
    there itself.
    """
    n_envs = len(pool)
    if total_steps < 1 or total_steps % n_envs:
        raise ValueError(
            f"total_steps ({total_steps}) must be a positive multiple of the pool size ({n_envs})."
        )
    steps = total_steps // n_envs
    obs_dim, act_dim = pool.obs_dim, pool.act_dim
    n_costs = pool.envs[0].spec.num_constraints

    states = np.zeros((n_envs, steps, obs_dim))
    actions = np.zeros((n_envs, steps, act_dim))
    rewards = np.zeros((n_envs, steps))
    costs = np.zeros((n_envs, steps, n_costs))
    dones = np.zeros((n_envs, steps), dtype=bool)
    time_limits = np.zeros((n_envs, steps), dtype=bool)
    log_probs = np.zeros((n_envs, steps))
    cut_states = np.zeros((n_envs, steps, obs_dim))

    current = np.stack([pool.reset_env(i) for i in range(n_envs)])
    for t in range(steps):
        means, std = policy_forward(policy, current)
        noise = np.stack([pool.rngs[i].standard_normal(act_dim) for i in range(n_envs)])
        sampled = means + std * noise
        states[:, t] = current
        actions[:, t] = sampled
        log_probs[:, t] = log_prob(means, std, sampled)
        for i, env in enumerate(pool.envs):
            try:
                result = env.step(sampled[i])
            except Exception as exc:
                raise EnvFailureError(i, str(exc)) from exc
            rewards[i, t] = result.reward
            costs[i, t] = result.costs
            cut = result.time_limit or (t == steps - 1 and not result.done)
            dones[i, t] = result.done or cut
            time_limits[i, t] = cut
            if cut:
                cut_states[i, t] = result.next_state
            current[i] = pool.reset_env(i) if result.done else result.next_state

    def flat(array: NDArray[Any]) -> NDArray[Any]:
        return array.reshape((n_envs * steps, *array.shape[2:]))

    flat_states = flat(states)
    flat_limits = flat(time_limits)
    flat_cuts = flat(cut_states)
    n_heads = 0 if cost_critic is None else cost_critic.heads
    values = np.zeros(total_steps)
    bootstrap = np.zeros(total_steps)
    cost_values = np.zeros((total_steps, n_heads))
    bootstrap_costs = np.zeros((total_steps, n_heads))
    if value_net is not None:
        values = value_net.predict(flat_states)
        bootstrap = np.where(flat_limits, value_net.predict(flat_cuts), 0.0)
    if cost_critic is not None:
        cost_values = cost_critic.predict(flat_states)
        bootstrap_costs = np.where(flat_limits[:, None], cost_critic.predict(flat_cuts), 0.0)

    logger.debug("Collected %d transitions from %d envs.", total_steps, n_envs)
    return TrajectoryBatch(
        states=flat_states,
        actions=flat(actions),
        rewards=flat(rewards),
        costs=flat(costs),
        dones=flat(dones),
        time_limits=flat_limits,
        log_probs_old=flat(log_probs),
        values=values,
        cost_values=cost_values,
        bootstrap_values=bootstrap,
        bootstrap_cost_values=bootstrap_costs,
        num_envs=n_envs,
        steps_per_env=steps,
    )


def gae(
    signal: FloatArray,
    values: FloatArray,
    bootstrap: float | FloatArray,
    gamma: float,
    lam: float,
    dones: BoolArray,
    time_limits: BoolArray,
) -> tuple[FloatArray, FloatArray]:
    """Generalized advantage estimates and regression targets.

    ``signal`` and ``values`` are ``(N,)`` or ``(N, C)``. After a failure
    terminal the next value is 0; after a time-limit terminal, or past the
    last row, it is the bootstrap (a scalar or one entry per row).
    """
    signal = np.asarray(signal, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    time_limits = np.asarray(time_limits, dtype=bool)
    if values.shape != signal.shape:
        raise ValueError("signal and values must have the same shape.")
    n = signal.shape[0]
    if dones.shape != (n,) or time_limits.shape != (n,):
        raise ValueError("dones and time_limits must have one entry per transition.")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be between 0 and 1, inclusive.")
    boot = np.broadcast_to(np.asarray(bootstrap, dtype=np.float64), signal.shape)

    adv = np.zeros_like(signal)
    running = np.zeros_like(signal[0]) if n else np.zeros(())
    for t in range(n - 1, -1, -1):
        if dones[t]:
            next_value = boot[t] if time_limits[t] else np.zeros_like(signal[t])
            running = np.zeros_like(signal[t])
        elif t == n - 1:
            next_value = boot[t]
        else:
            next_value = values[t + 1]
        delta = signal[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return adv, adv + values


def zero_mean(adv: FloatArray) -> FloatArray:
    adv = np.asarray(adv, dtype=np.float64)
    if adv.shape[0] == 0:
        raise ValueError("Cannot normalize an empty advantage vector.")
    return adv - adv.mean(axis=0)


def standardize(adv: FloatArray) -> FloatArray:
    """Zero mean, unit population std; zero-mean only when nearly constant."""
    centered = zero_mean(adv)
    std = float(np.sqrt(np.mean(centered**2)))
    if std < _STD_FLOOR:
        return centered
    return centered / std


def estimate_Jc(batch: TrajectoryBatch, k: int, gamma: float) -> float:  # noqa: N802
    """Empirical per-step mean of cost column ``k`` on the discounted scale."""
    validate_gamma(gamma)
    if len(batch) == 0:
        raise ValueError("Cannot estimate J_C from an empty batch.")
    return float(np.mean(batch.costs[:, k])) / (1.0 - gamma)


def build_advantages(
    batch: TrajectoryBatch,
    gamma: float,
    lam: float,
    cost_columns: Sequence[int] = (),
) -> AdvantageSet:
    """GAE on rewards and on each critic-backed cost column, then normalize.

    ``cost_columns`` maps critic heads to columns of ``batch.costs``.
    """
    validate_gamma(gamma)
    if batch.cost_values.shape[1] != len(cost_columns):
        raise ValueError(
            f"Batch carries {batch.cost_values.shape[1]} cost-value columns for "
            f"{len(cost_columns)} critic-backed constraints."
        )
    adv_r, ret_r = gae(
        batch.rewards, batch.values, batch.bootstrap_values, gamma, lam,
        batch.dones, batch.time_limits,
    )
    n = len(batch)
    adv_c = np.zeros((n, len(cost_columns)))
    ret_c = np.zeros((n, len(cost_columns)))
    if cost_columns:
        raw_c, ret_c = gae(
            batch.costs[:, list(cost_columns)], batch.cost_values, batch.bootstrap_cost_values,
            gamma, lam, batch.dones, batch.time_limits,
        )
        adv_c = zero_mean(raw_c)
    j_c = np.array([estimate_Jc(batch, k, gamma) for k in cost_columns], dtype=np.float64)
    return AdvantageSet(standardize(adv_r), ret_r, adv_c, ret_c, j_c)


def dump_batch(batch: TrajectoryBatch, path: Path) -> None:
    """Write one transition per row, whitespace-separated, with a header line."""
    obs_dim = batch.states.shape[1]
    act_dim = batch.actions.shape[1]
    header = (
        [f"s{i}" for i in range(obs_dim)]
        + [f"a{i}" for i in range(act_dim)]
        + ["r"]
        + [f"c{k}" for k in range(batch.num_costs)]
        + ["done", "time_limit", "logp_old"]
    )
    lines = [" ".join(header)]
    for row in range(len(batch)):
        step = batch.transition(row)
        fields = [f"{x:.17g}" for x in step.state]
        fields += [f"{x:.17g}" for x in step.action]
        fields.append(f"{step.reward:.17g}")
        fields += [f"{x:.17g}" for x in step.costs]
        fields += [str(int(step.done)), str(int(step.time_limit))]
        fields.append(f"{step.log_prob_old:.17g}")
        lines.append(" ".join(fields))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


__all__ = [
    "AdvantageSet",
    "EnvPool",
    "TrajectoryBatch",
    "build_advantages",
    "collect",
    "dump_batch",
    "estimate_Jc",
    "gae",
    "standardize",
    "zero_mean",
]
