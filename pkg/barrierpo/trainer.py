"""The training loop: collect, estimate, adapt thresholds, step the policy, fit critics."""

from __future__ import annotations

import logging
import time
from dataclasses import replace

import numpy as np
from numpy.typing import NDArray

from barrierpo.cmdp import ConstraintKind
from barrierpo.config import CriticDesign, RunConfig, RunMode
from barrierpo.critics import Adam, train_critics
from barrierpo.envs import make_env
from barrierpo.exceptions import ConfigError
from barrierpo.losses import symmetry_mismatch
from barrierpo.networks import (
    CostCritic,
    GaussianPolicy,
    MlpSpec,
    MultiHeadCostValueNet,
    SeparateCostValueNets,
    ValueNet,
)
from barrierpo.optimizer import BarrierProblem, IterationReport, adaptive_thresholds, policy_step
from barrierpo.rollout import AdvantageSet, EnvPool, TrajectoryBatch, build_advantages, collect

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

# Independent RNG streams derived from the run seed.
_INIT_STREAM = 0
_COST_INIT_STREAM = 1
_SHUFFLE_STREAM = 2


def critic_columns(config: RunConfig) -> list[int]:
    return [i for i, c in enumerate(config.cmdp.enabled) if c.kind is not ConstraintKind.SYMMETRY]


def symmetry_columns(config: RunConfig) -> list[int]:
    return [i for i, c in enumerate(config.cmdp.enabled) if c.kind is ConstraintKind.SYMMETRY]


def build_cost_critic(
    config: RunConfig, obs_dim: int, heads: int, rng: np.random.Generator
) -> CostCritic | None:
    if heads == 0:
        return None
    net = config.network
    spec = MlpSpec((obs_dim, *net.cost_hidden, heads), net.activation, net.leaky_slope)
    if net.critic_design is CriticDesign.SEPARATE:
        return SeparateCostValueNets.initialize(spec, heads, rng)
    return MultiHeadCostValueNet.initialize(spec, rng)


class Trainer:
    """Single-owner trainer state and the per-iteration update."""

    def __init__(self, config: RunConfig) -> None:
        self.config = config
        spec = config.cmdp
        self.pool = EnvPool.create(
            lambda: make_env(spec, k_c=config.env.k_c, effort_coef=config.env.effort_coef),
            config.batch_envs,
            config.seed,
        )
        obs_dim, act_dim = self.pool.obs_dim, self.pool.act_dim
        self.mirror = self.pool.envs[0].mirror()
        self.critic_columns = critic_columns(config)
        self.symmetry_columns = symmetry_columns(config)
        if self.symmetry_columns and self.mirror is None:
            raise ConfigError(
                f"Environment {spec.env_name!r} has no mirror; disable its symmetry constraints."
            )
        if config.mode is RunMode.PENALTY and len(config.penalty_lambdas) != spec.num_constraints:
            raise ConfigError(
                f"penalty.lambdas has {len(config.penalty_lambdas)} entries for "
                f"{spec.num_constraints} enabled constraints."
            )

        net = config.network
        init_rng = np.random.default_rng([config.seed, _INIT_STREAM])
        self.policy = GaussianPolicy.initialize(
            MlpSpec((obs_dim, *net.policy_hidden, act_dim), net.activation, net.leaky_slope),
            init_rng,
            init_std=net.init_std,
        )
        self.value_net = ValueNet.initialize(
            MlpSpec((obs_dim, *net.value_hidden, 1), net.activation, net.leaky_slope), init_rng
        )
        self.cost_critic = build_cost_critic(
            config, obs_dim, len(self.critic_columns), np.random.default_rng([config.seed, _COST_INIT_STREAM])
        )
        self.value_opt = Adam(self.value_net.num_params, config.barrier.value_lr)
        self.cost_opt = (
            None if self.cost_critic is None else Adam(self.cost_critic.num_params, config.barrier.value_lr)
        )
        self.shuffle_rng = np.random.default_rng([config.seed, _SHUFFLE_STREAM])
        self.iteration = 0
        self.last_batch: TrajectoryBatch | None = None

    @property
    def total_steps(self) -> int:
        return self.config.batch_envs * self.config.batch_steps

    @property
    def monitored_names(self) -> tuple[str, ...]:
        return self.config.cmdp.names

    @property
    def enforced_names(self) -> tuple[str, ...]:
        if self.config.mode is not RunMode.CONSTRAINED:
            return ()
        names = self.config.cmdp.names
        return tuple(names[i] for i in self.critic_columns + self.symmetry_columns)

    def monitor(self, batch: TrajectoryBatch, adv_set: AdvantageSet) -> FloatArray:
        """J estimates for every enabled constraint at the data-collecting policy."""
        j = np.zeros(self.config.cmdp.num_constraints)
        j[self.critic_columns] = adv_set.j_c
        if self.symmetry_columns and self.mirror is not None:
            j[self.symmetry_columns] = symmetry_mismatch(self.policy, batch.states, self.mirror)
        return j

    def problem(self, j: FloatArray) -> tuple[BarrierProblem, FloatArray]:
        """The policy-step problem and the thresholds reported for this iteration."""
        config = self.config
        d = config.cmdp.limits()
        if config.mode is not RunMode.CONSTRAINED:
            return BarrierProblem.reward_only(config.cmdp.gamma), d
        d_i = adaptive_thresholds(j, d, config.barrier.alpha, config.barrier.epsilon_min)
        problem = BarrierProblem.constrained(
            config.cmdp.gamma,
            d_i[self.critic_columns],
            d_i[self.symmetry_columns],
            self.mirror if self.symmetry_columns else None,
        )
        return problem, d_i

    def train_iteration(self) -> IterationReport:
        config = self.config
        started = time.perf_counter()
        batch = collect(self.policy, self.pool, self.total_steps, self.value_net, self.cost_critic)
        self.last_batch = batch
        collected = time.perf_counter()

        mean_reward = float(np.mean(batch.rewards))
        if config.mode is RunMode.PENALTY:
            batch = batch.with_rewards(batch.rewards - batch.costs @ np.asarray(config.penalty_lambdas))
        adv_set = build_advantages(batch, config.cmdp.gamma, config.gae_lambda, self.critic_columns)
        j = self.monitor(batch, adv_set)
        problem, d_i = self.problem(j)

        self.policy, report = policy_step(
            batch, adv_set, self.policy, config.barrier, problem, iteration=self.iteration
        )
        stepped = time.perf_counter()

        update = train_critics(
            batch,
            adv_set,
            self.value_net,
            self.cost_critic,
            config.barrier,
            rng=self.shuffle_rng,
            value_opt=self.value_opt,
            cost_opt=self.cost_opt,
        )
        self.value_net = update.value_net
        self.cost_critic = update.cost_critic
        finished = time.perf_counter()

        report = replace(
            report,
            mean_reward=mean_reward,
            j_c=j,
            d_i=d_i,
            value_loss=update.value_loss,
            cost_value_loss=update.cost_value_loss,
            wall_times={
                "collect": collected - started,
                "policy_step": stepped - collected,
                "critic": finished - stepped,
            },
        )
        report.check(config.barrier.delta)
        self.iteration += 1
        logger.info(
            "iter %d reward %.4f kl %.3e %s (%d backtracks)",
            report.iter,
            report.mean_reward,
            report.kl,
            report.status,
            report.backtracks,
        )
        return report

    def run(self, iterations: int | None = None) -> list[IterationReport]:
        remaining = self.config.iterations - self.iteration if iterations is None else iterations
        return [self.train_iteration() for _ in range(max(0, remaining))]


__all__ = [
    "Trainer",
    "build_cost_critic",
    "critic_columns",
    "symmetry_columns",
]
