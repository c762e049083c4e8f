"""Tests for rollout collection, GAE and advantage normalization."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from barrierpo.cmdp import CmdpSpec, Env, StepResult
from barrierpo.envs import LineWorld, default_spec, make_env
from barrierpo.exceptions import EnvFailureError, InvalidDiscountError
from barrierpo.losses import log_prob
from barrierpo.networks import GaussianPolicy, MlpSpec, MultiHeadCostValueNet, ValueNet, policy_forward
from barrierpo.rollout import (
    EnvPool,
    TrajectoryBatch,
    build_advantages,
    collect,
    dump_batch,
    estimate_Jc,
    gae,
    standardize,
    zero_mean,
)

GAMMA = 0.99
LAM = 0.97


def _pool(seed: int = 0, size: int = 2, name: str = "line_world") -> EnvPool:
    spec = default_spec(name)
    return EnvPool.create(lambda: make_env(spec), size, seed)


def _policy(obs_dim: int = 2, act_dim: int = 1) -> GaussianPolicy:
    return GaussianPolicy.initialize(MlpSpec((obs_dim, 8, act_dim)), np.random.default_rng(0))


def _batch_with_costs(costs: np.ndarray) -> TrajectoryBatch:
    n = costs.shape[0]
    dones = np.zeros(n, dtype=bool)
    dones[-1] = True
    return TrajectoryBatch(
        states=np.zeros((n, 2)),
        actions=np.zeros((n, 1)),
        rewards=np.zeros(n),
        costs=costs,
        dones=dones,
        time_limits=dones.copy(),
        log_probs_old=np.zeros(n),
        values=np.zeros(n),
        cost_values=np.zeros((n, 0)),
        bootstrap_values=np.zeros(n),
        bootstrap_cost_values=np.zeros((n, 0)),
        num_envs=1,
        steps_per_env=n,
    )


def _random_episodes(
    rng: np.random.Generator, count: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Concatenated episodes ending in success, failure or truncation."""
    lengths = rng.integers(1, 21, size=count)
    n = int(lengths.sum())
    ends = np.cumsum(lengths) - 1
    dones = np.zeros(n, dtype=bool)
    dones[ends] = True
    time_limits = np.zeros(n, dtype=bool)
    # 0 success, 1 failure (both stop at zero), 2 truncation (bootstrapped)
    kinds = rng.integers(0, 3, size=count)
    time_limits[ends[kinds == 2]] = True
    rewards = rng.standard_normal(n)
    rewards[ends[kinds == 0]] += 10.0
    return rewards, rng.standard_normal(n), rng.standard_normal(n), dones, time_limits


def _double_sum_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    bootstrap: np.ndarray,
    lam: float,
    dones: np.ndarray,
    time_limits: np.ndarray,
) -> np.ndarray:
    n = rewards.shape[0]
    next_values = np.append(values[1:], bootstrap[-1])
    next_values[dones] = np.where(time_limits[dones], bootstrap[dones], 0.0)
    deltas = rewards + GAMMA * next_values - values
    adv = np.zeros(n)
    start = 0
    for end in [*np.flatnonzero(dones), n - 1]:
        for t in range(start, end + 1):
            adv[t] = sum((GAMMA * lam) ** (k - t) * deltas[k] for k in range(t, end + 1))
        start = end + 1
    return adv


class _ExplodingEnv(Env):
    name = "exploding"
    obs_dim = 2
    act_dim = 1

    def reset(self, seed: int) -> np.ndarray:
        _ = seed
        return np.zeros(2)

    def step(self, action: np.ndarray) -> StepResult:
        _ = action
        raise RuntimeError("simulator diverged")


class TestCollect:
    """Batch shape, determinism and stored log-probabilities."""

    def test_shape(self) -> None:
        """Steps are split evenly across the pool."""
        batch = collect(_policy(), _pool(), 10)
        assert len(batch) == 10
        assert batch.states.shape == (10, 2)
        assert batch.costs.shape == (10, 2)
        assert batch.num_envs == 2
        assert batch.steps_per_env == 5

    def test_same_seed_same_batch(self) -> None:
        """A seeded pool reproduces its batch exactly."""
        first = collect(_policy(), _pool(seed=3), 20)
        second = collect(_policy(), _pool(seed=3), 20)
        np.testing.assert_array_equal(first.actions, second.actions)
        np.testing.assert_array_equal(first.rewards, second.rewards)
        np.testing.assert_array_equal(first.states, second.states)

    def test_different_seed_different_actions(self) -> None:
        first = collect(_policy(), _pool(seed=3), 20)
        second = collect(_policy(), _pool(seed=4), 20)
        assert not np.array_equal(first.actions, second.actions)

    def test_stored_log_probs_are_consistent(self) -> None:
        """Stored log-probabilities match the sampling policy."""
        policy = _policy()
        batch = collect(policy, _pool(), 20)
        means, std = policy_forward(policy, batch.states)
        np.testing.assert_allclose(log_prob(means, std, batch.actions), batch.log_probs_old, atol=1e-12)

    def test_segment_ends_are_time_limits(self) -> None:
        """The last step of every segment is a truncation."""
        batch = collect(_policy(), _pool(), 14)
        ends = np.arange(1, 3) * 7 - 1
        assert batch.time_limits[ends].all()
        assert batch.dones[ends].all()

    def test_episode_time_limit_inside_segment(self) -> None:
        """Line world episodes end after 10 steps; a 15-step segment resets once."""
        batch = collect(_policy(), _pool(size=1), 15)
        assert batch.time_limits[9]
        np.testing.assert_array_equal(batch.states[10], [0.0, 0.0])

    def test_critic_values_and_bootstrap(self) -> None:
        """Only truncated steps carry a bootstrap value."""
        rng = np.random.default_rng(1)
        value_net = ValueNet.initialize(MlpSpec((2, 4, 1)), rng)
        critic = MultiHeadCostValueNet.initialize(MlpSpec((2, 4, 2)), rng)
        batch = collect(_policy(), _pool(), 10, value_net, critic)
        np.testing.assert_array_equal(batch.values, value_net.predict(batch.states))
        assert batch.cost_values.shape == (10, 2)
        assert np.all(batch.bootstrap_values[~batch.time_limits] == 0.0)
        assert np.any(batch.bootstrap_values[batch.time_limits] != 0.0)

    def test_rejects_uneven_split(self) -> None:
        with pytest.raises(ValueError, match="multiple of the pool size"):
            collect(_policy(), _pool(size=3), 10)

    def test_env_failure_names_index(self) -> None:
        """A failing simulator is reported with its pool index."""
        spec = CmdpSpec(0.99, (), "exploding", 10, 0.1)
        pool = EnvPool([make_env(default_spec("line_world")), _ExplodingEnv(spec)], seed=0)
        with pytest.raises(EnvFailureError) as exc_info:
            collect(_policy(), pool, 4)
        assert exc_info.value.env_index == 1
        assert "simulator diverged" in str(exc_info.value)

    def test_rng_states_round_trip(self) -> None:
        """Restored generator states replay the same actions."""
        pool = _pool(seed=5)
        saved = pool.rng_states()
        first = collect(_policy(), pool, 10)
        pool.restore_rng_states(saved)
        second = collect(_policy(), pool, 10)
        np.testing.assert_array_equal(first.actions, second.actions)


class TestGae:
    """Generalized advantage estimation."""

    def test_two_step_terminal_example(self) -> None:
        """Hand-computed advantages for a two-step episode."""
        adv, ret = gae(
            np.array([1.0, 1.0]),
            np.zeros(2),
            0.0,
            GAMMA,
            LAM,
            np.array([False, True]),
            np.array([False, False]),
        )
        np.testing.assert_allclose(adv, [1.9603, 1.0], atol=1e-12)
        np.testing.assert_allclose(ret, adv)

    def test_lambda_zero_is_td_residual(self, rng: np.random.Generator) -> None:
        """With lambda 0 the advantage is the one-step TD residual."""
        rewards = rng.standard_normal(6)
        values = rng.standard_normal(6)
        dones = np.zeros(6, dtype=bool)
        adv, _ = gae(rewards, values, 0.5, GAMMA, 0.0, dones, dones)
        next_values = np.append(values[1:], 0.5)
        np.testing.assert_allclose(adv, rewards + GAMMA * next_values - values, atol=1e-12)

    def test_lambda_one_is_discounted_return(self, rng: np.random.Generator) -> None:
        """With lambda 1 and zero values the advantage is the discounted return."""
        rewards = rng.standard_normal(8)
        dones = np.zeros(8, dtype=bool)
        dones[-1] = True
        adv, _ = gae(rewards, np.zeros(8), 0.0, GAMMA, 1.0, dones, np.zeros(8, dtype=bool))
        expected = [sum(GAMMA ** (k - t) * rewards[k] for k in range(t, 8)) for t in range(8)]
        np.testing.assert_allclose(adv, expected, atol=1e-12)

    def test_time_limit_bootstraps(self) -> None:
        """Truncation bootstraps from the value of the next state."""
        adv, _ = gae(
            np.array([0.0]),
            np.array([0.0]),
            np.array([2.0]),
            GAMMA,
            LAM,
            np.array([True]),
            np.array([True]),
        )
        assert adv[0] == pytest.approx(GAMMA * 2.0)

    def test_failure_terminal_ignores_bootstrap(self) -> None:
        """A true terminal has no future value."""
        adv, _ = gae(
            np.array([0.0]),
            np.array([0.0]),
            np.array([2.0]),
            GAMMA,
            LAM,
            np.array([True]),
            np.array([False]),
        )
        assert adv[0] == 0.0

    def test_terminal_stops_accumulation(self) -> None:
        adv, _ = gae(
            np.array([1.0, 5.0]),
            np.zeros(2),
            0.0,
            GAMMA,
            LAM,
            np.array([True, True]),
            np.array([False, False]),
        )
        np.testing.assert_array_equal(adv, [1.0, 5.0])

    def test_two_dimensional_signal(self) -> None:
        """Each signal column is processed independently."""
        signal = np.array([[1.0, 0.0], [1.0, 2.0]])
        dones = np.array([False, True])
        adv, _ = gae(signal, np.zeros((2, 2)), 0.0, GAMMA, LAM, dones, np.zeros(2, dtype=bool))
        np.testing.assert_allclose(adv[:, 0], [1.9603, 1.0])
        np.testing.assert_allclose(adv[:, 1], [GAMMA * LAM * 2.0, 2.0])

    @pytest.mark.parametrize("lam", [0.0, LAM, 1.0])
    def test_matches_double_sum_over_random_episodes(self, lam: float) -> None:
        """Backward recursion equals the explicit per-episode sum of discounted TD residuals."""
        rewards, values, bootstrap, dones, time_limits = _random_episodes(np.random.default_rng(11), 1000)
        adv, ret = gae(rewards, values, bootstrap, GAMMA, lam, dones, time_limits)
        expected = _double_sum_gae(rewards, values, bootstrap, lam, dones, time_limits)
        np.testing.assert_allclose(adv, expected, rtol=0, atol=1e-10)
        np.testing.assert_allclose(ret, expected + values, rtol=0, atol=1e-10)

    def test_values_after_failure_do_not_leak_back(self) -> None:
        """Rows before a failure terminal ignore everything that follows it."""
        rewards, values, bootstrap, dones, _ = _random_episodes(np.random.default_rng(12), 50)
        time_limits = np.zeros_like(dones)
        cut = int(np.flatnonzero(dones)[10])
        adv, _ = gae(rewards, values, bootstrap, GAMMA, LAM, dones, time_limits)
        shifted = values.copy()
        shifted[cut + 1 :] += 100.0
        adv_shifted, _ = gae(rewards, shifted, bootstrap, GAMMA, LAM, dones, time_limits)
        np.testing.assert_array_equal(adv_shifted[: cut + 1], adv[: cut + 1])
        assert not np.allclose(adv_shifted[cut + 1 :], adv[cut + 1 :])

    def test_rejects_bad_lambda(self) -> None:
        with pytest.raises(ValueError, match="lambda"):
            gae(np.zeros(1), np.zeros(1), 0.0, GAMMA, 1.5, np.zeros(1, dtype=bool), np.zeros(1, dtype=bool))


class TestNormalization:
    def test_zero_mean(self) -> None:
        np.testing.assert_allclose(zero_mean(np.array([1.0, 2.0, 3.0])), [-1.0, 0.0, 1.0])

    def test_standardize(self) -> None:
        np.testing.assert_allclose(
            standardize(np.array([1.0, 2.0, 3.0])), [-1.224744871391589, 0.0, 1.224744871391589]
        )

    def test_standardize_constant_vector(self) -> None:
        """A constant vector standardizes to zeros."""
        np.testing.assert_array_equal(standardize(np.full(4, 3.0)), np.zeros(4))

    def test_empty_vector_is_rejected(self) -> None:
        with pytest.raises(ValueError, match="empty"):
            zero_mean(np.zeros(0))


class TestEstimateJc:
    def test_constant_cost(self) -> None:
        """A constant per-step cost c gives c/(1-gamma)."""
        batch = _batch_with_costs(np.full((10, 1), 0.025))
        assert estimate_Jc(batch, 0, GAMMA) == pytest.approx(2.5)

    def test_zero_cost(self) -> None:
        assert estimate_Jc(_batch_with_costs(np.zeros((10, 1))), 0, GAMMA) == 0.0

    def test_indicator_fraction(self, rng: np.random.Generator) -> None:
        """An indicator cost estimates probability over (1-gamma)."""
        costs = (rng.random((20000, 1)) < 0.1).astype(float)
        assert estimate_Jc(_batch_with_costs(costs), 0, GAMMA) == pytest.approx(10.0, rel=0.1)

    def test_line_world_matches_action_grid_expectation(self) -> None:
        """Three-step episodes against an exhaustive sum over a fine action grid."""
        spec = default_spec("line_world", episode_steps=3)
        mean, std, envs = 4.0, 1.0, 4000
        policy = _policy()
        flat = np.zeros(policy.num_params)
        flat[policy.mean_net.num_params - 1] = mean
        flat[policy.mean_net.num_params :] = math.log(std)
        batch = collect(policy.with_flat(flat), EnvPool.create(lambda: make_env(spec), envs, 5), 3 * envs)

        # cell midpoints over +-6 std, weighted by exact normal cell mass
        edges = np.linspace(-6.0, 6.0, 42)
        cdf = np.array([0.5 * (1.0 + math.erf(z / math.sqrt(2.0))) for z in edges])
        weights = np.diff(cdf) / (cdf[-1] - cdf[0])
        grid = mean + std * 0.5 * (edges[1:] + edges[:-1])
        mass = np.einsum("i,j,k->ijk", weights, weights, weights)
        velocity = np.zeros_like(mass)
        speed = effort = 0.0
        for action in np.meshgrid(grid, grid, grid, indexing="ij"):
            velocity = velocity + action * spec.dt
            speed += float(np.sum(mass * (np.abs(velocity) > LineWorld.speed_bound)))
            effort += float(np.sum(mass * np.abs(action)))

        per_episode = batch.costs.reshape(envs, 3, -1).mean(axis=1)
        for k, expected_step_cost in enumerate((speed / 3, effort / 3)):
            stderr = per_episode[:, k].std() / math.sqrt(envs)
            tolerance = (4.0 * stderr + 1e-3) / (1.0 - GAMMA)
            assert estimate_Jc(batch, k, GAMMA) == pytest.approx(expected_step_cost / (1.0 - GAMMA), abs=tolerance)

    def test_invalid_gamma(self) -> None:
        with pytest.raises(InvalidDiscountError):
            estimate_Jc(_batch_with_costs(np.zeros((2, 1))), 0, 1.0)


class TestBuildAdvantages:
    def test_reward_advantages_are_standardized(self) -> None:
        """Reward advantages have zero mean and unit std."""
        batch = collect(_policy(), _pool(), 20)
        adv_set = build_advantages(batch, GAMMA, LAM)
        assert adv_set.adv_r.mean() == pytest.approx(0.0, abs=1e-12)
        assert adv_set.adv_r.std() == pytest.approx(1.0)
        assert adv_set.adv_c.shape == (20, 0)
        assert adv_set.j_c.shape == (0,)

    def test_cost_advantages_are_zero_mean(self) -> None:
        """Cost advantages are centered but not rescaled."""
        rng = np.random.default_rng(2)
        critic = MultiHeadCostValueNet.initialize(MlpSpec((2, 4, 2)), rng)
        batch = collect(_policy(), _pool(), 20, ValueNet.initialize(MlpSpec((2, 4, 1)), rng), critic)
        adv_set = build_advantages(batch, GAMMA, LAM, [0, 1])
        np.testing.assert_allclose(adv_set.adv_c.mean(axis=0), 0.0, atol=1e-12)
        assert adv_set.j_c.shape == (2,)

    def test_column_count_must_match_critic(self) -> None:
        batch = collect(_policy(), _pool(), 10)
        with pytest.raises(ValueError, match="critic-backed"):
            build_advantages(batch, GAMMA, LAM, [0])


class TestDumpBatch:
    def test_header_and_rows(self, tmp_path: Path) -> None:
        """The dump has a named header and one row per step."""
        batch = collect(_policy(), _pool(), 10)
        path = tmp_path / "batch.txt"
        dump_batch(batch, path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "s0 s1 a0 r c0 c1 done time_limit logp_old"
        assert len(lines) == 11
        first = lines[1].split()
        assert float(first[2]) == batch.actions[0, 0]

    def test_rows_are_transitions(self) -> None:
        """Each row reads back as one transition of the batch."""
        batch = collect(_policy(), _pool(), 10)
        step = batch.transition(9)
        np.testing.assert_array_equal(step.state, batch.states[9])
        assert step.reward == batch.rewards[9]
        assert step.done and step.time_limit
        assert step.log_prob_old == batch.log_probs_old[9]
