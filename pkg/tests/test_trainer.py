"""Tests for the training loop."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np
import pytest

from barrierpo.config import RunConfig
from barrierpo.exceptions import ConfigError
from barrierpo.networks import MultiHeadCostValueNet, SeparateCostValueNets
from barrierpo.trainer import Trainer, critic_columns, symmetry_columns

MakeConfig = Callable[..., RunConfig]


class TestTrainer:
    """Per-iteration update of a small line-world run."""

    def test_same_seed_same_reports(self, tiny_config: RunConfig) -> None:
        """Two trainers with one config produce identical reports."""
        first = Trainer(tiny_config).run()
        second = Trainer(tiny_config).run()
        assert len(first) == len(second) == 3
        for a, b in zip(first, second, strict=True):
            assert a.mean_reward == b.mean_reward
            assert a.kl == b.kl
            assert a.status == b.status
            np.testing.assert_array_equal(a.j_c, b.j_c)
            np.testing.assert_array_equal(a.d_i, b.d_i)

    def test_different_seed_different_rewards(self, make_config: MakeConfig) -> None:
        first = Trainer(make_config(seed=1)).run(1)
        second = Trainer(make_config(seed=2)).run(1)
        assert first[0].mean_reward != second[0].mean_reward

    def test_report_covers_every_constraint(self, tiny_config: RunConfig) -> None:
        """One iteration reports every constraint and all three timings."""
        trainer = Trainer(tiny_config)
        report = trainer.train_iteration()
        assert report.iter == 0
        assert trainer.iteration == 1
        assert report.j_c.shape == (2,)
        assert report.d_i.shape == (2,)
        assert set(report.wall_times) == {"collect", "policy_step", "critic"}
        assert trainer.last_batch is not None
        assert len(trainer.last_batch) == 20

    def test_thresholds_never_below_limits(self, tiny_config: RunConfig) -> None:
        """Adapted thresholds sit above both the limit and the estimate."""
        limits = tiny_config.cmdp.limits()
        for report in Trainer(tiny_config).run():
            assert np.all(report.d_i >= limits)
            assert np.all(report.d_i > report.j_c)

    def test_accepted_steps_respect_trust_region(self, make_config: MakeConfig) -> None:
        """Accepted point-mass steps stay in the KL ball and the barrier domain."""
        config = make_config(env__name="point_mass_2d", iterations=4, batch__steps=20)
        for report in Trainer(config).run():
            if report.accepted:
                assert report.kl <= config.barrier.delta
                assert np.all(report.barrier_margins > 0)

    def test_run_continues_from_current_iteration(self, tiny_config: RunConfig) -> None:
        """run() picks up where the trainer stopped."""
        trainer = Trainer(tiny_config)
        trainer.run(2)
        assert [r.iter for r in trainer.run()] == [2]

    def test_no_constraints_matches_reward_only(self, make_config: MakeConfig) -> None:
        """Disabling every constraint reproduces the plain trust-region update."""
        reward_only = Trainer(make_config(mode="reward_only"))
        disabled = Trainer(
            make_config(constraints__speed__enabled=False, constraints__effort__enabled=False)
        )
        reward_only.run()
        disabled.run()
        np.testing.assert_array_equal(reward_only.policy.flat(), disabled.policy.flat())
        np.testing.assert_array_equal(reward_only.value_net.flat(), disabled.value_net.flat())

    def test_reward_only_enforces_nothing(self, make_config: MakeConfig) -> None:
        """Reward-only runs monitor constraints without enforcing them."""
        trainer = Trainer(make_config(mode="reward_only"))
        assert trainer.enforced_names == ()
        assert trainer.monitored_names == ("speed", "effort")
        report = trainer.train_iteration()
        assert report.barrier_margins.size == 0
        np.testing.assert_allclose(report.d_i, trainer.config.cmdp.limits())

    def test_penalty_mode_reports_raw_reward(self, make_config: MakeConfig) -> None:
        """Penalty terms shape the update, not the reported reward."""
        plain = Trainer(make_config(mode="reward_only")).train_iteration()
        penalized = Trainer(make_config(mode="penalty", penalty__lambdas=[1.0, 1.0])).train_iteration()
        assert penalized.mean_reward == plain.mean_reward

    def test_penalty_lambda_count_is_checked(self, make_config: MakeConfig) -> None:
        with pytest.raises(ConfigError, match="penalty.lambdas has 1 entries for 2"):
            make_config(mode="penalty", penalty__lambdas=[1.0])


class TestCostCriticLayout:
    def test_symmetry_has_no_critic_head(self, make_config: MakeConfig) -> None:
        """Symmetry is enforced without a critic head."""
        config = make_config(env__name="pendulum")
        assert critic_columns(config) == [0, 1]
        assert symmetry_columns(config) == [2]
        trainer = Trainer(config)
        assert trainer.cost_critic is not None
        assert trainer.cost_critic.heads == 2
        assert trainer.enforced_names == ("torque_limit", "angle_deviation", "symmetry")

    def test_multi_head_is_default(self, tiny_config: RunConfig) -> None:
        assert isinstance(Trainer(tiny_config).cost_critic, MultiHeadCostValueNet)

    def test_separate_design(self, make_config: MakeConfig) -> None:
        trainer = Trainer(make_config(network__critic_design="separate"))
        assert isinstance(trainer.cost_critic, SeparateCostValueNets)
        trainer.train_iteration()

    def test_no_critic_without_critic_constraints(self, make_config: MakeConfig) -> None:
        """No critic-backed constraints means no cost critic."""
        trainer = Trainer(
            make_config(constraints__speed__enabled=False, constraints__effort__enabled=False)
        )
        assert trainer.cost_critic is None
        assert trainer.cost_opt is None

    def test_symmetry_run_reports_mismatch(self, make_config: MakeConfig) -> None:
        """The symmetry entry of J_c is a nonnegative mismatch."""
        trainer = Trainer(make_config(env__name="pendulum", batch__steps=16))
        report = trainer.train_iteration()
        assert report.j_c.shape == (3,)
        assert report.j_c[2] >= 0.0
        assert report.barrier_margins.shape == (3,)
