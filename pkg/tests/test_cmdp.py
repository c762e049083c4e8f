"""Unit tests for the constrained MDP data model."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from barrierpo.cmdp import (
    CmdpSpec,
    ConstraintKind,
    ConstraintSpec,
    MirrorSpec,
    Transition,
    discounted_limit,
    indicator_cost,
    renumber,
    validate_gamma,
    validate_spec,
)
from barrierpo.envs import default_spec
from barrierpo.exceptions import InvalidDiscountError


def _spec(*constraints: ConstraintSpec, gamma: float = 0.99) -> CmdpSpec:
    return CmdpSpec(gamma, constraints, "line_world", 10, 0.1, 1.0)


class TestDiscountedLimit:
    """Per-step limits converted to the discounted scale."""

    @pytest.mark.parametrize(
        ("limit", "gamma", "expected"),
        [(0.025, 0.99, 2.5), (0.0, 0.99, 0.0), (0.25, 0.99, 25.0)],
    )
    def test_known_values(self, limit: float, gamma: float, expected: float) -> None:
        """D / (1 - gamma) for the documented examples."""
        assert discounted_limit(limit, gamma) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("gamma", [0.0, 1.0, -0.5, 1.5])
    def test_rejects_gamma_outside_open_interval(self, gamma: float) -> None:
        """gamma must lie strictly between 0 and 1."""
        with pytest.raises(InvalidDiscountError, match="strictly between 0 and 1"):
            discounted_limit(0.1, gamma)

    def test_rejects_non_finite_limit(self) -> None:
        """An infinite limit has no discounted value."""
        with pytest.raises(ValueError, match="finite"):
            discounted_limit(float("inf"), 0.99)

    def test_validate_gamma_rejects_bool(self) -> None:
        """Booleans are not accepted as a discount."""
        with pytest.raises(TypeError, match="number"):
            validate_gamma(True)


class TestIndicatorCost:
    """Violation fraction of a group."""

    @pytest.mark.parametrize(
        ("violated", "group", "expected"), [(0, 12, 0.0), (3, 12, 0.25), (1, 1, 1.0)]
    )
    def test_known_values(self, violated: int, group: int, expected: float) -> None:
        """Violations over group size."""
        assert indicator_cost(violated, group) == expected

    def test_values_lie_on_lattice(self) -> None:
        """Every result is a multiple of 1/n in [0, 1]."""
        values = [indicator_cost(v, 4) for v in range(5)]
        assert values == [0.0, 0.25, 0.5, 0.75, 1.0]

    @pytest.mark.parametrize(("violated", "group"), [(-1, 2), (3, 2)])
    def test_rejects_out_of_range_counts(self, violated: int, group: int) -> None:
        """More violations than members, or fewer than zero, is an error."""
        with pytest.raises(ValueError, match="between 0 and group_size"):
            indicator_cost(violated, group)

    def test_rejects_empty_group(self) -> None:
        with pytest.raises(ValueError, match="group_size"):
            indicator_cost(0, 0)


class TestValidateSpec:
    """Invariant report of a CmdpSpec."""

    def test_default_specs_are_well_formed(self) -> None:
        """Every bundled environment passes validation."""
        for name in ("point_mass_2d", "pendulum", "line_world"):
            assert validate_spec(default_spec(name)) == []

    def test_probabilistic_limit_above_one_is_named(self) -> None:
        """A probability limit above 1 names the offending constraint."""
        spec = _spec(ConstraintSpec(0, "box", ConstraintKind.PROBABILISTIC, 1.5))
        problems = validate_spec(spec)
        assert len(problems) == 1
        assert "'box'" in problems[0]

    def test_gamma_one_is_reported(self) -> None:
        spec = _spec(ConstraintSpec(0, "box", ConstraintKind.AVERAGE, 0.5), gamma=1.0)
        assert any("gamma" in problem for problem in validate_spec(spec))

    def test_episode_length_mismatch_is_reported(self) -> None:
        """Steps times dt must equal the episode length."""
        spec = replace(_spec(), episode_length=2.0)
        assert any("episode_length" in problem for problem in validate_spec(spec))

    def test_non_contiguous_ids_are_reported(self) -> None:
        """Enabled ids must run 0..K-1 without gaps."""
        spec = _spec(
            ConstraintSpec(0, "a", ConstraintKind.AVERAGE, 0.5),
            ConstraintSpec(2, "b", ConstraintKind.AVERAGE, 0.5),
        )
        assert any("contiguous" in problem for problem in validate_spec(spec))

    def test_duplicate_names_are_reported(self) -> None:
        spec = _spec(
            ConstraintSpec(0, "a", ConstraintKind.AVERAGE, 0.5),
            ConstraintSpec(1, "a", ConstraintKind.AVERAGE, 0.5),
        )
        assert any("more than once" in problem for problem in validate_spec(spec))


class TestCmdpSpec:
    """Enabled views, limits and overrides."""

    def test_limits_discount_all_but_symmetry(self) -> None:
        """Symmetry limits stay in their own units."""
        spec = default_spec("pendulum")
        np.testing.assert_allclose(spec.limits(), [2.5, 50.0, 0.1])

    def test_disabling_renumbers_ids(self) -> None:
        """Ids close up after a constraint is switched off."""
        spec = default_spec("point_mass_2d").with_overrides(enabled={"position_box": False})
        assert spec.names == ("actuation", "speed_overshoot", "effort", "symmetry")
        assert [c.id for c in spec.enabled] == [0, 1, 2, 3]
        assert validate_spec(spec) == []

    def test_critic_constraints_exclude_symmetry(self) -> None:
        spec = default_spec("pendulum")
        assert [c.name for c in spec.critic_constraints] == ["torque_limit", "angle_deviation"]

    def test_disable_all_leaves_no_constraints(self) -> None:
        """With every constraint off, K is zero."""
        assert default_spec("point_mass_2d").disable_all().num_constraints == 0

    def test_unknown_override_name_is_rejected(self) -> None:
        with pytest.raises(ValueError, match="Unknown constraint names: nope"):
            default_spec("line_world").with_overrides(limits={"nope": 1.0})

    def test_renumber_puts_disabled_last(self) -> None:
        """Disabled constraints get ids after all enabled ones."""
        constraints = renumber(
            [
                ConstraintSpec(0, "a", ConstraintKind.AVERAGE, 0.5, enabled=False),
                ConstraintSpec(1, "b", ConstraintKind.AVERAGE, 0.5),
            ]
        )
        assert [(c.name, c.id) for c in constraints] == [("a", 1), ("b", 0)]


class TestMirrorSpec:
    """Linear involutions on states and actions."""

    def test_double_mirror_is_identity(self, rng: np.random.Generator) -> None:
        """Mirroring twice returns the original states."""
        mirror = MirrorSpec.from_signs([1, -1, 1, -1, 1, -1], [1, -1])
        states = rng.standard_normal((5, 6))
        np.testing.assert_array_equal(mirror.mirror_states(mirror.mirror_states(states)), states)

    def test_y_free_state_is_fixed_point(self) -> None:
        """States with no lateral component are their own mirror image."""
        mirror = MirrorSpec.from_signs([1, -1, 1, -1, 1, -1], [1, -1])
        state = np.array([[0.3, 0.0, -1.0, 0.0, 0.5, 0.0]])
        np.testing.assert_array_equal(mirror.mirror_states(state), state)

    def test_action_map(self) -> None:
        """The lateral action component changes sign."""
        mirror = MirrorSpec.from_signs([1, -1, 1, -1, 1, -1], [1, -1])
        np.testing.assert_array_equal(mirror.mirror_actions(np.array([[1.0, -2.0]])), [[1.0, 2.0]])

    def test_non_involution_is_rejected(self) -> None:
        """Maps that do not square to the identity are refused."""
        with pytest.raises(ValueError, match="involution"):
            MirrorSpec(np.diag([2.0, 1.0]), np.eye(1))


class TestTransition:
    def test_time_limit_requires_done(self) -> None:
        """A time-limit transition must also end the episode."""
        with pytest.raises(ValueError, match="must also be done"):
            Transition(np.zeros(2), np.zeros(1), 0.0, np.zeros(0), False, True, 0.0)
