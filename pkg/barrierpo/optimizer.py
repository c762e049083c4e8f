"""Barrier-objective trust-region policy step and adaptive thresholds."""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from barrierpo.cmdp import MirrorSpec
from barrierpo.exceptions import CGBreakdownError, InfeasiblePointError, NumericFailureError, TrainingError
from barrierpo.losses import (
    BarrierEvaluation,
    LossId,
    LossInputs,
    evaluate_barrier,
    fisher_vector_product,
    grad,
    kl_mean,
    log_prob,
    loss_value,
    symmetry_mismatch,
)
from barrierpo.networks import GaussianPolicy, policy_forward
from barrierpo.rollout import AdvantageSet, TrajectoryBatch

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

_CG_RESIDUAL_TOL = 1e-10
_KL_SLACK = 1e-6


def _validate_positive(name: str, value: float) -> None:
    if isinstance(value, bool) or not isinstance(value, int | float):
        raise TypeError(f"BarrierConfig.{name} must be a number.")
    if not value > 0:
        raise ValueError(f"BarrierConfig.{name} must be positive.")


def _validate_count(name: str, value: int, *, minimum: int) -> None:
    if isinstance(value, bool) or not isinstance(value, int):
        raise TypeError(f"BarrierConfig.{name} must be an integer.")
    if value < minimum:
        raise ValueError(f"BarrierConfig.{name} must be at least {minimum}.")


@dataclass(frozen=True)
class BarrierConfig:
    """Optimizer hyperparameters."""

    t: float = 100.0
    alpha: float = 0.02
    delta: float = 0.01
    cg_iters: int = 10
    damping: float = 0.01
    backtrack_coeff: float = 0.8
    max_backtracks: int = 10
    entropy_coef: float = 0.05
    value_epochs: int = 20
    value_lr: float = 3e-4
    grad_clip: float = 1.0
    epsilon_min: float = 1e-4
    value_minibatches: int = 4

    def __post_init__(self) -> None:
        for name in ("t", "alpha", "delta", "value_lr", "grad_clip", "epsilon_min"):
            _validate_positive(name, getattr(self, name))
        if isinstance(self.damping, bool) or not isinstance(self.damping, int | float):
            raise TypeError("BarrierConfig.damping must be a number.")
        if self.damping < 0:
            raise ValueError("BarrierConfig.damping must be zero or positive.")
        if isinstance(self.entropy_coef, bool) or not isinstance(self.entropy_coef, int | float):
            raise TypeError("BarrierConfig.entropy_coef must be a number.")
        if not 0.0 < self.backtrack_coeff < 1.0:
            raise ValueError("BarrierConfig.backtrack_coeff must lie strictly between 0 and 1.")
        _validate_count("cg_iters", self.cg_iters, minimum=1)
        _validate_count("max_backtracks", self.max_backtracks, minimum=0)
        _validate_count("value_epochs", self.value_epochs, minimum=0)
        _validate_count("value_minibatches", self.value_minibatches, minimum=1)


@dataclass(frozen=True, eq=False)
class BarrierProblem:
    """Constraint side of a policy step.

    ``thresholds`` holds the adapted limits of the critic-backed constraints
    (one per column of ``AdvantageSet.adv_c``); ``symmetry_thresholds`` the
    adapted limits of the symmetry constraints.
    """

    objective: LossId
    gamma: float
    thresholds: FloatArray = field(default_factory=lambda: np.zeros(0))
    symmetry_thresholds: FloatArray = field(default_factory=lambda: np.zeros(0))
    mirror: MirrorSpec | None = None

    def __post_init__(self) -> None:
        if self.objective not in (LossId.REWARD_SURROGATE, LossId.BARRIER_OBJECTIVE):
            raise ValueError("A policy step optimizes reward_surrogate or barrier_objective.")
        if self.objective is LossId.REWARD_SURROGATE and self.num_enforced:
            raise ValueError("The reward surrogate enforces no constraints.")
        if self.symmetry_thresholds.size and self.mirror is None:
            raise ValueError("Symmetry constraints need a mirror; disable them for this env.")

    @classmethod
    def reward_only(cls, gamma: float) -> BarrierProblem:
        return cls(LossId.REWARD_SURROGATE, gamma)

    @classmethod
    def constrained(
        cls,
        gamma: float,
        thresholds: FloatArray,
        symmetry_thresholds: FloatArray | None = None,
        mirror: MirrorSpec | None = None,
    ) -> BarrierProblem:
        return cls(
            LossId.BARRIER_OBJECTIVE,
            gamma,
            np.asarray(thresholds, dtype=np.float64),
            np.zeros(0) if symmetry_thresholds is None else np.asarray(symmetry_thresholds, dtype=np.float64),
            mirror,
        )

    @property
    def num_enforced(self) -> int:
        return int(self.thresholds.size + self.symmetry_thresholds.size)


@dataclass(frozen=True, eq=False)
class IterationReport:
    """Per-iteration record.

    ``j_c`` and ``d_i`` follow the monitored constraints; ``barrier_margins``
    and ``origin_margins`` follow the enforced ones (critic-backed first,
    then symmetry), at the returned policy and at the data-collecting policy.
    """

    iter: int
    mean_reward: float
    j_c: FloatArray
    d_i: FloatArray
    kl: float
    objective_before: float
    objective_after: float
    accepted: bool
    backtracks: int
    barrier_margins: FloatArray
    origin_margins: FloatArray
    status: str = "accepted"
    value_loss: float = 0.0
    cost_value_loss: float = 0.0
    wall_times: Mapping[str, float] = field(default_factory=dict)

    def check(self, delta: float) -> None:
        """Raise ``TrainingError`` when an accepted step breaks the trust region or a barrier."""
        if not self.accepted:
            return
        if self.kl > delta * (1.0 + _KL_SLACK):
            raise TrainingError(f"Accepted step has kl={self.kl!r} above delta={delta!r}.")
        if np.any(self.barrier_margins <= 0):
            raise TrainingError("Accepted step has a nonpositive barrier margin.")


def adaptive_thresholds(
    j_c: FloatArray,
    d: FloatArray,
    alpha: float,
    epsilon_min: float,
) -> FloatArray:
    """Enlarge limits the current policy violates so the barrier stays defined.

    ``max(d, j + alpha * d)``, then at least ``j + epsilon_min``.
    """
    j_c = np.asarray(j_c, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if j_c.shape != d.shape:
        raise ValueError("j_c and d must have the same length.")
    d_i = np.maximum(d, j_c + alpha * d)
    return np.maximum(d_i, j_c + epsilon_min)


def _loss_inputs(
    batch: TrajectoryBatch,
    adv_set: AdvantageSet,
    policy_old: GaussianPolicy,
    *,
    entropy_coef: float,
    problem: BarrierProblem,
    t: float,
) -> LossInputs:
    old_means, old_std = policy_forward(policy_old, batch.states)
    enforced = problem.objective is LossId.BARRIER_OBJECTIVE
    return LossInputs(
        states=batch.states,
        actions=batch.actions,
        log_probs_old=batch.log_probs_old,
        adv_r=adv_set.adv_r,
        entropy_coef=entropy_coef,
        adv_c=adv_set.adv_c if enforced else None,
        j_c=adv_set.j_c if enforced else None,
        thresholds=problem.thresholds if enforced else None,
        gamma=problem.gamma,
        t=t,
        mirror=problem.mirror,
        symmetry_thresholds=problem.symmetry_thresholds if enforced else None,
        old_means=old_means,
        old_std=old_std,
    )


def reward_surrogate(
    batch: TrajectoryBatch,
    adv_set: AdvantageSet,
    policy_new: GaussianPolicy,
    entropy_coef: float = 0.0,
) -> float:
    """Mean importance-weighted reward advantage plus the entropy bonus."""
    inputs = LossInputs(
        states=batch.states,
        actions=batch.actions,
        log_probs_old=batch.log_probs_old,
        adv_r=adv_set.adv_r,
        entropy_coef=entropy_coef,
    )
    return loss_value(LossId.REWARD_SURROGATE, policy_new, inputs)


def cost_surrogate(
    batch: TrajectoryBatch,
    adv_set: AdvantageSet,
    policy_new: GaussianPolicy,
    k: int,
    gamma: float,
) -> float:
    """First-order estimate of J_C for critic-backed constraint ``k`` under ``policy_new``."""
    if not 0 <= k < adv_set.adv_c.shape[1]:
        raise ValueError(f"Constraint {k} has no cost critic column.")
    means, std = policy_forward(policy_new, batch.states)
    ratio = np.exp(log_prob(means, std, batch.actions) - batch.log_probs_old)
    return float(adv_set.j_c[k] + np.mean(ratio * adv_set.adv_c[:, k]) / (1.0 - gamma))


def barrier_term(d_ik: float, surrogate: float, t: float) -> float:
    if not t > 0:
        raise ValueError("Barrier steepness t must be positive.")
    margin = d_ik - surrogate
    if not margin > 0:
        raise InfeasiblePointError(margin)
    return math.log(margin) / t


def symmetry_value(
    batch: TrajectoryBatch,
    policy_new: GaussianPolicy,
    mirror: MirrorSpec | None,
) -> float:
    if mirror is None:
        raise ValueError(
            "Symmetry value needs a mirror; disable symmetry constraints for this env."
        )
    return symmetry_mismatch(policy_new, batch.states, mirror)


def conjugate_gradient(
    matvec: Callable[[FloatArray], FloatArray],
    b: FloatArray,
    iters: int,
    *,
    residual_tol: float = _CG_RESIDUAL_TOL,
) -> FloatArray:
    """Approximately solve ``A x = b`` for symmetric positive definite ``A``."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    for i in range(iters):
        if rr < residual_tol:
            break
        ap = matvec(p)
        curvature = float(p @ ap)
        if not curvature > 0:
            raise CGBreakdownError(i, curvature)
        step = rr / curvature
        x = x + step * p
        r = r - step * ap
        rr_next = float(r @ r)
        p = r + (rr_next / rr) * p
        rr = rr_next
    logger.debug("Conjugate gradient residual %.3e after %d iterations.", rr, iters)
    return x


def _evaluate(policy: GaussianPolicy, inputs: LossInputs, objective: LossId) -> BarrierEvaluation:
    if objective is LossId.BARRIER_OBJECTIVE:
        return evaluate_barrier(policy, inputs)
    value = loss_value(LossId.REWARD_SURROGATE, policy, inputs)
    return BarrierEvaluation(value, value, np.zeros(0), None, np.zeros(0))


def policy_step(
    batch: TrajectoryBatch,
    adv_set: AdvantageSet,
    policy: GaussianPolicy,
    config: BarrierConfig,
    problem: BarrierProblem,
    *,
    iteration: int = 0,
) -> tuple[GaussianPolicy, IterationReport]:
    """One natural-gradient step on the objective, with a feasibility-checking line search.

    A candidate is accepted when it strictly improves the objective, stays
    within the KL trust region, and keeps every barrier argument positive.
    Otherwise the data-collecting policy is returned unchanged.
    """
    started = time.perf_counter()
    if problem.objective is LossId.BARRIER_OBJECTIVE and adv_set.adv_c.shape[1] != problem.thresholds.size:
        raise ValueError(
            f"{problem.thresholds.size} thresholds given for {adv_set.adv_c.shape[1]} cost advantage columns."
        )
    inputs = _loss_inputs(
        batch, adv_set, policy, entropy_coef=config.entropy_coef, problem=problem, t=config.t
    )
    old = (inputs.old_means, inputs.old_std)
    mean_reward = float(np.mean(batch.rewards))

    def report(
        result: GaussianPolicy,
        *,
        status: str,
        before: BarrierEvaluation | None,
        after: BarrierEvaluation | None = None,
        kl: float = 0.0,
        backtracks: int = 0,
    ) -> tuple[GaussianPolicy, IterationReport]:
        before_value = math.nan if before is None else before.value
        origin = np.zeros(0) if before is None else before.margins
        accepted = after is not None
        final = after if after is not None else before
        return result, IterationReport(
            iter=iteration,
            mean_reward=mean_reward,
            j_c=np.concatenate([adv_set.j_c, _symmetry_j(before, problem.symmetry_thresholds.size)]),
            d_i=np.concatenate([problem.thresholds, problem.symmetry_thresholds]),
            kl=kl,
            objective_before=before_value,
            objective_after=before_value if final is None else final.value,
            accepted=accepted,
            backtracks=backtracks,
            barrier_margins=origin if final is None else final.margins,
            origin_margins=origin,
            status=status,
            wall_times={"policy_step": time.perf_counter() - started},
        )

    try:
        before = _evaluate(policy, inputs, problem.objective)
    except InfeasiblePointError as exc:
        logger.warning("Step rejected at iteration %d: data-collecting policy is infeasible (%s).", iteration, exc)
        return report(policy, status="infeasible_origin", before=None)

    gradient = grad(problem.objective, policy, inputs)
    if not np.any(gradient):
        logger.warning("Step rejected at iteration %d: zero objective gradient.", iteration)
        return report(policy, status="zero_gradient", before=before)

    def fvp(v: FloatArray) -> FloatArray:
        return fisher_vector_product(policy, batch.states, v, config.damping)

    try:
        direction = conjugate_gradient(fvp, gradient, config.cg_iters)
    except CGBreakdownError as exc:
        logger.warning("Step rejected at iteration %d: %s", iteration, exc)
        return report(policy, status="cg_breakdown", before=before)

    curvature = float(direction @ fvp(direction))
    if not curvature > 0:
        logger.warning("Step rejected at iteration %d: nonpositive step curvature.", iteration)
        return report(policy, status="cg_breakdown", before=before)
    full_step = math.sqrt(2.0 * config.delta / curvature)

    theta_old = policy.flat()
    for j in range(config.max_backtracks + 1):
        scale = full_step * config.backtrack_coeff**j
        candidate = policy.with_flat(theta_old + scale * direction)
        try:
            after = _evaluate(candidate, inputs, problem.objective)
            means, std = policy_forward(candidate, batch.states)
        except (InfeasiblePointError, NumericFailureError) as exc:
            logger.debug("Backtrack %d rejected: %s", j, exc)
            continue
        kl = kl_mean(old, (means, std))  # type: ignore[arg-type]
        if after.value > before.value and kl <= config.delta:
            logger.debug("Backtrack %d accepted: objective %.6g -> %.6g, kl %.3e.", j, before.value, after.value, kl)
            return report(candidate, status="accepted", before=before, after=after, kl=kl, backtracks=j)
        logger.debug("Backtrack %d rejected: objective %.6g, kl %.3e.", j, after.value, kl)

    logger.warning("Step rejected at iteration %d: line search exhausted.", iteration)
    return report(policy, status="line_search_exhausted", before=before, backtracks=config.max_backtracks)


def _symmetry_j(evaluation: BarrierEvaluation | None, count: int) -> FloatArray:
    if evaluation is None or evaluation.symmetry is None:
        return np.full(count, math.nan)
    return np.full(count, evaluation.symmetry)


__all__ = [
    "BarrierConfig",
    "BarrierProblem",
    "IterationReport",
    "MirrorSpec",
    "adaptive_thresholds",
    "barrier_term",
    "conjugate_gradient",
    "cost_surrogate",
    "policy_step",
    "reward_surrogate",
    "symmetry_value",
]
