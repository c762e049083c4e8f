"""Scalar losses over the networks and their exact analytic gradients.

All gradients are returned as FlatParams in the owning network's canonical
order, so they can be checked coordinate by coordinate against central
finite differences of :func:`loss_value`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import NDArray

from barrierpo.cmdp import MirrorSpec
from barrierpo.exceptions import InfeasiblePointError
from barrierpo.networks import (
    GaussianPolicy,
    MultiHeadCostValueNet,
    Network,
    SeparateCostValueNets,
    ValueNet,
)

FloatArray = NDArray[np.float64]

_LOG_2PI = math.log(2.0 * math.pi)


class LossId(str, Enum):
    REWARD_SURROGATE = "reward_surrogate"
    BARRIER_OBJECTIVE = "barrier_objective"
    KL = "kl"
    VALUE_MSE = "value_mse"
    COST_VALUE_MSE = "cost_value_mse"
    SYMMETRY_LOSS = "symmetry_loss"


@dataclass(frozen=True, eq=False)
class LossInputs:
    """Everything a loss may read; each loss uses only the fields it needs.

    ``adv_c``, ``j_c`` and ``thresholds`` describe the critic-backed
    constraints (one column/entry each); ``symmetry_thresholds`` holds one
    adapted threshold per symmetry constraint.
    """

    states: FloatArray
    actions: FloatArray | None = None
    log_probs_old: FloatArray | None = None
    adv_r: FloatArray | None = None
    entropy_coef: float = 0.0
    adv_c: FloatArray | None = None
    j_c: FloatArray | None = None
    thresholds: FloatArray | None = None
    gamma: float | None = None
    t: float | None = None
    mirror: MirrorSpec | None = None
    symmetry_thresholds: FloatArray | None = None
    old_means: FloatArray | None = None
    old_std: FloatArray | None = None
    targets: FloatArray | None = None

    def require(self, name: str, loss_id: LossId) -> FloatArray:
        value = getattr(self, name)
        if value is None:
            raise ValueError(f"Loss {loss_id.value!r} requires {name!r}.")
        return np.asarray(value, dtype=np.float64)

    @property
    def num_cost_constraints(self) -> int:
        return 0 if self.adv_c is None else int(np.shape(self.adv_c)[1])

    @property
    def num_symmetry_constraints(self) -> int:
        return 0 if self.symmetry_thresholds is None else int(np.size(self.symmetry_thresholds))


def log_prob(means: FloatArray, std: FloatArray, actions: FloatArray) -> FloatArray:
    """Per-sample log density of a diagonal Gaussian."""
    z = (actions - means) / std
    return np.asarray(
        -0.5 * np.sum(z**2, axis=-1) - np.sum(np.log(std)) - 0.5 * means.shape[-1] * _LOG_2PI,
        dtype=np.float64,
    )


def kl_mean(
    old: tuple[FloatArray, FloatArray],
    new: tuple[FloatArray, FloatArray],
) -> float:
    """Batch mean of KL(old || new) between diagonal Gaussians."""
    old_means, old_std = old
    new_means, new_std = new
    per_dim = (
        np.log(new_std)
        - np.log(old_std)
        + (old_std**2 + (old_means - new_means) ** 2) / (2.0 * new_std**2)
        - 0.5
    )
    per_dim = np.broadcast_to(per_dim, np.broadcast_shapes(np.shape(per_dim), np.shape(old_means)))
    return float(np.mean(np.sum(per_dim, axis=-1)))


def entropy_mean(std: FloatArray) -> float:
    """Entropy of a diagonal Gaussian, 0.5 * sum(log(2 pi e sigma^2))."""
    std = np.asarray(std, dtype=np.float64)
    if np.any(std <= 0):
        raise ValueError("std must be positive.")
    return float(0.5 * np.sum(np.log(2.0 * math.pi * math.e * std**2)))


@dataclass(frozen=True, eq=False)
class _PolicyPass:
    means: FloatArray
    std: FloatArray
    ratio: FloatArray
    cache: object


def _policy_pass(policy: GaussianPolicy, inputs: LossInputs, loss_id: LossId) -> _PolicyPass:
    actions = inputs.require("actions", loss_id)
    log_probs_old = inputs.require("log_probs_old", loss_id)
    means, cache = policy.mean_net.forward(inputs.states)
    std = policy.std
    ratio = np.exp(log_prob(means, std, actions) - log_probs_old)
    return _PolicyPass(means, std, ratio, cache)


def _surrogate_value(ratio: FloatArray, weights: FloatArray) -> float:
    return float(np.mean(ratio * weights))


def _surrogate_grad(
    policy: GaussianPolicy,
    inputs: LossInputs,
    forward: _PolicyPass,
    weights: FloatArray,
    entropy_coef: float,
) -> FloatArray:
    actions = np.asarray(inputs.actions, dtype=np.float64)
    n = actions.shape[0]
    coef = (forward.ratio * weights)[:, None] / n
    diff = actions - forward.means
    var = forward.std**2
    grad_mean = policy.mean_net.backward(forward.cache, coef * diff / var)  # type: ignore[arg-type]
    grad_log_std = np.sum(coef * (diff**2 / var - 1.0), axis=0) + entropy_coef
    return np.concatenate([grad_mean, grad_log_std])


def symmetry_mismatch(policy: GaussianPolicy, states: FloatArray, mirror: MirrorSpec) -> float:
    """Mean L1 distance between mu(s) and Psi_a(mu(Psi_s(s)))."""
    means = policy.mean_net(states)
    mirrored = mirror.mirror_actions(policy.mean_net(mirror.mirror_states(states)))
    return float(np.mean(np.sum(np.abs(means - mirrored), axis=1)))


def _symmetry_grad(policy: GaussianPolicy, states: FloatArray, mirror: MirrorSpec) -> FloatArray:
    means, cache = policy.mean_net.forward(states)
    reflected, reflected_cache = policy.mean_net.forward(mirror.mirror_states(states))
    diff = means - mirror.mirror_actions(reflected)
    signs = np.sign(diff) / states.shape[0]
    grad = policy.mean_net.backward(cache, signs)
    grad = grad + policy.mean_net.backward(reflected_cache, -(signs @ mirror.action_map))
    return np.concatenate([grad, np.zeros(policy.act_dim)])


@dataclass(frozen=True, eq=False)
class BarrierEvaluation:
    """Terms of the barrier objective at one policy.

    ``margins`` lists the critic-backed constraints first, then the
    symmetry constraints.
    """

    value: float
    reward_term: float
    cost_surrogates: FloatArray
    symmetry: float | None
    margins: FloatArray


def evaluate_barrier(policy: GaussianPolicy, inputs: LossInputs) -> BarrierEvaluation:
    """Value of reward surrogate plus every log barrier term.

    Raises :class:`InfeasiblePointError` when any barrier argument is not
    strictly positive.
    """
    loss_id = LossId.BARRIER_OBJECTIVE
    forward = _policy_pass(policy, inputs, loss_id)
    adv_r = inputs.require("adv_r", loss_id)
    reward_term = _surrogate_value(forward.ratio, adv_r) + inputs.entropy_coef * entropy_mean(
        forward.std
    )
    value = reward_term
    margins: list[float] = []
    cost_surrogates = np.zeros(inputs.num_cost_constraints)
    if inputs.num_cost_constraints:
        adv_c = inputs.require("adv_c", loss_id)
        j_c = inputs.require("j_c", loss_id)
        thresholds = inputs.require("thresholds", loss_id)
        t = _require_t(inputs, loss_id)
        scale = 1.0 / (1.0 - _require_gamma(inputs, loss_id))
        for k in range(adv_c.shape[1]):
            cost_surrogates[k] = j_c[k] + scale * _surrogate_value(forward.ratio, adv_c[:, k])
            margin = float(thresholds[k] - cost_surrogates[k])
            if not margin > 0:
                raise InfeasiblePointError(margin, k)
            margins.append(margin)
            value += math.log(margin) / t
    symmetry: float | None = None
    if inputs.num_symmetry_constraints:
        mirror = _require_mirror(inputs, loss_id)
        t = _require_t(inputs, loss_id)
        symmetry = symmetry_mismatch(policy, inputs.states, mirror)
        for offset, threshold in enumerate(inputs.require("symmetry_thresholds", loss_id)):
            margin = float(threshold - symmetry)
            if not margin > 0:
                raise InfeasiblePointError(margin, inputs.num_cost_constraints + offset)
            margins.append(margin)
            value += math.log(margin) / t
    return BarrierEvaluation(value, reward_term, cost_surrogates, symmetry, np.array(margins))


def _barrier_grad(policy: GaussianPolicy, inputs: LossInputs) -> FloatArray:
    loss_id = LossId.BARRIER_OBJECTIVE
    evaluation = evaluate_barrier(policy, inputs)
    forward = _policy_pass(policy, inputs, loss_id)
    weights = inputs.require("adv_r", loss_id)
    n_cost = inputs.num_cost_constraints
    if n_cost:
        adv_c = inputs.require("adv_c", loss_id)
        t = _require_t(inputs, loss_id)
        scale = 1.0 / (1.0 - _require_gamma(inputs, loss_id))
        for k in range(n_cost):
            weights = weights - (scale / (t * evaluation.margins[k])) * adv_c[:, k]
    grad = _surrogate_grad(policy, inputs, forward, weights, inputs.entropy_coef)
    if inputs.num_symmetry_constraints:
        t = _require_t(inputs, loss_id)
        pull = float(np.sum(1.0 / (t * evaluation.margins[n_cost:])))
        grad = grad - pull * _symmetry_grad(policy, inputs.states, _require_mirror(inputs, loss_id))
    return grad


def _require_t(inputs: LossInputs, loss_id: LossId) -> float:
    if inputs.t is None or not inputs.t > 0:
        raise ValueError(f"Loss {loss_id.value!r} requires a positive barrier steepness 't'.")
    return float(inputs.t)


def _require_gamma(inputs: LossInputs, loss_id: LossId) -> float:
    if inputs.gamma is None:
        raise ValueError(f"Loss {loss_id.value!r} requires 'gamma'.")
    return float(inputs.gamma)


def _require_mirror(inputs: LossInputs, loss_id: LossId) -> MirrorSpec:
    if inputs.mirror is None:
        raise ValueError(
            f"Loss {loss_id.value!r} requires a mirror; disable symmetry constraints "
            "for environments without one."
        )
    return inputs.mirror


def _old_distribution(inputs: LossInputs, loss_id: LossId) -> tuple[FloatArray, FloatArray]:
    return inputs.require("old_means", loss_id), inputs.require("old_std", loss_id)


def _critic_pass(network: Network, inputs: LossInputs, loss_id: LossId) -> tuple[FloatArray, FloatArray]:
    targets = inputs.require("targets", loss_id)
    if loss_id is LossId.VALUE_MSE:
        if not isinstance(network, ValueNet):
            raise TypeError("value_mse applies to a ValueNet.")
        predictions = network.predict(inputs.states)
    else:
        if not isinstance(network, MultiHeadCostValueNet | SeparateCostValueNets):
            raise TypeError("cost_value_mse applies to a cost critic.")
        predictions = network.predict(inputs.states)
    if predictions.shape != targets.shape:
        raise ValueError(
            f"Targets of shape {targets.shape} do not match predictions of shape {predictions.shape}."
        )
    return predictions, targets


def _as_policy(network: Network, loss_id: LossId) -> GaussianPolicy:
    if not isinstance(network, GaussianPolicy):
        raise TypeError(f"Loss {loss_id.value!r} applies to a GaussianPolicy.")
    return network


def loss_value(loss_id: LossId | str, network: Network, inputs: LossInputs) -> float:
    """Scalar value of the named loss."""
    loss_id = LossId(loss_id)
    if loss_id is LossId.REWARD_SURROGATE:
        policy = _as_policy(network, loss_id)
        forward = _policy_pass(policy, inputs, loss_id)
        return _surrogate_value(
            forward.ratio, inputs.require("adv_r", loss_id)
        ) + inputs.entropy_coef * entropy_mean(forward.std)
    if loss_id is LossId.BARRIER_OBJECTIVE:
        return evaluate_barrier(_as_policy(network, loss_id), inputs).value
    if loss_id is LossId.KL:
        policy = _as_policy(network, loss_id)
        means = policy.mean_net(inputs.states)
        return kl_mean(_old_distribution(inputs, loss_id), (means, policy.std))
    if loss_id is LossId.SYMMETRY_LOSS:
        policy = _as_policy(network, loss_id)
        return symmetry_mismatch(policy, inputs.states, _require_mirror(inputs, loss_id))
    predictions, targets = _critic_pass(network, inputs, loss_id)
    return float(np.mean((predictions - targets) ** 2))


def grad(loss_id: LossId | str, network: Network, inputs: LossInputs) -> FloatArray:
    """Exact gradient of the named loss w.r.t. the network's FlatParams."""
    try:
        loss_id = LossId(loss_id)
    except ValueError:
        raise ValueError(f"Unknown loss id {loss_id!r}.") from None

    if loss_id is LossId.REWARD_SURROGATE:
        policy = _as_policy(network, loss_id)
        forward = _policy_pass(policy, inputs, loss_id)
        return _surrogate_grad(
            policy, inputs, forward, inputs.require("adv_r", loss_id), inputs.entropy_coef
        )
    if loss_id is LossId.BARRIER_OBJECTIVE:
        return _barrier_grad(_as_policy(network, loss_id), inputs)
    if loss_id is LossId.KL:
        policy = _as_policy(network, loss_id)
        old_means, old_std = _old_distribution(inputs, loss_id)
        means, cache = policy.mean_net.forward(inputs.states)
        std = policy.std
        n = means.shape[0]
        grad_mean = policy.mean_net.backward(cache, (means - old_means) / (std**2 * n))
        grad_log_std = np.sum(1.0 - (old_std**2 + (old_means - means) ** 2) / std**2, axis=0) / n
        return np.concatenate([grad_mean, grad_log_std])
    if loss_id is LossId.SYMMETRY_LOSS:
        policy = _as_policy(network, loss_id)
        return _symmetry_grad(policy, inputs.states, _require_mirror(inputs, loss_id))

    predictions, targets = _critic_pass(network, inputs, loss_id)
    residual = 2.0 * (predictions - targets) / predictions.size
    if isinstance(network, ValueNet):
        _, cache = network.mlp.forward(inputs.states)
        return network.mlp.backward(cache, residual[:, None])
    return network.output_grad(inputs.states, residual)  # type: ignore[union-attr]


def fisher_vector_product(
    policy: GaussianPolicy,
    states: FloatArray,
    v: FloatArray,
    damping: float,
) -> FloatArray:
    """(H + damping * I) v, H the Hessian of kl_mean(old, new) at new = old.

    For a diagonal Gaussian the Hessian is exactly J^T diag(1/sigma^2) J / N
    on the mean-network block (J the Jacobian of the means) and 2 * I on the
    log-std block, with no cross terms.
    """
    if damping < 0:
        raise ValueError("damping must be zero or positive.")
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (policy.num_params,):
        raise ValueError(f"Expected a vector of length {policy.num_params}, got shape {v.shape}.")
    v_mean, v_log_std = policy.split(v)
    _, jv = policy.mean_net.jvp(states, v_mean)
    _, cache = policy.mean_net.forward(states)
    product_mean = policy.mean_net.backward(cache, jv / (policy.std**2 * states.shape[0]))
    product = np.concatenate([product_mean, 2.0 * v_log_std])
    return product + damping * v


def clip_by_global_norm(gradient: FloatArray, max_norm: float) -> FloatArray:
    norm = float(np.linalg.norm(gradient))
    if norm <= max_norm or norm == 0.0:
        return gradient
    return gradient * (max_norm / norm)


__all__ = [
    "BarrierEvaluation",
    "LossId",
    "LossInputs",
    "clip_by_global_norm",
    "entropy_mean",
    "evaluate_barrier",
    "fisher_vector_product",
    "grad",
    "kl_mean",
    "log_prob",
    "loss_value",
    "symmetry_mismatch",
]
