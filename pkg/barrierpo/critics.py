"""Critic regression: Adam on minibatch MSE with global-norm clipping."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import NDArray

from barrierpo.losses import LossId, LossInputs, clip_by_global_norm, grad, loss_value
from barrierpo.networks import CostCritic, ValueNet
from barrierpo.optimizer import BarrierConfig
from barrierpo.rollout import AdvantageSet, TrajectoryBatch

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]


class Adam:
    """Adam over one FlatParams vector."""

    def __init__(
        self,
        size: int,
        lr: float,
        *,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        if not lr > 0:
            raise ValueError("Adam learning rate must be positive.")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.count = 0

    def step(self, params: FloatArray, gradient: FloatArray) -> FloatArray:
        """Return updated parameters for a loss being minimized."""
        if gradient.shape != self.m.shape:
            raise ValueError(f"Expected a gradient of length {self.m.size}, got shape {gradient.shape}.")
        self.count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * gradient
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * gradient**2
        m_hat = self.m / (1.0 - self.beta1**self.count)
        v_hat = self.v / (1.0 - self.beta2**self.count)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict[str, Any]:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "count": self.count,
            "m": self.m.copy(),
            "v": self.v.copy(),
        }

    @classmethod
    def from_state_dict(cls, state: dict[str, Any]) -> Adam:
        m = np.asarray(state["m"], dtype=np.float64)
        adam = cls(m.size, float(state["lr"]), beta1=float(state["beta1"]),
                   beta2=float(state["beta2"]), eps=float(state["eps"]))
        adam.m = m.copy()
        adam.v = np.asarray(state["v"], dtype=np.float64).copy()
        adam.count = int(state["count"])
        return adam


@dataclass(frozen=True, eq=False)
class CriticUpdate:
    value_net: ValueNet
    cost_critic: CostCritic | None
    value_loss: float
    cost_value_loss: float


def train_critics(
    batch: TrajectoryBatch,
    adv_set: AdvantageSet,
    value_net: ValueNet,
    cost_critic: CostCritic | None,
    config: BarrierConfig,
    *,
    rng: np.random.Generator,
    value_opt: Adam,
    cost_opt: Adam | None = None,
) -> CriticUpdate:
    """Fit the value net to ``ret_r`` and the cost critic to ``ret_c``.

    Each epoch draws one permutation shared by both critics and splits it
    into ``config.value_minibatches`` minibatches. Every minibatch gradient
    is clipped to global norm ``config.grad_clip`` before the Adam update.
    Reported losses are full-batch MSE after training.
    """
    if cost_critic is not None and cost_opt is None:
        raise ValueError("A cost critic needs its own optimizer.")
    n = len(batch)
    for _ in range(config.value_epochs):
        order = rng.permutation(n)
        for rows in np.array_split(order, config.value_minibatches):
            if rows.size == 0:
                continue
            states = batch.states[rows]
            value_inputs = LossInputs(states=states, targets=adv_set.ret_r[rows])
            step = clip_by_global_norm(grad(LossId.VALUE_MSE, value_net, value_inputs), config.grad_clip)
            value_net = value_net.with_flat(value_opt.step(value_net.flat(), step))
            if cost_critic is not None and cost_opt is not None:
                cost_inputs = LossInputs(states=states, targets=adv_set.ret_c[rows])
                step = clip_by_global_norm(
                    grad(LossId.COST_VALUE_MSE, cost_critic, cost_inputs), config.grad_clip  # type: ignore[arg-type]
                )
                cost_critic = cost_critic.with_flat(cost_opt.step(cost_critic.flat(), step))

    value_loss = loss_value(LossId.VALUE_MSE, value_net, LossInputs(states=batch.states, targets=adv_set.ret_r))
    cost_loss = 0.0
    if cost_critic is not None:
        cost_loss = loss_value(
            LossId.COST_VALUE_MSE,
            cost_critic,  # type: ignore[arg-type]
            LossInputs(states=batch.states, targets=adv_set.ret_c),
        )
    logger.debug("Critic losses: value %.6g, cost %.6g.", value_loss, cost_loss)
    return CriticUpdate(value_net, cost_critic, value_loss, cost_loss)


__all__ = ["Adam", "CriticUpdate", "train_critics"]
