"""Adaptive revenue/regret task weights and the annealed regret target."""
from dataclasses import asdict, dataclass
from typing import Any, Dict

import numpy as np

from config import TrainConfig

RGT_FLOOR = 1e-12
# Latent weight ceiling in units of rho; keeps tanh strictly below 1 in float64
LATENT_CAP = float(np.arctanh(1.0 - 1e-6))


@dataclass
class WeightSchedulerState:
    """Latent regret weight plus Adam moments.

    The published weights are w_rgt = max(tanh(w_rgt_raw / rho), 0) and
    w_rev = 1 - w_rgt. Updates keep w_rgt_raw in [0, LATENT_CAP * rho].
    """
    w_rgt_raw: float = 1.0
    m: float = 0.0
    v: float = 0.0
    t: int = 0
    rho: float = 2.0

    @property
    def w_rgt(self) -> float:
        return max(float(np.tanh(self.w_rgt_raw / self.rho)), 0.0)

    @property
    def w_rev(self) -> float:
        return 1.0 - self.w_rgt

    def to_dict(self) -> Dict[str, Any]:
        return {**asdict(self), 'w_rgt': self.w_rgt, 'w_rev': self.w_rev}


def weight_gradient(rgt: float, rev: float, target: float, alpha: float) -> float:
    """log(rgt) - log(target) - log(1 + alpha * rev); zero when rgt = target * (1 + alpha * rev)"""
    return float(np.log(max(rgt, RGT_FLOOR)) - np.log(target) - np.log1p(alpha * rev))


def weight_update(state: WeightSchedulerState,
                  rgt: float,
                  rev: float,
                  target: float,
                  alpha: float,
                  lr: float,
                  beta1: float = 0.9,
                  beta2: float = 0.999,
                  eps: float = 1e-8) -> WeightSchedulerState:
    """One bias-corrected Adam ascent step on the latent regret weight"""
    g = weight_gradient(rgt, rev, target, alpha)
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    raw = min(max(state.w_rgt_raw + lr * m_hat / (np.sqrt(v_hat) + eps), 0.0), LATENT_CAP * state.rho)
    return WeightSchedulerState(float(raw), float(m), float(v), t, state.rho)


def anneal_target(t: int, T: int, start: float, end: float) -> float:
    """Geometric interpolation from ``start`` to ``end`` over the first floor(2T/3) steps"""
    horizon = max(1, (2 * T) // 3)
    return float(start * (end / start) ** min(1.0, t / horizon))


class WeightScheduler:
    """Stateful wrapper used by the training loop"""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.state = WeightSchedulerState(w_rgt_raw=config.w_rgt_init, rho=config.rho)

    @property
    def w_rgt(self) -> float:
        return self.state.w_rgt

    @property
    def w_rev(self) -> float:
        return self.state.w_rev

    def target(self, t: int) -> float:
        return anneal_target(t, self.config.iterations, self.config.rgt_start, self.config.rgt_end)

    def update(self, rgt: float, rev: float, t: int) -> WeightSchedulerState:
        self.state = weight_update(self.state, rgt, rev, self.target(t), self.config.alpha,
                                   self.config.weight_lr, self.config.beta1, self.config.beta2,
                                   self.config.eps)
        return self.state
