"""Video quality, QoE and multiplayer objective kernels.

All kernels are pure and accept numpy arrays as well as scalars so the
controller can evaluate many candidate plans at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyList, InvalidParams, LengthMismatch

DEFAULT_THETA = 2.1e-3


@dataclass(frozen=True)
class QoeParams:
    alpha: float = 0.1
    beta: float = 0.1
    lam: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise InvalidParams("alpha and beta must be >= 0")
        if self.lam <= 0:
            raise InvalidParams("lam must be > 0")


@dataclass(frozen=True)
class ObjectiveConfig:
    gamma: float = 0.75
    etas: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "etas", tuple(float(e) for e in self.etas))
        if not (0.0 <= self.gamma <= 1.0):
            raise InvalidParams("gamma must be in [0, 1]")
        if any(not (0.0 < e <= 1.0) for e in self.etas):
            raise InvalidParams("every eta must be in (0, 1]")

    def etas_for(self, n):
        """Importance weights for ``n`` players; empty ``etas`` means all ones."""
        if not self.etas:
            return np.ones(n)
        if len(self.etas) != n:
            raise LengthMismatch(f"expected {n} etas, got {len(self.etas)}")
        return np.asarray(self.etas, dtype=float)


def video_quality(theta, r_kbps):
    """``1 - exp(-theta * r)``; saturating quality in [0, 1)."""
    return 1.0 - np.exp(-theta * r_kbps)


def buffer_penalty(lam, b_s):
    """``exp(-lam * b)``; equals 1 on an empty buffer."""
    return np.exp(-lam * b_s)


def instant_qoe(params, theta, r_now, r_prev, b_s):
    v_now = video_quality(theta, r_now)
    v_prev = video_quality(theta, r_prev)
    return v_now - params.alpha * np.abs(v_now - v_prev) - params.beta * buffer_penalty(params.lam, b_s)


def average_qoe(instants):
    """Sum of the ``T_p + 1`` horizon QoE values divided by ``T_p``.

    The divisor is the horizon length, not the number of terms, so a
    constant QoE ``u`` averages to ``u * (T_p + 1) / T_p``. Works along the
    last axis of an array.
    """
    x = np.asarray(instants, dtype=float)
    if x.size == 0 or x.shape[-1] == 0:
        raise EmptyList("no QoE samples")
    t_p = x.shape[-1] - 1
    if t_p < 1:
        raise InvalidParams("horizon needs at least two samples (T_p >= 1)")
    return x.sum(axis=-1) / t_p


def social_welfare(us):
    x = np.asarray(us, dtype=float)
    if x.size == 0 or x.shape[-1] == 0:
        raise EmptyList("no players")
    return x.mean(axis=-1)


def pairwise_unfairness(us, etas):
    """``sum_{i<j} |eta_i U_i - eta_j U_j| / N`` along the last axis."""
    u = np.asarray(us, dtype=float)
    e = np.asarray(etas, dtype=float)
    if u.shape[-1] != e.shape[-1]:
        raise LengthMismatch(f"{u.shape[-1]} QoE values but {e.shape[-1]} weights")
    n = u.shape[-1]
    if n < 2:
        raise InvalidParams("pairwise unfairness needs at least two players")
    x = np.sort(u * e, axis=-1)
    # for ascending x, sum_{i<j} (x_j - x_i) = sum_k (2k - n + 1) x_k
    coef = 2.0 * np.arange(n) - n + 1.0
    return (x * coef).sum(axis=-1) / n


def weighted_objective(cfg, j_e, j_f):
    """Combined cost ``-(1 - gamma) J_e + gamma J_f``; lower is better."""
    return -(1.0 - cfg.gamma) * j_e + cfg.gamma * j_f


def jain_unfairness(us):
    """One minus Jain's fairness index; 0 for an all-zero vector."""
    x = np.asarray(us, dtype=float)
    if x.size == 0:
        raise EmptyList("no players")
    sq = float(np.sum(x * x))
    if sq == 0.0:
        return 0.0
    return 1.0 - float(np.sum(x)) ** 2 / (x.size * sq)
