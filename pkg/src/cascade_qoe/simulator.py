"""Discrete-time multiplayer streaming session engine.

One step of length ``delta_t`` is: the allocator splits the bottleneck,
every player with room in its buffer downloads at its allocation and lets
its ABR pick a bitrate, and buffers advance by the fluid buffer model.
Players whose buffer is full sit idle for the step and hold their bitrate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .abr import AbrClient, AbrConfig, AbrObservation, BitrateLadder
from .errors import CascadeQoeError, InvalidParams, SessionError, ZeroBitrate
from .qoe import (
    DEFAULT_THETA,
    ObjectiveConfig,
    QoeParams,
    instant_qoe,
    jain_unfairness,
    pairwise_unfairness,
    social_welfare,
    weighted_objective,
)
from .traces import resample

FULL_BUFFER_EPS = 1e-9


@dataclass(frozen=True)
class PlayerSpec:
    id: str
    abr: AbrConfig
    theta: float = DEFAULT_THETA
    eta: float = 1.0
    max_buffer_s: float = 30.0
    initial_buffer_s: float = 0.0
    initial_bitrate_kbps: Optional[float] = None

    def __post_init__(self):
        if self.theta <= 0:
            raise InvalidParams(f"player {self.id}: theta must be > 0")
        if not (0 < self.eta <= 1):
            raise InvalidParams(f"player {self.id}: eta must be in (0, 1]")
        if self.max_buffer_s <= 0 or not (0 <= self.initial_buffer_s <= self.max_buffer_s):
            raise InvalidParams(f"player {self.id}: need 0 <= initial_buffer_s <= max_buffer_s")


@dataclass
class PlayerState:
    """What a network-side controller knows about one player at step ``t``.

    ``buffer_history[-1]`` is the current buffer ``b(t)``;
    ``bandwidth_history`` holds the goodput of the steps before ``t`` and
    ``last_bitrate_kbps`` is ``r(t-1)``. Both histories are padded with the
    initial values at the start of a session.
    """

    buffer_s: float
    last_bitrate_kbps: float
    buffer_history: np.ndarray
    bandwidth_history: np.ndarray
    throughput_history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    max_buffer_s: float = 30.0


def buffer_step(b, w, r, delta_t_s, b_max):
    """``min(max(b + (w / r - 1) * dt, 0), b_max)``; works elementwise on arrays."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ZeroBitrate("bitrate must be > 0")
    out = np.minimum(np.maximum(b + (w / r - 1.0) * delta_t_s, 0.0), b_max)
    return float(out) if out.ndim == 0 else out


def contention_share(active, capacity_kbps):
    """Equal split of the capacity among players that are downloading.

    Idle players (full buffer) get nothing; their share goes to the rest.
    """
    active = np.asarray(active, dtype=bool)
    if capacity_kbps <= 0:
        raise InvalidParams("capacity must be > 0")
    out = np.zeros(active.shape, dtype=float)
    n = int(active.sum())
    if n:
        out[active] = capacity_kbps / n
    return out


@dataclass(frozen=True)
class EstimationNoise:
    """Multiplicative uniform error on what the allocator observes."""

    bitrate_fraction: float = 0.04
    buffer_fraction: float = 0.18
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.bitrate_fraction < 1 and 0 <= self.buffer_fraction < 1):
            raise InvalidParams("noise fractions must be in [0, 1)")


@dataclass
class SessionContext:
    """Everything an allocator may consult when deciding step ``t``."""

    step: int
    capacity_kbps: float
    trace: object
    delta_t_s: float
    specs: Sequence[PlayerSpec]
    states: Sequence[PlayerState]
    qoe: QoeParams
    objective: ObjectiveConfig
    true_buffers: np.ndarray
    ladder: BitrateLadder


@dataclass
class SessionLog:
    """Per-step, per-player records of one session (arrays are steps x players)."""

    player_ids: list
    trace_name: str
    allocator: str
    capacity: np.ndarray
    allocation: np.ndarray
    goodput: np.ndarray
    bitrate: np.ndarray
    buffer: np.ndarray
    qoe: np.ndarray
    etas: np.ndarray
    gamma: float
    diagnostics: list = field(default_factory=list)

    @property
    def n_steps(self):
        return self.allocation.shape[0]

    @property
    def n_players(self):
        return self.allocation.shape[1]

    def mean_qoe(self):
        """Whole-session mean QoE of each player."""
        return self.qoe.mean(axis=0)

    def summary(self):
        u = self.mean_qoe()
        sw = float(social_welfare(u))
        pu = float(pairwise_unfairness(u, self.etas)) if u.size >= 2 else 0.0
        return {
            "social_welfare": sw,
            "pairwise_unfairness": pu,
            "jain_unfairness": float(jain_unfairness(u)),
            "weighted_sum_index": float(weighted_objective(ObjectiveConfig(self.gamma), sw, pu)),
        }


class Allocator:
    """Base class for network-side bandwidth allocators."""

    name = "allocator"

    def reset(self, specs, trace, delta_t_s):
        pass

    def allocate(self, ctx):
        raise NotImplementedError

    @property
    def diagnostics(self):
        return []


class ContentionAllocator(Allocator):
    """No shaping: downloading players share the link equally."""

    name = "pure_client_side"

    def allocate(self, ctx):
        active = np.array([b < s.max_buffer_s - FULL_BUFFER_EPS for b, s in zip(ctx.true_buffers, ctx.specs)])
        if not active.any():
            return np.zeros(len(ctx.specs))
        return contention_share(active, ctx.capacity_kbps)


def run_session(
    specs,
    trace,
    allocator=None,
    qoe=QoeParams(),
    obj=ObjectiveConfig(),
    delta_t_s=1.0,
    estimation_noise=None,
    ladder=BitrateLadder(),
    steps=None,
    history_len=8,
):
    """Simulate one session and return its :class:`SessionLog`.

    ``allocator=None`` selects the unshaped contention baseline. Estimation
    noise perturbs only the buffers and bitrates handed to the allocator.
    """
    if not specs:
        raise InvalidParams("need at least one player")
    if trace.spacing is None or not math.isclose(trace.spacing, delta_t_s) or trace.times[0] != 0:
        trace = resample(trace, delta_t_s)
    allocator = allocator or ContentionAllocator()
    n = len(specs)
    n_steps = len(trace) if steps is None else min(int(steps), len(trace))
    etas = obj.etas_for(n) if obj.etas else np.array([s.eta for s in specs])

    clients = [AbrClient(s.abr, ladder, s.max_buffer_s, delta_t_s) for s in specs]
    b_max = np.array([s.max_buffer_s for s in specs])
    thetas = np.array([s.theta for s in specs])
    buf = np.array([s.initial_buffer_s for s in specs], dtype=float)
    rate = np.array([ladder.lowest if s.initial_bitrate_kbps is None else ladder.nearest(s.initial_bitrate_kbps) for s in specs])

    # controller-visible histories, padded with initial values
    w0 = trace.capacities[0] / n
    seen_buf = np.tile(buf, (history_len, 1))
    seen_bw = np.full((history_len, n), w0)
    rng = np.random.default_rng(estimation_noise.seed) if estimation_noise else None

    alloc_log = np.zeros((n_steps, n))
    good_log = np.zeros((n_steps, n))
    rate_log = np.zeros((n_steps, n))
    buf_log = np.zeros((n_steps, n))
    qoe_log = np.zeros((n_steps, n))

    allocator.reset(specs, trace, delta_t_s)
    for t in range(n_steps):
        cap = float(trace.capacities[t])
        obs_buf, obs_rate = buf.copy(), rate.copy()
        if rng is not None:
            f_r, f_b = estimation_noise.bitrate_fraction, estimation_noise.buffer_fraction
            obs_rate = obs_rate * rng.uniform(1 - f_r, 1 + f_r, n)
            obs_buf = np.clip(obs_buf * rng.uniform(1 - f_b, 1 + f_b, n), 0.0, b_max)
        seen_buf = np.vstack([seen_buf[1:], obs_buf])
        states = [
            PlayerState(
                buffer_s=float(obs_buf[i]),
                last_bitrate_kbps=float(obs_rate[i]),
                buffer_history=seen_buf[:, i].copy(),
                bandwidth_history=seen_bw[:, i].copy(),
                max_buffer_s=float(b_max[i]),
            )
            for i in range(n)
        ]
        ctx = SessionContext(t, cap, trace, delta_t_s, specs, states, qoe, obj, buf.copy(), ladder)
        try:
            w = np.asarray(allocator.allocate(ctx), dtype=float)
        except CascadeQoeError as exc:
            raise SessionError(t, exc) from exc
        if w.shape != (n,):
            raise SessionError(t, InvalidParams(f"allocator returned shape {w.shape}"))

        active = buf < b_max - FULL_BUFFER_EPS
        goodput = np.where(active, w, 0.0)
        new_rate = rate.copy()
        for i in range(n):
            if active[i]:
                obs = AbrObservation(float(buf[i]), float(rate[i]), float(goodput[i]), t)
                new_rate[i] = clients[i].decide(obs)
        u = instant_qoe(qoe, thetas, new_rate, rate, buf)

        alloc_log[t], good_log[t], rate_log[t], buf_log[t], qoe_log[t] = w, goodput, new_rate, buf, u
        buf = buffer_step(buf, goodput, new_rate, delta_t_s, b_max)
        rate = new_rate
        seen_bw = np.vstack([seen_bw[1:], goodput])

    return SessionLog(
        player_ids=[s.id for s in specs],
        trace_name=trace.name,
        allocator=allocator.name,
        capacity=trace.capacities[:n_steps].copy(),
        allocation=alloc_log,
        goodput=good_log,
        bitrate=rate_log,
        buffer=buf_log,
        qoe=qoe_log,
        etas=np.asarray(etas, dtype=float),
        gamma=obj.gamma,
        diagnostics=list(allocator.diagnostics),
    )
