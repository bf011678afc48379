"""Client-side ABR algorithms used as the players' inner control loops.

Every client picks one ladder level per simulation step from what a real
player can observe: its buffer, its previous bitrate and the goodput it
measured. Ties always resolve toward the lower bitrate.
"""

from __future__ import annotations

import enum
import itertools
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParams
from .qoe import DEFAULT_THETA, QoeParams, buffer_penalty, video_quality

DEFAULT_LADDER_KBPS = (300.0, 750.0, 1200.0, 1850.0, 2850.0, 4300.0)


@dataclass(frozen=True)
class BitrateLadder:
    levels: tuple = DEFAULT_LADDER_KBPS

    def __post_init__(self):
        levels = tuple(float(x) for x in self.levels)
        if len(levels) < 2:
            raise InvalidParams("ladder needs at least two levels")
        if any(x <= 0 for x in levels) or any(b <= a for a, b in zip(levels, levels[1:])):
            raise InvalidParams("ladder levels must be positive and strictly increasing")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "_arr", np.array(levels))

    @property
    def array(self):
        return self._arr

    @property
    def lowest(self):
        return self.levels[0]

    @property
    def highest(self):
        return self.levels[-1]

    def __len__(self):
        return len(self.levels)

    def index_of(self, r):
        """Ladder index of the rung nearest to ``r`` (ties toward the lower rung)."""
        return int(self.nearest_index(np.asarray(r, dtype=float)))

    def nearest_index(self, r):
        """Vectorised nearest-rung index; equidistant values go to the lower rung."""
        r = np.asarray(r, dtype=float)
        hi = np.clip(np.searchsorted(self._arr, r, side="left"), 1, len(self.levels) - 1)
        lo = hi - 1
        pick_hi = (self._arr[hi] - r) < (r - self._arr[lo])
        return np.where(pick_hi, hi, lo)

    def nearest(self, r):
        return self.levels[self.index_of(r)]

    def floor(self, r):
        """Largest rung at or below ``r``; the lowest rung when ``r`` is below the ladder."""
        i = int(np.searchsorted(self._arr, float(r) + 1e-9, side="right")) - 1
        return self.levels[max(i, 0)]


@dataclass(frozen=True)
class AbrObservation:
    buffer_s: float
    last_bitrate_kbps: float
    measured_throughput_kbps: float
    step_index: int = 0


class AbrKind(str, enum.Enum):
    BBA = "bba"
    BOLA = "bola"
    CLIENT_MPC = "client_mpc"
    SCRIPTED = "scripted"


_DEFAULT_PARAMS = {
    AbrKind.BBA: {"reservoir_s": 5.0, "cushion_s": 20.0},
    AbrKind.BOLA: {"v": 0.93, "gp": 5.0},
    AbrKind.CLIENT_MPC: {
        "horizon": 3,
        "history_len": 5,
        "alpha": 0.1,
        "beta": 1.0,
        "lam": 0.5,
        "theta": DEFAULT_THETA,
    },
    AbrKind.SCRIPTED: {"script": []},
}


@dataclass(frozen=True)
class AbrConfig:
    """Algorithm kind plus its parameters; unspecified parameters take defaults."""

    kind: AbrKind
    params: dict = field(default_factory=dict)
    rng_seed: int = 0
    name: str = ""

    def __post_init__(self):
        kind = AbrKind(self.kind)
        object.__setattr__(self, "kind", kind)
        unknown = set(self.params) - set(_DEFAULT_PARAMS[kind])
        if unknown:
            raise InvalidParams(f"unknown {kind.value} parameters: {sorted(unknown)}")
        merged = {**_DEFAULT_PARAMS[kind], **self.params}
        if kind is AbrKind.BBA:
            if not (0 <= merged["reservoir_s"] < merged["cushion_s"]):
                raise InvalidParams("BBA needs 0 <= reservoir_s < cushion_s")
        elif kind is AbrKind.BOLA:
            if merged["v"] <= 0 or merged["gp"] < 0:
                raise InvalidParams("BOLA needs v > 0 and gp >= 0")
        elif kind is AbrKind.CLIENT_MPC:
            if int(merged["horizon"]) < 1 or int(merged["history_len"]) < 1:
                raise InvalidParams("client MPC needs horizon >= 1 and history_len >= 1")
            QoeParams(merged["alpha"], merged["beta"], merged["lam"])
            if merged["theta"] <= 0:
                raise InvalidParams("theta must be > 0")
        elif kind is AbrKind.SCRIPTED:
            if len(merged["script"]) == 0 or any(float(x) <= 0 for x in merged["script"]):
                raise InvalidParams("scripted player needs a non-empty script of positive bitrates")
            merged["script"] = [float(x) for x in merged["script"]]
        object.__setattr__(self, "params", merged)
        if not self.name:
            object.__setattr__(self, "name", kind.value)

    def __hash__(self):
        return hash((self.kind, self.name, repr(sorted(self.params.items()))))


def aggressive_bba_config():
    """Buffer-based client with a short reservoir that climbs the ladder early."""
    return AbrConfig(AbrKind.BBA, {"reservoir_s": 2.0, "cushion_s": 10.0}, name="aggressive_bba")


def bba_decide(ladder, buffer_s, reservoir_s=5.0, cushion_s=20.0):
    """Piecewise-linear buffer-to-rate map snapped down to the ladder."""
    if buffer_s <= reservoir_s:
        return ladder.lowest
    if buffer_s >= cushion_s:
        return ladder.highest
    frac = (buffer_s - reservoir_s) / (cushion_s - reservoir_s)
    return ladder.floor(ladder.lowest + frac * (ladder.highest - ladder.lowest))


def bola_decide(ladder, buffer_s, v=0.93, gp=5.0):
    """BOLA-BASIC: argmax over rungs of ``(v (u_m + gp) - buffer) / S_m``."""
    sizes = ladder.array
    utils = np.log(sizes / sizes[0])
    scores = (v * (utils + gp) - buffer_s) / sizes
    return ladder.levels[int(np.argmax(scores))]


_PLAN_CACHE = {}


def _plans(n_levels, horizon):
    key = (n_levels, horizon)
    if key not in _PLAN_CACHE:
        _PLAN_CACHE[key] = np.array(list(itertools.product(range(n_levels), repeat=horizon)), dtype=int)
    return _PLAN_CACHE[key]


def mpc_client_decide(
    ladder,
    buffer_s,
    last_bitrate_kbps,
    throughput_kbps,
    horizon=3,
    qoe=QoeParams(0.1, 1.0, 0.5),
    theta=DEFAULT_THETA,
    delta_t_s=1.0,
    max_buffer_s=30.0,
):
    """Exhaustive lookahead over ``len(ladder) ** horizon`` bitrate plans.

    Each plan is scored by the summed per-step QoE with the buffer rolled
    forward by the fluid buffer model under a constant throughput
    estimate. Only rungs at or below the estimate are admissible (the
    lowest rung always is). The first decision of the best plan is returned.
    """
    cap = max(float(throughput_kbps), ladder.lowest)
    plans = _plans(len(ladder), horizon)
    rates = ladder.array[plans]
    admissible = np.all(rates <= cap + 1e-9, axis=1)
    plans, rates = plans[admissible], rates[admissible]
    b = np.full(rates.shape[0], float(buffer_s))
    prev = np.full(rates.shape[0], float(last_bitrate_kbps))
    score = np.zeros(rates.shape[0])
    for j in range(horizon):
        r = rates[:, j]
        b = np.minimum(np.maximum(b + (throughput_kbps / r - 1.0) * delta_t_s, 0.0), max_buffer_s)
        v_now, v_prev = video_quality(theta, r), video_quality(theta, prev)
        score += v_now - qoe.alpha * np.abs(v_now - v_prev) - qoe.beta * buffer_penalty(qoe.lam, b)
        prev = r
    # argmax returns the first maximum; plans are in ascending lexicographic order
    return float(rates[int(np.argmax(score)), 0])


class AbrClient:
    """Stateful wrapper giving every algorithm the same ``decide(obs)`` entry point."""

    def __init__(self, config, ladder, max_buffer_s=30.0, delta_t_s=1.0):
        self.config = config
        self.ladder = ladder
        self.max_buffer_s = float(max_buffer_s)
        self.delta_t_s = float(delta_t_s)
        self.reset()

    def reset(self):
        self._throughputs = deque(maxlen=int(self.config.params.get("history_len", 5)))

    def throughput_estimate(self):
        if not self._throughputs:
            return 0.0
        t = np.asarray(self._throughputs)
        with np.errstate(over="ignore"):  # a subnormal sample drives the mean to its limit, 0
            return float(t.size / np.sum(1.0 / t))

    def decide(self, obs):
        p = self.config.params
        kind = self.config.kind
        if obs.measured_throughput_kbps > 0:
            self._throughputs.append(float(obs.measured_throughput_kbps))
        if kind is AbrKind.BBA:
            return bba_decide(self.ladder, obs.buffer_s, p["reservoir_s"], p["cushion_s"])
        if kind is AbrKind.BOLA:
            return bola_decide(self.ladder, obs.buffer_s, p["v"], p["gp"])
        if kind is AbrKind.CLIENT_MPC:
            return mpc_client_decide(
                self.ladder,
                obs.buffer_s,
                obs.last_bitrate_kbps,
                self.throughput_estimate(),
                horizon=int(p["horizon"]),
                qoe=QoeParams(p["alpha"], p["beta"], p["lam"]),
                theta=p["theta"],
                delta_t_s=self.delta_t_s,
                max_buffer_s=self.max_buffer_s,
            )
        script = p["script"]
        return self.ladder.nearest(script[min(max(obs.step_index, 0), len(script) - 1)])


def decide(abr, ladder, obs, **kwargs):
    """One decision from a client or, for a bare config, from a fresh client."""
    if isinstance(abr, AbrConfig):
        abr = AbrClient(abr, ladder, **kwargs)
    return abr.decide(obs)
