"""Bottleneck-capacity traces: loading, resampling, synthesis and horizon prediction.

Capacities are in kbps and times in seconds throughout the package.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyTrace, InvalidParams, MalformedLine, NonMonotoneTime


@dataclass(frozen=True)
class BandwidthTrace:
    """Immutable time series of bottleneck capacity.

    ``times`` are strictly increasing seconds and ``capacities`` are
    strictly positive kbps.
    """

    times: np.ndarray
    capacities: np.ndarray
    name: str = "trace"

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        caps = np.array(self.capacities, dtype=float)
        if times.ndim != 1 or times.shape != caps.shape:
            raise InvalidParams("times and capacities must be 1-D and equally long")
        if times.size == 0:
            raise EmptyTrace()
        if np.any(np.diff(times) <= 0):
            raise InvalidParams("times must be strictly increasing")
        if np.any(times < 0):
            raise InvalidParams("times must be non-negative")
        if np.any(~np.isfinite(caps)) or np.any(caps <= 0):
            raise InvalidParams("capacities must be finite and > 0")
        times.flags.writeable = False
        caps.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "capacities", caps)

    def __len__(self):
        return self.capacities.size

    def __eq__(self, other):
        if not isinstance(other, BandwidthTrace):
            return NotImplemented
        return (
            self.name == other.name
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.capacities, other.capacities)
        )

    def __hash__(self):
        return hash((self.name, self.times.tobytes(), self.capacities.tobytes()))

    @property
    def samples(self):
        return list(zip(self.times.tolist(), self.capacities.tolist()))

    @property
    def spacing(self):
        """Uniform sample spacing in seconds, or None when irregular."""
        if len(self) < 2:
            return None
        d = np.diff(self.times)
        if np.allclose(d, d[0], rtol=0, atol=1e-9):
            return float(d[0])
        return None

    def with_name(self, name):
        return BandwidthTrace(self.times, self.capacities, name)


class TraceFormat(str, enum.Enum):
    TWO_COLUMN = "two_column"


def load_trace(path, format=TraceFormat.TWO_COLUMN, name=None):
    """Parse a ``<time_s> <capacity_kbps>`` text file.

    Blank lines and lines starting with ``#`` are skipped. Line numbers in
    raised errors are 1-based physical line numbers.
    """
    if TraceFormat(format) is not TraceFormat.TWO_COLUMN:
        raise InvalidParams(f"unsupported trace format {format!r}")
    path = Path(path)
    times, caps = [], []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise MalformedLine(line_no, line)
            try:
                t, c = float(parts[0]), float(parts[1])
            except ValueError:
                raise MalformedLine(line_no, line) from None
            if not (math.isfinite(t) and math.isfinite(c)) or t < 0 or c <= 0:
                raise MalformedLine(line_no, line)
            if times and t <= times[-1]:
                raise NonMonotoneTime(line_no)
            times.append(t)
            caps.append(c)
    if not times:
        raise EmptyTrace(f"{path} contains no samples")
    return BandwidthTrace(np.array(times), np.array(caps), name or path.stem)


def save_trace(trace, path):
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {trace.name}: time_s capacity_kbps\n")
        for t, c in zip(trace.times, trace.capacities):
            fh.write(f"{t:.6g} {c:.6f}\n")


def resample(trace, delta_t_s):
    """Zero-order-hold resampling onto ``{0, dt, 2dt, ...}`` up to the last sample time.

    Grid points before the first sample take the first sample's value.
    """
    if delta_t_s <= 0:
        raise InvalidParams("delta_t_s must be > 0")
    if trace is None or len(trace) == 0:
        raise EmptyTrace()
    n = int(math.floor(trace.times[-1] / delta_t_s + 1e-9)) + 1
    grid = np.arange(n) * float(delta_t_s)
    if trace.spacing is not None and trace.times[0] == 0 and math.isclose(trace.spacing, delta_t_s):
        return BandwidthTrace(grid, trace.capacities.copy(), trace.name)
    idx = np.searchsorted(trace.times, grid + 1e-9, side="right") - 1
    idx = np.clip(idx, 0, len(trace) - 1)
    return BandwidthTrace(grid, trace.capacities[idx], trace.name)


class SynthKind(str, enum.Enum):
    CONSTANT = "constant"
    STEP = "step"
    RANDOM_WALK = "random_walk"


_RANDOM_WALK_DEFAULTS = {
    "mean_kbps": 5000.0,
    "volatility": 0.12,
    "reversion": 0.03,
    "min_kbps": 100.0,
    "max_kbps": 12000.0,
    "duration_s": 320.0,
    "delta_t_s": 1.0,
}


def synth_trace(kind, params=None, rng_seed=0, name=None):
    """Build a deterministic synthetic trace.

    Supported kinds and their parameters:

    * ``constant``: ``level_kbps``, ``duration_s``, ``delta_t_s`` (default 1)
    * ``step``: ``before_kbps``, ``after_kbps``, ``step_time_s``, ``duration_s``, ``delta_t_s``
    * ``random_walk``: mean-reverting walk of log-capacity, clamped to
      ``[min_kbps, max_kbps]``; see ``_RANDOM_WALK_DEFAULTS``.
    """
    kind = SynthKind(kind)
    params = dict(params or {})
    dt = float(params.get("delta_t_s", 1.0))
    if dt <= 0:
        raise InvalidParams("delta_t_s must be > 0")

    def n_steps(duration):
        n = int(round(float(duration) / dt))
        if n < 1:
            raise InvalidParams("duration_s must cover at least one step")
        return n

    if kind is SynthKind.CONSTANT:
        level = float(params.get("level_kbps", 0))
        if level <= 0 or "duration_s" not in params:
            raise InvalidParams("constant trace needs level_kbps > 0 and duration_s")
        caps = np.full(n_steps(params["duration_s"]), level)
    elif kind is SynthKind.STEP:
        try:
            before = float(params["before_kbps"])
            after = float(params["after_kbps"])
            at = float(params["step_time_s"])
            n = n_steps(params["duration_s"])
        except KeyError as exc:
            raise InvalidParams(f"step trace missing {exc.args[0]}") from None
        if before <= 0 or after <= 0:
            raise InvalidParams("step levels must be > 0")
        t = np.arange(n) * dt
        caps = np.where(t < at - 1e-9, before, after)
    else:
        p = {**_RANDOM_WALK_DEFAULTS, **params}
        lo, hi, mean = float(p["min_kbps"]), float(p["max_kbps"]), float(p["mean_kbps"])
        if not (0 < lo <= mean <= hi):
            raise InvalidParams("random walk needs 0 < min_kbps <= mean_kbps <= max_kbps")
        if p["volatility"] < 0 or not (0 <= p["reversion"] <= 1):
            raise InvalidParams("volatility must be >= 0 and reversion in [0, 1]")
        n = n_steps(p["duration_s"])
        rng = np.random.default_rng(rng_seed)
        shocks = rng.standard_normal(n)
        log_lo, log_hi, log_mean = math.log(lo), math.log(hi), math.log(mean)
        x = np.empty(n)
        x[0] = log_mean
        for k in range(1, n):
            step = p["reversion"] * (log_mean - x[k - 1]) + p["volatility"] * shocks[k]
            x[k] = min(max(x[k - 1] + step, log_lo), log_hi)
        caps = np.clip(np.exp(x), lo, hi)
    floor = float(params.get("floor_kbps", 1e-3))
    caps = np.maximum(caps, floor)
    times = np.arange(caps.size) * dt
    return BandwidthTrace(times, caps, name or f"{kind.value}-{rng_seed}")


class PredictorKind(str, enum.Enum):
    ORACLE = "oracle"
    NOISY_ORACLE = "noisy_oracle"
    HARMONIC_MEAN = "harmonic_mean"


@dataclass(frozen=True)
class PredictorConfig:
    kind: PredictorKind = PredictorKind.ORACLE
    noise_fraction: float = 0.0
    history_len: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PredictorKind(self.kind))
        if not (0 <= self.noise_fraction <= 0.5):
            raise InvalidParams("noise_fraction must be in [0, 0.5]")
        if self.history_len < 1:
            raise InvalidParams("history_len must be >= 1")
        if self.rng_seed < 0:
            raise InvalidParams("rng_seed must be unsigned")


def predict_horizon(trace, cfg, t, t_p):
    """Capacities predicted for steps ``t .. t + t_p`` (``t_p + 1`` values).

    Indices past the end of the trace repeat the last capacity.
    """
    n = len(trace)
    idx = np.minimum(np.arange(t, t + t_p + 1), n - 1)
    if cfg.kind is PredictorKind.ORACLE:
        return trace.capacities[idx].copy()
    if cfg.kind is PredictorKind.NOISY_ORACLE:
        rng = np.random.default_rng([cfg.rng_seed, t])
        f = cfg.noise_fraction
        return trace.capacities[idx] * rng.uniform(1.0 - f, 1.0 + f, size=idx.size)
    # harmonic mean of strictly past observations; W(0) when there are none
    past = trace.capacities[max(0, t - cfg.history_len) : min(t, n)]
    if past.size == 0:
        past = trace.capacities[:1]
    hm = past.size / np.sum(1.0 / past)
    return np.full(t_p + 1, hm)
