"""Experiment harness: configs, paired multi-allocator runs, CDFs and summaries.

An experiment runs every (trace, allocator) pair with identical seeds so
allocators are compared on exactly the same conditions. Outputs are a CSV
per session, one CDF file per (metric, allocator) plus per-baseline gain
CDFs when CANE is compared, and a summary table. Everything written by
:func:`run_experiment` is a deterministic function of the config and seed;
wall-clock measurements are returned in memory only.
"""

from __future__ import annotations

import copy
import csv
import glob
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .abr import AbrConfig, AbrKind, BitrateLadder
from .blackbox import (
    evaluate_accuracy,
    fit_poly_model,
    generate_dataset,
    load_model,
    save_model,
)
from .controller import CaneAllocator, ControllerConfig, SolverConfig, UniformAllocator
from .errors import CascadeQoeError, ConfigError
from .qoe import DEFAULT_THETA, ObjectiveConfig, QoeParams
from .simulator import ContentionAllocator, EstimationNoise, PlayerSpec, run_session
from .traces import PredictorConfig, load_trace

log = logging.getLogger(__name__)

PKG_PREFIX = "pkg:"
ALLOCATORS = ("pure_client_side", "uniform_shaping", "cane")
_ALLOCATOR_ALIASES = {
    "pureclientside": "pure_client_side",
    "pure_client_side": "pure_client_side",
    "uniformshaping": "uniform_shaping",
    "uniform_shaping": "uniform_shaping",
    "cane": "cane",
}
METRICS = ("social_welfare", "pairwise_unfairness", "jain_unfairness", "weighted_sum_index")
# True when a larger value is better
_HIGHER_IS_BETTER = {
    "social_welfare": True,
    "pairwise_unfairness": False,
    "jain_unfairness": False,
    "weighted_sum_index": False,
}
SESSION_HEADER = ("step", "player_id", "allocation_kbps", "bitrate_kbps", "buffer_s", "qoe")


def resolve_path(path, base_dir="."):
    """``pkg:<rel>`` names bundled data; other relative paths hang off ``base_dir``."""
    path = str(path)
    if path.startswith(PKG_PREFIX):
        return Path(str(resources.files("cascade_qoe") / "data" / path[len(PKG_PREFIX) :]))
    p = Path(path)
    return p if p.is_absolute() else Path(base_dir) / p


def expand_trace_paths(patterns, base_dir=".", field_name="traces"):
    """Resolve globs in order; each pattern must match at least one file."""
    out = []
    for i, pat in enumerate(patterns):
        full = resolve_path(pat, base_dir)
        matches = sorted(glob.glob(str(full))) if glob.has_magic(str(full)) else [str(full)]
        matches = [m for m in matches if os.path.isfile(m)]
        if not matches:
            raise ConfigError(f"{field_name}[{i}]", f"no trace file matches {pat!r}")
        out.extend(Path(m) for m in matches)
    return out


# ---------------------------------------------------------------- config parsing


def _take(d, key, path, kind, default=None, required=False):
    if key not in d:
        if required:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
        return default
    val = d[key]
    where = f"{path}.{key}" if path else key
    try:
        if kind is bool:
            if not isinstance(val, bool):
                raise TypeError
            return val
        if kind is int:
            if isinstance(val, bool) or int(val) != val:
                raise TypeError
            return int(val)
        if kind is float:
            if isinstance(val, bool):
                raise TypeError
            return float(val)
        if kind is str:
            if not isinstance(val, str):
                raise TypeError
            return val
        if kind is dict:
            if val is None:
                return {}
            if not isinstance(val, dict):
                raise TypeError
            return val
        if kind is list:
            if not isinstance(val, list):
                raise TypeError
            return val
    except (TypeError, ValueError):
        raise ConfigError(where, f"expected {kind.__name__}, got {val!r}") from None
    raise AssertionError(kind)


def _no_extra(d, allowed, path):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{path}.{extra[0]}" if path else extra[0], "unknown field")


@dataclass(frozen=True)
class PlayerConfig:
    id: str
    abr: str
    abr_params: dict = field(default_factory=dict)
    theta: float = DEFAULT_THETA
    model: Optional[str] = None
    max_buffer_s: float = 30.0
    initial_buffer_s: float = 0.0

    def to_dict(self):
        return {
            "id": self.id,
            "abr": self.abr,
            "abr_params": dict(self.abr_params),
            "theta": self.theta,
            "model": self.model,
            "max_buffer_s": self.max_buffer_s,
            "initial_buffer_s": self.initial_buffer_s,
        }


@dataclass(frozen=True)
class NoiseConfig:
    enabled: bool = False
    bitrate_fraction: float = 0.04
    buffer_fraction: float = 0.18


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one scenario; see ``configs/`` for examples."""

    scenario: str
    players: list
    traces: list
    allocators: list = field(default_factory=lambda: list(ALLOCATORS))
    qoe: QoeParams = field(default_factory=QoeParams)
    gamma: float = 0.75
    etas: tuple = ()
    t_p: int = 4
    buffer_gain: float = 0.02
    solver: SolverConfig = field(default_factory=SolverConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    output_dir: str = "results"
    seed: int = 0
    steps: Optional[int] = None
    delta_t_s: float = 1.0
    ladder: BitrateLadder = field(default_factory=BitrateLadder)
    base_dir: str = field(default=".", compare=False)

    @property
    def n_players(self):
        return len(self.players)

    def objective(self):
        return ObjectiveConfig(self.gamma, self.etas)

    def etas_vector(self):
        return self.objective().etas_for(self.n_players)

    def to_dict(self):
        s = self.solver
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "steps": self.steps,
            "delta_t_s": self.delta_t_s,
            "ladder_kbps": list(self.ladder.levels),
            "traces": list(self.traces),
            "allocators": list(self.allocators),
            "players": [p.to_dict() for p in self.players],
            "qoe": {"alpha": self.qoe.alpha, "beta": self.qoe.beta, "lam": self.qoe.lam},
            "objective": {"gamma": self.gamma, "etas": list(self.etas)},
            "controller": {
                "t_p": self.t_p,
                "buffer_gain": self.buffer_gain,
                "solver": {
                    "max_iters": s.max_iters,
                    "step_size_init": s.step_size_init,
                    "fd_epsilon": s.fd_epsilon,
                    "tol": s.tol,
                    "restarts": s.restarts,
                    "polish_iters": s.polish_iters,
                    "scan_points": s.scan_points,
                },
                "predictor": {
                    "kind": self.predictor.kind.value,
                    "noise_fraction": self.predictor.noise_fraction,
                    "history_len": self.predictor.history_len,
                },
            },
            "estimation_noise": {
                "enabled": self.noise.enabled,
                "bitrate_fraction": self.noise.bitrate_fraction,
                "buffer_fraction": self.noise.buffer_fraction,
            },
        }

    @classmethod
    def from_dict(cls, d, base_dir="."):
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a mapping")
        _no_extra(
            d,
            {"scenario", "seed", "output_dir", "steps", "delta_t_s", "ladder_kbps", "traces", "allocators",
             "players", "qoe", "objective", "controller", "estimation_noise"},
            "",
        )
        scenario = _take(d, "scenario", "", str, required=True)
        seed = _take(d, "seed", "", int, 0)
        if seed < 0 or seed >= 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        steps = d.get("steps")
        if steps is not None:
            steps = _take(d, "steps", "", int)
            if steps < 1:
                raise ConfigError("steps", "must be >= 1")
        delta_t = _take(d, "delta_t_s", "", float, 1.0)
        if delta_t <= 0:
            raise ConfigError("delta_t_s", "must be > 0")
        try:
            ladder = BitrateLadder(tuple(_take(d, "ladder_kbps", "", list, list(BitrateLadder().levels))))
        except (CascadeQoeError, TypeError, ValueError) as exc:
            raise ConfigError("ladder_kbps", str(exc)) from None

        traces = _take(d, "traces", "", list, required=True)
        if not traces or not all(isinstance(t, str) for t in traces):
            raise ConfigError("traces", "need a non-empty list of paths or globs")

        allocators = []
        for i, a in enumerate(_take(d, "allocators", "", list, list(ALLOCATORS))):
            key = str(a).lower().replace("-", "_")
            if key not in _ALLOCATOR_ALIASES:
                raise ConfigError(f"allocators[{i}]", f"unknown allocator {a!r}")
            if _ALLOCATOR_ALIASES[key] in allocators:
                raise ConfigError(f"allocators[{i}]", "duplicate allocator")
            allocators.append(_ALLOCATOR_ALIASES[key])
        if not allocators:
            raise ConfigError("allocators", "need at least one allocator")

        raw_players = _take(d, "players", "", list, required=True)
        if len(raw_players) < 2:
            raise ConfigError("players", "fairness metrics need at least two players")
        players = []
        for i, p in enumerate(raw_players):
            where = f"players[{i}]"
            if not isinstance(p, dict):
                raise ConfigError(where, "expected a mapping")
            _no_extra(p, {"id", "abr", "abr_params", "theta", "model", "max_buffer_s", "initial_buffer_s"}, where)
            pc = PlayerConfig(
                id=_take(p, "id", where, str, required=True),
                abr=_take(p, "abr", where, str, required=True),
                abr_params=dict(_take(p, "abr_params", where, dict, {})),
                theta=_take(p, "theta", where, float, DEFAULT_THETA),
                model=p.get("model") if p.get("model") is None else _take(p, "model", where, str),
                max_buffer_s=_take(p, "max_buffer_s", where, float, 30.0),
                initial_buffer_s=_take(p, "initial_buffer_s", where, float, 0.0),
            )
            try:
                AbrConfig(AbrKind(pc.abr), pc.abr_params)
                PlayerSpec(pc.id, AbrConfig(AbrKind.BBA), pc.theta, 1.0, pc.max_buffer_s, pc.initial_buffer_s)
            except (CascadeQoeError, ValueError) as exc:
                raise ConfigError(where, str(exc)) from None
            players.append(pc)
        ids = [p.id for p in players]
        if len(set(ids)) != len(ids):
            raise ConfigError("players", "player ids must be unique")

        q = _take(d, "qoe", "", dict, {})
        _no_extra(q, {"alpha", "beta", "lam"}, "qoe")
        try:
            qoe = QoeParams(
                _take(q, "alpha", "qoe", float, 0.1), _take(q, "beta", "qoe", float, 0.1), _take(q, "lam", "qoe", float, 0.5)
            )
        except CascadeQoeError as exc:
            raise ConfigError("qoe", str(exc)) from None

        o = _take(d, "objective", "", dict, {})
        _no_extra(o, {"gamma", "etas"}, "objective")
        gamma = _take(o, "gamma", "objective", float, 0.75)
        etas = tuple(float(e) for e in (_take(o, "etas", "objective", list, []) or []))
        try:
            ObjectiveConfig(gamma, etas).etas_for(len(players))
        except CascadeQoeError as exc:
            raise ConfigError("objective", str(exc)) from None

        c = _take(d, "controller", "", dict, {})
        _no_extra(c, {"t_p", "buffer_gain", "solver", "predictor"}, "controller")
        t_p = _take(c, "t_p", "controller", int, 4)
        if t_p < 1:
            raise ConfigError("controller.t_p", "must be >= 1")
        buffer_gain = _take(c, "buffer_gain", "controller", float, 0.02)
        if not 0 < buffer_gain <= 1:
            raise ConfigError("controller.buffer_gain", "must be in (0, 1]")
        sd = _take(c, "solver", "controller", dict, {})
        _no_extra(sd, {"max_iters", "step_size_init", "fd_epsilon", "tol", "restarts", "polish_iters", "scan_points"}, "controller.solver")
        base = SolverConfig()
        try:
            solver = SolverConfig(
                max_iters=_take(sd, "max_iters", "controller.solver", int, base.max_iters),
                step_size_init=_take(sd, "step_size_init", "controller.solver", float, base.step_size_init),
                fd_epsilon=_take(sd, "fd_epsilon", "controller.solver", float, base.fd_epsilon),
                tol=_take(sd, "tol", "controller.solver", float, base.tol),
                restarts=_take(sd, "restarts", "controller.solver", int, base.restarts),
                polish_iters=_take(sd, "polish_iters", "controller.solver", int, base.polish_iters),
                scan_points=_take(sd, "scan_points", "controller.solver", int, base.scan_points),
                seed=seed,
            )
        except CascadeQoeError as exc:
            raise ConfigError("controller.solver", str(exc)) from None
        pd_ = _take(c, "predictor", "controller", dict, {})
        _no_extra(pd_, {"kind", "noise_fraction", "history_len"}, "controller.predictor")
        try:
            predictor = PredictorConfig(
                kind=_take(pd_, "kind", "controller.predictor", str, "oracle"),
                noise_fraction=_take(pd_, "noise_fraction", "controller.predictor", float, 0.0),
                history_len=_take(pd_, "history_len", "controller.predictor", int, 5),
                rng_seed=seed,
            )
        except (CascadeQoeError, ValueError) as exc:
            raise ConfigError("controller.predictor", str(exc)) from None

        nd = _take(d, "estimation_noise", "", dict, {})
        _no_extra(nd, {"enabled", "bitrate_fraction", "buffer_fraction"}, "estimation_noise")
        noise = NoiseConfig(
            _take(nd, "enabled", "estimation_noise", bool, False),
            _take(nd, "bitrate_fraction", "estimation_noise", float, 0.04),
            _take(nd, "buffer_fraction", "estimation_noise", float, 0.18),
        )
        try:
            EstimationNoise(noise.bitrate_fraction, noise.buffer_fraction)
        except CascadeQoeError as exc:
            raise ConfigError("estimation_noise", str(exc)) from None

        if "cane" in allocators:
            for i, p in enumerate(players):
                if not p.model:
                    raise ConfigError(f"players[{i}].model", "CANE needs a fitted model for every player")

        return cls(
            scenario=scenario,
            players=players,
            traces=list(traces),
            allocators=allocators,
            qoe=qoe,
            gamma=gamma,
            etas=etas,
            t_p=t_p,
            buffer_gain=buffer_gain,
            solver=solver,
            predictor=predictor,
            noise=noise,
            output_dir=_take(d, "output_dir", "", str, "results"),
            seed=seed,
            steps=steps,
            delta_t_s=delta_t,
            ladder=ladder,
            base_dir=str(base_dir),
        )

    def replace(self, **changes):
        """Copy with fields changed; the solver and predictor seeds follow ``seed``."""
        new = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(new, k, v)
        return ExperimentConfig.from_dict(new.to_dict(), new.base_dir)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML in {path}: {exc}") from None
    return ExperimentConfig.from_dict(data, base_dir=path.parent)


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


# ---------------------------------------------------------------- running


def _player_specs(cfg):
    etas = cfg.etas_vector()
    return [
        PlayerSpec(
            p.id,
            AbrConfig(AbrKind(p.abr), p.abr_params, rng_seed=cfg.seed, name=p.id),
            theta=p.theta,
            eta=float(e),
            max_buffer_s=p.max_buffer_s,
            initial_buffer_s=p.initial_buffer_s,
        )
        for p, e in zip(cfg.players, etas)
    ]


def _noise_seed(seed, trace_index):
    # one stream per trace, shared by every allocator (paired comparison)
    return int(np.random.SeedSequence([seed, trace_index]).generate_state(1, dtype=np.uint64)[0])


def _make_allocator(cfg, name, models):
    if name == "pure_client_side":
        return ContentionAllocator()
    if name == "uniform_shaping":
        return UniformAllocator()
    return CaneAllocator(
        ControllerConfig(
            t_p=cfg.t_p, gamma=cfg.gamma, solver=cfg.solver, models=models, predictor=cfg.predictor,
            buffer_gain=cfg.buffer_gain,
        )
    )


def _run_session_job(job):
    cfg_dict, base_dir, trace_path, trace_index, allocator = job
    cfg = ExperimentConfig.from_dict(cfg_dict, base_dir)
    trace = load_trace(trace_path)
    models = None
    if allocator == "cane":
        models = [load_model(resolve_path(p.model, cfg.base_dir)) for p in cfg.players]
    noise = None
    if cfg.noise.enabled:
        noise = EstimationNoise(cfg.noise.bitrate_fraction, cfg.noise.buffer_fraction, _noise_seed(cfg.seed, trace_index))
    return run_session(
        _player_specs(cfg),
        trace,
        _make_allocator(cfg, allocator, models),
        cfg.qoe,
        cfg.objective(),
        delta_t_s=cfg.delta_t_s,
        estimation_noise=noise,
        ladder=cfg.ladder,
        steps=cfg.steps,
    )


def check_inputs(cfg):
    """Resolve traces and model files up front; nothing runs if one is missing."""
    paths = expand_trace_paths(cfg.traces, cfg.base_dir)
    names = [p.stem for p in paths]
    if len(set(names)) != len(names):
        raise ConfigError("traces", "trace file names must be unique")
    if "cane" in cfg.allocators:
        for i, p in enumerate(cfg.players):
            mp = resolve_path(p.model, cfg.base_dir)
            if not mp.is_file():
                raise ConfigError(f"players[{i}].model", f"model file {mp} not found")
    return paths


@dataclass
class SummaryTable:
    """Medians and maxima over traces, plus percent gains of CANE over each baseline.

    Gains are positive when CANE is better: ``(C - B) / |B|`` for welfare,
    ``(B - C) / |B|`` for the lower-is-better metrics, both times 100.
    """

    scenario: str
    stats: dict  # (allocator, metric) -> (median, max)
    gains: dict  # (baseline, metric) -> (median, max)
    per_trace: dict  # (allocator, metric) -> array over traces
    per_trace_gain: dict  # (baseline, metric) -> array over traces

    def median(self, allocator, metric):
        return self.stats[(allocator, metric)][0]

    def gain(self, baseline, metric):
        return self.gains[(baseline, metric)][0]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "kind", "allocator", "metric", "median", "max"])
        for (alloc, metric), (med, mx) in self.stats.items():
            w.writerow([self.scenario, "metric", alloc, metric, _fmt(med), _fmt(mx)])
        for (base, metric), (med, mx) in self.gains.items():
            w.writerow([self.scenario, "gain_pct", f"cane_vs_{base}", metric, _fmt(med), _fmt(mx)])
        return buf.getvalue()


def percent_gain(metric, cane, base):
    """Elementwise percent gain of ``cane`` over ``base`` (positive = CANE better)."""
    cane = np.asarray(cane, dtype=float)
    base = np.asarray(base, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        diff = cane - base if _HIGHER_IS_BETTER[metric] else base - cane
        return np.where(base != 0, diff / np.abs(base) * 100.0, np.nan)


def summarize(scenario, logs, trace_names, allocators):
    per_trace = {}
    stats = {}
    for a in allocators:
        rows = [logs[(t, a)].summary() for t in trace_names]
        for m in METRICS:
            vals = np.array([r[m] for r in rows])
            per_trace[(a, m)] = vals
            stats[(a, m)] = (float(np.median(vals)), float(np.max(vals)))
    gains, per_gain = {}, {}
    if "cane" in allocators:
        for base in allocators:
            if base == "cane":
                continue
            for m in METRICS:
                g = percent_gain(m, per_trace[("cane", m)], per_trace[(base, m)])
                per_gain[(base, m)] = g
                finite = g[np.isfinite(g)]
                gains[(base, m)] = (
                    (float(np.median(finite)), float(np.max(finite))) if finite.size else (math.nan, math.nan)
                )
    return SummaryTable(scenario, stats, gains, per_trace, per_gain)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    summary: SummaryTable
    logs: dict  # (trace name, allocator) -> SessionLog
    trace_names: list
    files: list

    def solve_times(self):
        """Per-step CANE solve times in seconds, pooled over sessions."""
        out = []
        for t in self.trace_names:
            lg = self.logs.get((t, "cane"))
            if lg is not None:
                out.extend(d["solve_time_s"] for d in lg.diagnostics)
        return np.array(out)


def _fmt(x):
    return "nan" if not math.isfinite(x) else f"{x:.10g}"


def emit_csv(log_, path):
    """Per-step, per-player session records; one header line plus steps x players rows."""
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SESSION_HEADER)
            for t in range(log_.n_steps):
                for i, pid in enumerate(log_.player_ids):
                    w.writerow(
                        [
                            t,
                            pid,
                            f"{log_.allocation[t, i]:.6f}",
                            f"{log_.bitrate[t, i]:.6f}",
                            f"{log_.buffer[t, i]:.6f}",
                            f"{log_.qoe[t, i]:.12f}",
                        ]
                    )
    except OSError as exc:
        raise CascadeQoeError(f"cannot write {path}: {exc}") from exc


def cdf_points(values):
    """Sorted values with empirical CDF fractions ``k / n``."""
    x = np.sort(np.asarray(values, dtype=float))
    return x, np.arange(1, x.size + 1) / x.size if x.size else np.zeros(0)


def emit_cdf(values, path):
    """``value,fraction`` lines; an empty input writes only the header."""
    path = Path(path)
    vals = [v for v in values if math.isfinite(v)]
    if len(vals) != len(values):
        log.warning("%s: dropped %d non-finite values", path.name, len(values) - len(vals))
    if not vals:
        log.warning("%s: no values, writing header only", path.name)
    x, frac = cdf_points(vals)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("value,fraction\n")
            for v, f in zip(x, frac):
                fh.write(f"{v:.10g},{f:.4f}\n")
    except OSError as exc:
        raise CascadeQoeError(f"cannot write {path}: {exc}") from exc


def read_session_csv(path):
    """Load a session CSV back into per-player mean QoE (used for consistency checks)."""
    qoe = {}
    with open(path, encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            qoe.setdefault(row["player_id"], []).append(float(row["qoe"]))
    return {k: float(np.mean(v)) for k, v in qoe.items()}


def run_experiment(cfg, out_dir=None, workers=1, write=True):
    """Run every (trace, allocator) pair and write outputs under ``out_dir``.

    Sessions may run in worker processes; files are written afterwards by
    this process in a fixed order.
    """
    trace_paths = check_inputs(cfg)
    trace_names = [p.stem for p in trace_paths]
    cfg_dict = cfg.to_dict()
    jobs = [
        (cfg_dict, cfg.base_dir, str(p), k, a) for k, p in enumerate(trace_paths) for a in cfg.allocators
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_session_job, jobs))
    else:
        results = [_run_session_job(j) for j in jobs]
    logs = {(trace_names[j[3]], j[4]): r for j, r in zip(jobs, results)}
    summary = summarize(cfg.scenario, logs, trace_names, cfg.allocators)

    files = []
    if write:
        out = Path(out_dir if out_dir is not None else resolve_path(cfg.output_dir, cfg.base_dir))
        (out / "sessions").mkdir(parents=True, exist_ok=True)
        (out / "cdf").mkdir(parents=True, exist_ok=True)
        for t in trace_names:
            for a in cfg.allocators:
                p = out / "sessions" / f"{t}__{a}.csv"
                emit_csv(logs[(t, a)], p)
                files.append(p)
        for (a, m), vals in summary.per_trace.items():
            p = out / "cdf" / f"{m}__{a}.csv"
            emit_cdf(list(vals), p)
            files.append(p)
        for (b, m), vals in summary.per_trace_gain.items():
            p = out / "cdf" / f"gain_{m}__cane_vs_{b}.csv"
            emit_cdf(list(vals), p)
            files.append(p)
        p = out / "summary.csv"
        p.write_text(summary.to_csv(), encoding="utf-8")
        files.append(p)
        p = out / "config.yaml"
        p.write_text(dump_config(cfg), encoding="utf-8")
        files.append(p)
    return ExperimentResult(cfg, summary, logs, trace_names, files)


SWEEP_PARAMS = ("gamma", "t_p")


def sweep(cfg, parameter, values, out_dir=None, workers=1):
    """One full experiment per value with shared seeds.

    Writes ``sweep.csv`` (median weighted sum index per allocator and the
    CANE gain over each baseline) and ``sweep_timing.csv`` (wall-clock solve
    times, which naturally differ between runs). Returns the rows of both.
    """
    if parameter not in SWEEP_PARAMS:
        raise ConfigError("param", f"must be one of {SWEEP_PARAMS}")
    if not values:
        raise ConfigError("values", "need at least one value")
    out = Path(out_dir if out_dir is not None else resolve_path(cfg.output_dir, cfg.base_dir))
    rows, timing = [], []
    for v in values:
        try:
            sub = cfg.replace(**{parameter: type(getattr(cfg, parameter))(v)})
        except ConfigError as exc:
            raise ConfigError(f"values[{v}]", str(exc)) from None
        res = run_experiment(sub, out / f"{parameter}_{v}", workers=workers)
        row = {parameter: v}
        for a in cfg.allocators:
            row[f"wsi_{a}"] = res.summary.median(a, "weighted_sum_index")
        for (b, m), (med, _) in res.summary.gains.items():
            if m == "weighted_sum_index":
                row[f"wsi_gain_pct_vs_{b}"] = med
        rows.append(row)
        st = res.solve_times()
        timing.append(
            {
                parameter: v,
                "mean_solve_s": float(st.mean()) if st.size else math.nan,
                "median_solve_s": float(np.median(st)) if st.size else math.nan,
                "p95_solve_s": float(np.percentile(st, 95)) if st.size else math.nan,
            }
        )
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "sweep.csv", rows)
    _write_rows(out / "sweep_timing.csv", timing)
    return rows, timing


def _write_rows(path, rows):
    keys = list(rows[0]) if rows else []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(r[k]) if isinstance(r[k], float) else r[k] for k in keys])


# ---------------------------------------------------------------- offline fitting


@dataclass
class FitConfig:
    abrs: list  # of (name, kind, params)
    traces: list
    t_b: int = 3
    t_w: int = 3
    degree: int = 5
    ridge: float = 1e-6
    train_fraction: float = 0.8
    seed: int = 0
    output_dir: str = "models"
    max_buffer_s: float = 30.0
    base_dir: str = "."

    @classmethod
    def from_dict(cls, d, base_dir="."):
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a mapping")
        _no_extra(
            d,
            {"abrs", "traces", "t_b", "t_w", "degree", "ridge", "train_fraction", "seed", "output_dir", "max_buffer_s"},
            "",
        )
        abrs = []
        for i, a in enumerate(_take(d, "abrs", "", list, required=True)):
            where = f"abrs[{i}]"
            if not isinstance(a, dict):
                raise ConfigError(where, "expected a mapping")
            _no_extra(a, {"name", "kind", "params"}, where)
            name = _take(a, "name", where, str, required=True)
            kind = _take(a, "kind", where, str, required=True)
            params = dict(_take(a, "params", where, dict, {}))
            try:
                AbrConfig(AbrKind(kind), params, name=name)
            except (CascadeQoeError, ValueError) as exc:
                raise ConfigError(where, str(exc)) from None
            abrs.append((name, kind, params))
        if not abrs:
            raise ConfigError("abrs", "need at least one ABR")
        traces = _take(d, "traces", "", list, required=True)
        cfg = cls(
            abrs=abrs,
            traces=traces,
            t_b=_take(d, "t_b", "", int, 3),
            t_w=_take(d, "t_w", "", int, 3),
            degree=_take(d, "degree", "", int, 5),
            ridge=_take(d, "ridge", "", float, 1e-6),
            train_fraction=_take(d, "train_fraction", "", float, 0.8),
            seed=_take(d, "seed", "", int, 0),
            output_dir=_take(d, "output_dir", "", str, "models"),
            max_buffer_s=_take(d, "max_buffer_s", "", float, 30.0),
            base_dir=str(base_dir),
        )
        if cfg.t_b < 0 or cfg.t_w < 0 or cfg.degree < 1 or cfg.ridge < 0:
            raise ConfigError("<root>", "need t_b, t_w >= 0, degree >= 1 and ridge >= 0")
        if not (0 < cfg.train_fraction < 1):
            raise ConfigError("train_fraction", "must be in (0, 1)")
        return cfg


def load_fit_config(path):
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    return FitConfig.from_dict(data, base_dir=path.parent)


def fit_models(cfg, out_dir=None):
    """Generate datasets, fit one surrogate per ABR and write models plus an accuracy table."""
    paths = expand_trace_paths(cfg.traces, cfg.base_dir)
    traces = [load_trace(p) for p in paths]
    out = Path(out_dir if out_dir is not None else resolve_path(cfg.output_dir, cfg.base_dir))
    out.mkdir(parents=True, exist_ok=True)
    report = {}
    for name, kind, params in cfg.abrs:
        abr = AbrConfig(AbrKind(kind), params, rng_seed=cfg.seed, name=name)
        data = generate_dataset(abr, traces, t_b=cfg.t_b, t_w=cfg.t_w, max_buffer_s=cfg.max_buffer_s, seed=cfg.seed)
        train, test = data.split_by_session(cfg.train_fraction, cfg.seed)
        model = fit_poly_model(train, cfg.t_b, cfg.t_w, cfg.degree, cfg.ridge, abr_id=name)
        acc = evaluate_accuracy(model, test)
        save_model(model, out / f"{name}.json")
        report[name] = {"accuracy": acc, "train_rows": len(train), "test_rows": len(test)}
        log.info("fitted %s: held-out accuracy %.3f", name, acc)
    _write_rows(
        out / "accuracy.csv",
        [{"abr": k, "accuracy": v["accuracy"], "train_rows": v["train_rows"], "test_rows": v["test_rows"]}
         for k, v in report.items()],
    )
    return report
