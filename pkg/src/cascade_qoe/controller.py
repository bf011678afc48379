"""Network-side bandwidth allocation: receding-horizon controller and baselines.

At every step the controller predicts the bottleneck capacity over the
next ``T_p + 1`` steps, rolls candidate per-player allocations through the
fitted bitrate surrogates and the fluid buffer model, and keeps the plan
with the lowest efficiency/fairness cost. Only the first step is applied.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .blackbox import PolyModel, _flat_plan
from .errors import HistoryLengthMismatch, InvalidParams, LengthMismatch, SolverBudgetExceeded
from .qoe import ObjectiveConfig, pairwise_unfairness, social_welfare, weighted_objective
from .simulator import FULL_BUFFER_EPS, Allocator, PlayerState, buffer_step
from .traces import PredictorConfig, predict_horizon


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 200
    step_size_init: float = 0.25  # first step, as a fraction of the mean per-player share
    fd_epsilon: float = 1.0  # kbps
    tol: float = 1e-6
    restarts: int = 3
    seed: int = 0
    polish_iters: int = 60
    scan_points: int = 250  # splits per step for the two-step lattice scan; 0 disables

    def __post_init__(self):
        if self.max_iters < 0:
            raise InvalidParams("max_iters must be >= 0")
        if self.tol <= 0 or self.fd_epsilon <= 0 or self.step_size_init <= 0:
            raise InvalidParams("tol, fd_epsilon and step_size_init must be > 0")
        if self.restarts < 1:
            raise InvalidParams("restarts must be >= 1")
        if self.polish_iters < 0 or self.scan_points < 0:
            raise InvalidParams("polish_iters and scan_points must be >= 0")


@dataclass
class ControllerConfig:
    t_p: int = 4
    gamma: float = 0.75
    solver: SolverConfig = field(default_factory=SolverConfig)
    models: Sequence[PolyModel] = ()
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    buffer_gain: float = 0.02  # weight of a fresh buffer reading against the model prediction

    def __post_init__(self):
        if self.t_p < 1:
            raise InvalidParams("t_p must be >= 1")
        if not (0 <= self.gamma <= 1):
            raise InvalidParams("gamma must be in [0, 1]")
        if not (0 < self.buffer_gain <= 1):
            raise InvalidParams("buffer_gain must be in (0, 1]")


def uniform_allocator(n, capacity_kbps):
    """Equal split whose entries sum to exactly ``capacity_kbps``."""
    if n < 1 or capacity_kbps <= 0:
        raise InvalidParams("need n >= 1 and capacity > 0")
    w = np.full(n, capacity_kbps / n)
    w[-1] = capacity_kbps - w[:-1].sum()
    return w


def project_feasible(raw, capacities):
    """Row-wise Euclidean projection onto ``{w >= 0, sum(w) = W(k)}``.

    Sort-based threshold search, vectorised over the horizon.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    cap = np.asarray(capacities, dtype=float).reshape(-1)
    if cap.shape[0] != raw.shape[0]:
        raise LengthMismatch(f"{raw.shape[0]} plan rows but {cap.shape[0]} capacities")
    if np.any(cap <= 0):
        raise InvalidParams("capacities must be > 0")
    n = raw.shape[1]
    u = -np.sort(-raw, axis=1)
    css = np.cumsum(u, axis=1) - cap[:, None]
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(raw.shape[0]), rho] / (rho + 1)
    return np.maximum(raw - tau[:, None], 0.0)


class HorizonProblem:
    """Rollout of candidate allocations for a fixed set of player states.

    Each player's horizon QoE depends only on its own allocation column, so
    candidates are evaluated per player and combined afterwards.
    """

    def __init__(self, states, models, qoe, thetas, etas, gamma, delta_t_s, t_p):
        n = len(states)
        if not (len(models) == len(thetas) == len(etas) == n):
            raise LengthMismatch("states, models, thetas and etas must have one entry per player")
        self.n = n
        self.t_p = int(t_p)
        self.qoe = qoe
        self.thetas = np.asarray(thetas, dtype=float)
        self.etas = np.asarray(etas, dtype=float)
        self.objective = ObjectiveConfig(gamma)
        self.delta_t_s = float(delta_t_s)
        self.b_max = np.array([s.max_buffer_s for s in states], dtype=float)
        self.r_prev = np.array([s.last_bitrate_kbps for s in states], dtype=float)
        self.groups = []
        by_shape = {}
        for i, (s, m) in enumerate(zip(states, models)):
            by_shape.setdefault((m.t_b, m.t_w, m.degree), []).append(i)
        for (t_b, t_w, degree), idx in by_shape.items():
            b_hist, w_hist = [], []
            for i in idx:
                bh = np.asarray(states[i].buffer_history, dtype=float)
                wh = np.asarray(states[i].bandwidth_history, dtype=float)
                if bh.size < t_b + 1 or wh.size < t_w:
                    raise HistoryLengthMismatch(
                        f"player {i}: model needs {t_b + 1} buffers and {t_w} past allocations"
                    )
                b_hist.append(bh[bh.size - (t_b + 1) :])
                w_hist.append(wh[wh.size - t_w :] if t_w else np.zeros(0))
            ms = [models[i] for i in idx]
            self.groups.append(
                {
                    "idx": np.array(idx),
                    "t_b": t_b,
                    "t_w": t_w,
                    "degree": degree,
                    "b_hist": np.array(b_hist, dtype=float),
                    "w_hist": np.array(w_hist, dtype=float).reshape(len(idx), t_w),
                    "offset": np.array([m.offset for m in ms]),
                    "scale": np.array([m.scale for m in ms]),
                    "coef": np.array([m.coefficients for m in ms]),
                    "lo": np.array([m.ladder.lowest for m in ms]),
                    "hi": np.array([m.ladder.highest for m in ms]),
                }
            )

    def player_utilities(self, cols):
        """Horizon-averaged QoE for candidate columns.

        ``cols`` has shape ``(n_players, n_candidates, t_p + 1)``; the
        result has shape ``(n_players, n_candidates)``.
        """
        cols = np.asarray(cols, dtype=float)
        n, m, h = cols.shape
        out = np.empty((n, m))
        q = self.qoe
        for g in self.groups:
            idx = g["idx"]
            parents, variables = _flat_plan(g["t_b"] + g["t_w"] + 3, g["degree"])
            out[idx] = _rollout(
                np.ascontiguousarray(cols[idx]),
                g["b_hist"],
                g["w_hist"],
                self.r_prev[idx],
                g["coef"],
                g["offset"],
                g["scale"],
                g["lo"],
                g["hi"],
                self.thetas[idx],
                self.b_max[idx],
                q.alpha,
                q.beta,
                q.lam,
                self.delta_t_s,
                parents,
                variables,
            )
        return out

    def cost(self, utilities):
        """Combined cost for utilities along the last axis (players)."""
        j_e = social_welfare(utilities)
        if self.n == 1:
            j_f = np.zeros_like(j_e)  # nobody to be unfair to
        else:
            j_f = pairwise_unfairness(utilities, self.etas)
        return weighted_objective(self.objective, j_e, j_f)

    def evaluate(self, plan):
        """Cost of one ``(t_p + 1, n)`` plan."""
        cols = np.asarray(plan, dtype=float).T[:, None, :]
        return float(self.cost(self.player_utilities(cols)[:, 0]))

    def probe(self, plan, delta):
        """Base utilities plus utilities with each entry moved by ``+/- delta``.

        Returns ``(u0, u_plus, u_minus)`` with ``u_plus[i, k]`` the utility of
        player ``i`` when ``plan[k, i]`` is increased by ``delta``.
        """
        h = self.t_p + 1
        base = np.asarray(plan, dtype=float).T  # (n, h)
        eye = np.eye(h) * delta
        cols = np.concatenate(
            [base[:, None, :], base[:, None, :] + eye[None], base[:, None, :] - eye[None]], axis=1
        )
        u = self.player_utilities(cols)
        return u[:, 0], u[:, 1 : 1 + h], u[:, 1 + h :]


@njit(cache=True)
def _rollout(cols, b_hist, w_hist, r_prev0, coef, offset, scale, lo, hi, theta, b_max,
             alpha, beta, lam, dt, parents, variables):
    """Compiled per-player rollout; mirrors the plant step by step.

    A player whose buffer is full does not download during that step.
    Candidates sit on the fast axis so the polynomial loop vectorises.
    """
    k, m, h = cols.shape
    t_b1 = b_hist.shape[1]
    t_w = w_hist.shape[1]
    n_in = t_b1 + t_w + 2
    n_feat = parents.shape[0]
    out = np.empty((k, m))
    x = np.empty((n_in, m))  # raw inputs: buffers, bandwidths, previous bitrate
    z = np.empty((n_in, m))
    feat = np.empty((n_feat, m))
    r = np.empty(m)
    v_prev = np.empty(m)
    total = np.empty(m)
    iw = t_b1 + t_w
    for p in range(k):
        c = coef[p]
        for j in range(m):
            for a in range(t_b1):
                x[a, j] = b_hist[p, a]
            for a in range(t_w):
                x[t_b1 + a, j] = w_hist[p, a]
            x[n_in - 1, j] = r_prev0[p]
            v_prev[j] = 1.0 - np.exp(-theta[p] * r_prev0[p])
            total[j] = 0.0
            feat[0, j] = 1.0
        for step in range(h):
            for j in range(m):
                b = x[t_b1 - 1, j]
                x[iw, j] = cols[p, j, step] if b < b_max[p] - FULL_BUFFER_EPS else 0.0
                for a in range(n_in):
                    z[a, j] = (x[a, j] - offset[p, a]) / scale[p, a]
                r[j] = c[0]
            if m == 1:
                # scalar accumulator; the array form stalls on store-to-load
                acc = c[0]
                for f in range(1, n_feat):
                    y = feat[parents[f], 0] * z[variables[f], 0]
                    feat[f, 0] = y
                    acc += c[f] * y
                r[0] = acc
            else:
                for f in range(1, n_feat):
                    pa = parents[f]
                    va = variables[f]
                    cf = c[f]
                    for j in range(m):
                        y = feat[pa, j] * z[va, j]
                        feat[f, j] = y
                        r[j] += cf * y
            for j in range(m):
                b = x[t_b1 - 1, j]
                w = x[iw, j]
                rj = min(max(r[j], lo[p]), hi[p])
                v = 1.0 - np.exp(-theta[p] * rj)
                total[j] += v - alpha * abs(v - v_prev[j]) - beta * np.exp(-lam * b)
                for a in range(t_b1 - 1):
                    x[a, j] = x[a + 1, j]
                x[t_b1 - 1, j] = min(max(b + (w / rj - 1.0) * dt, 0.0), b_max[p])
                for a in range(t_w):
                    x[t_b1 + a, j] = x[t_b1 + a + 1, j]
                x[n_in - 1, j] = rj
                v_prev[j] = v
        for j in range(m):
            out[p, j] = total[j] / (h - 1)
    return out


def rollout_objective(plan, states, models, qoe, thetas, etas, gamma, delta_t_s=1.0):
    """Cost of a feasible ``(T_p + 1) x N`` allocation plan."""
    plan = np.asarray(plan, dtype=float)
    problem = HorizonProblem(states, models, qoe, thetas, etas, gamma, delta_t_s, plan.shape[0] - 1)
    return problem.evaluate(plan)


@dataclass
class SolveInfo:
    j_plan: float
    j_uniform: float
    iterations: int = 0
    evaluations: int = 0
    best_trace: list = field(default_factory=list)


def _fd_gradient(problem, plan, eps):
    u0, up, um = problem.probe(plan, eps)
    n, h = up.shape
    # replace one player's utility at a time; others stay at the base value
    trial = np.broadcast_to(u0, (n, h, 2, n)).copy()
    rows = np.arange(n)
    trial[rows, :, 0, rows] = up
    trial[rows, :, 1, rows] = um
    j = problem.cost(trial)  # (n, h, 2)
    grad = (j[:, :, 0] - j[:, :, 1]) / (2 * eps)
    return float(problem.cost(u0)), grad.T  # grad as (h, n) like the plan


def _transfer_search(problem, plan, f, delta, tol):
    """Best single transfer of ``delta`` kbps between two players at one step."""
    u0, up, um = problem.probe(plan, delta)
    n, h = up.shape
    # trial[i, j, k]: player i gains delta at step k, player j loses it
    trial = np.broadcast_to(u0, (n, n, h, n)).copy()
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    trial[ii, jj, :, ii] = up[:, None, :].repeat(n, axis=1)
    trial[ii, jj, :, jj] = um[None, :, :].repeat(n, axis=0)
    j = problem.cost(trial)
    j[np.arange(n), np.arange(n), :] = np.inf
    j[:, plan.T < delta] = np.inf
    flat = int(np.argmin(j))
    i, jx, k = np.unravel_index(flat, j.shape)
    if not j[i, jx, k] < f - tol * 1e-3:
        return None, f
    new = plan.copy()
    new[k, i] += delta
    new[k, jx] -= delta
    return new, float(j[i, jx, k])


def _descend(problem, start, capacities, cfg, info):
    """Projected gradient descent with backtracking, then a transfer-search polish."""
    x = project_feasible(start, capacities)
    f = problem.evaluate(x)
    info.evaluations += 1
    share = float(np.mean(capacities)) / problem.n
    alpha = cfg.step_size_init * share
    alpha_min = cfg.fd_epsilon
    for _ in range(cfg.max_iters):
        f_here, g = _fd_gradient(problem, x, cfg.fd_epsilon)
        info.iterations += 1
        info.evaluations += 2 * g.size
        g = g - g.mean(axis=1, keepdims=True)
        gmax = np.max(np.abs(g))
        if gmax == 0:
            break
        d = g / gmax
        improved = False
        while alpha >= alpha_min:
            cand = project_feasible(x - alpha * d, capacities)
            fc = problem.evaluate(cand)
            info.evaluations += 1
            if fc < f:
                gain = f - fc
                x, f = cand, fc
                improved = True
                alpha *= 2.0
                break
            alpha *= 0.5
        if not improved or gain < cfg.tol:
            alpha = max(alpha, alpha_min)
            break
    delta = max(min(alpha, share / 4), alpha_min)
    for _ in range(cfg.polish_iters):
        new, fn = _transfer_search(problem, x, f, delta, cfg.tol)
        info.evaluations += 2 * x.size
        if new is None:
            delta *= 0.5
            if delta < alpha_min:
                break
            continue
        x, f = new, fn
    return x, f


MIN_LATTICE_CELLS = 10
# Longer plans are left to gradient descent: block scans there chase
# surrogate error (alternating splits between identical players).
MAX_SCAN_STEPS = 2


def _compositions(total, parts):
    """All non-negative integer vectors of length ``parts`` summing to ``total``."""
    out = []
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        edges = (-1,) + bars + (total + parts - 1,)
        out.append([edges[i + 1] - edges[i] - 1 for i in range(parts)])
    return np.array(out, dtype=np.int64)


def _scan_cells(n, budget, steps=1):
    """Finest resolution ``c`` whose splits of ``steps`` joint steps fit in ``budget``."""
    c = 0
    while math.comb(c + 1 + n - 1, n - 1) ** steps <= budget:
        c += 1
    return c


def _scan_block(problem, plan, j, capacities, ks, c, comps, info):
    """Best plan over all lattice splits of the steps ``ks``, others held fixed."""
    n, h = problem.n, problem.t_p + 1
    levels = np.stack(np.meshgrid(*[np.arange(c + 1)] * len(ks), indexing="ij"), -1).reshape(-1, len(ks))
    cols = np.broadcast_to(plan.T[:, None, :], (n, levels.shape[0], h)).copy()
    cols[:, :, ks] = levels * (capacities[ks] / c)
    u_cols = problem.player_utilities(cols)  # (n, (c + 1) ** len(ks))
    info.evaluations += cols.shape[0] * cols.shape[1]
    # a joint split picks one lattice column per player
    combos = np.stack(np.meshgrid(*[np.arange(len(comps))] * len(ks), indexing="ij"), -1).reshape(-1, len(ks))
    weights = (c + 1) ** np.arange(len(ks) - 1, -1, -1)
    col_idx = np.einsum("mkn,k->mn", comps[combos], weights)
    costs = problem.cost(u_cols[np.arange(n)[None, :], col_idx])
    best = int(np.argmin(costs))
    if costs[best] >= j - 1e-12:
        return plan, j, False
    plan = plan.copy()
    plan[ks] = comps[combos[best]] * (capacities[ks] / c)[:, None]
    return plan, float(costs[best]), True


def _step_scan(problem, capacities, start, budget, info, sweeps=4):
    """Exhaustive block-coordinate search over lattice splits of the capacity.

    A coarse joint pass over each pair of adjacent steps is followed by
    single-step rescans on a finer lattice until nothing moves. Each
    player's utility depends on its own column only, so a block costs
    ``n * (c + 1) ** steps`` rollouts. Runs for plans of at most
    ``MAX_SCAN_STEPS`` steps, where the pair pass covers the whole plan,
    and only when a single step has at least ``MIN_LATTICE_CELLS`` cells
    within ``budget`` splits. Returns ``(plan, cost)`` or ``None``.
    """
    n, h = problem.n, problem.t_p + 1
    c = _scan_cells(n, budget)
    if c < MIN_LATTICE_CELLS or h > MAX_SCAN_STEPS:
        return None
    capacities = np.asarray(capacities, dtype=float)
    plan = np.array(start, dtype=float)
    j = problem.evaluate(plan)
    c2 = _scan_cells(n, 4 * budget, steps=2)
    if c2 >= MIN_LATTICE_CELLS:
        comps2 = _compositions(c2, n)
        for k in range(h - 1):
            plan, j, _ = _scan_block(problem, plan, j, capacities, [k, k + 1], c2, comps2, info)
    comps = _compositions(c, n)
    for _ in range(sweeps):
        moved = False
        for k in range(h):
            plan, j, m = _scan_block(problem, plan, j, capacities, [k], c, comps, info)
            moved |= m
        if not moved:
            break
    return plan, j


def solve_allocation(
    cfg,
    states,
    w_pred,
    qoe,
    thetas,
    etas,
    models=None,
    delta_t_s=1.0,
    warm_start=None,
    rng_key=0,
):
    """Multi-start minimisation of the horizon cost over feasible plans.

    Starts from the uniform split, the warm start (if any),
    ``restarts - 1`` seeded random feasible plans and, for two-step plans
    with two or three players, the result of a lattice scan of
    ``scan_points`` splits per step. The uniform plan is always a candidate, so the result
    never costs more than it.
    Returns ``(plan, SolveInfo)``.
    """
    models = list(cfg.models if models is None else models)
    w_pred = np.asarray(w_pred, dtype=float)
    if w_pred.shape != (cfg.t_p + 1,):
        raise LengthMismatch(f"need {cfg.t_p + 1} predicted capacities, got {w_pred.shape}")
    n = len(states)
    solver = cfg.solver

    # solve in a canonical player order so relabelling players relabels the plan
    order = _canonical_order(states, models, thetas, etas)
    inv = np.argsort(order)
    states = [states[i] for i in order]
    models = [models[i] for i in order]
    thetas = np.asarray(thetas, dtype=float)[order]
    etas = np.asarray(etas, dtype=float)[order]

    try:
        problem = HorizonProblem(states, models, qoe, thetas, etas, cfg.gamma, delta_t_s, cfg.t_p)
        uniform = np.array([uniform_allocator(n, w) for w in w_pred])
        j_uniform = problem.evaluate(uniform)
    except (HistoryLengthMismatch, LengthMismatch):
        raise
    except (ValueError, FloatingPointError, ArithmeticError) as exc:
        raise SolverBudgetExceeded(f"uniform plan cannot be evaluated: {exc}") from exc

    info = SolveInfo(j_plan=j_uniform, j_uniform=j_uniform, evaluations=1)
    info.best_trace.append(j_uniform)
    if solver.max_iters == 0 or n == 1:
        return uniform[:, inv], info

    starts = [uniform]
    if warm_start is not None:
        starts.append(np.asarray(warm_start, dtype=float)[:, order])
    rng = np.random.default_rng([solver.seed, int(rng_key)])
    for _ in range(solver.restarts - 1):
        starts.append(rng.dirichlet(np.ones(n), size=cfg.t_p + 1) * w_pred[:, None])

    best, j_best = uniform, j_uniform
    if solver.scan_points:
        found = _step_scan(problem, w_pred, uniform, solver.scan_points, info)
        if found is not None:
            starts.append(found[0])
            if found[1] < j_best:
                best, j_best = found
    for start in starts:
        x, f = _descend(problem, start, w_pred, solver, info)
        if f < j_best:
            best, j_best = x, f
        info.best_trace.append(j_best)
    info.j_plan = j_best
    return best[:, inv], info


def _canonical_order(states, models, thetas, etas):
    keys = []
    for s, m, th, e in zip(states, models, thetas, etas):
        parts = [
            np.asarray(s.buffer_history, dtype=float),
            np.asarray(s.bandwidth_history, dtype=float),
            np.array([s.last_bitrate_kbps, s.max_buffer_s, th, e], dtype=float),
            m.coefficients,
            m.offset,
            m.scale,
        ]
        keys.append(b"".join(p.tobytes() for p in parts))
    return np.array(sorted(range(len(keys)), key=lambda i: keys[i]), dtype=int)


class UniformAllocator(Allocator):
    """Uniform traffic shaping: every player is capped at ``W / N``."""

    name = "uniform_shaping"

    def allocate(self, ctx):
        return uniform_allocator(len(ctx.specs), ctx.capacity_kbps)


class CaneAllocator(Allocator):
    """Receding-horizon allocator driven by per-player bitrate surrogates."""

    name = "cane"

    def __init__(self, config):
        self.config = config
        self._plan = None
        self._diag = []

    def reset(self, specs, trace, delta_t_s):
        if len(self.config.models) != len(specs):
            raise LengthMismatch(f"{len(self.config.models)} models for {len(specs)} players")
        self._plan = None
        self._diag = []
        self._b_est = None
        self._b_hist = None

    def _estimate_states(self, ctx):
        """Blend each reported buffer with a fluid-model prediction from the last step.

        The prediction uses the measured goodput of the last step and the
        reported bitrate snapped to the ladder, so it is exact whenever the
        previous estimate was. With exact reports the blend changes nothing.
        """
        states = ctx.states
        rates = np.array([m.ladder.nearest(s.last_bitrate_kbps) for m, s in zip(self.config.models, states)])
        seen = np.array([s.buffer_s for s in states])
        b_max = np.array([s.max_buffer_s for s in states])
        if self._b_est is None:
            est = seen
            hist = np.array([s.buffer_history for s in states], dtype=float).T
        else:
            # delivered traffic is measured exactly, so idleness needs no guess
            goodput = np.array([s.bandwidth_history[-1] for s in states])
            pred = buffer_step(self._b_est, goodput, rates, ctx.delta_t_s, b_max)
            # Readings are clipped to [0, B_max]. Keep one only if its mirror
            # about the prediction is also inside, so the truncation stays
            # symmetric and the blend unbiased near either bound.
            mirror = 2.0 * pred - seen
            inside = (np.minimum(seen, mirror) > 0.0) & (np.maximum(seen, mirror) < b_max)
            est = np.where(inside, pred + self.config.buffer_gain * (seen - pred), pred)
            hist = np.vstack([self._b_hist[1:], est])
        self._b_est, self._b_hist = est, hist
        return [
            PlayerState(
                buffer_s=float(est[i]),
                last_bitrate_kbps=float(rates[i]),
                buffer_history=hist[:, i].copy(),
                bandwidth_history=s.bandwidth_history,
                throughput_history=s.throughput_history,
                max_buffer_s=s.max_buffer_s,
            )
            for i, s in enumerate(states)
        ]

    @property
    def diagnostics(self):
        return self._diag

    def warm_start(self):
        """Previous plan shifted one step ahead, last step repeated."""
        if self._plan is None:
            return None
        return np.vstack([self._plan[1:], self._plan[-1:]])

    def allocate(self, ctx):
        cfg = self.config
        w_pred = predict_horizon(ctx.trace, cfg.predictor, ctx.step, cfg.t_p)
        w_pred[0] = ctx.capacity_kbps
        thetas = [s.theta for s in ctx.specs]
        etas = ctx.objective.etas_for(len(ctx.specs)) if ctx.objective.etas else [s.eta for s in ctx.specs]
        states = self._estimate_states(ctx)
        t0 = time.perf_counter()
        plan, info = solve_allocation(
            cfg,
            states,
            w_pred,
            ctx.qoe,
            thetas,
            etas,
            delta_t_s=ctx.delta_t_s,
            warm_start=self.warm_start(),
            rng_key=ctx.step,
        )
        elapsed = time.perf_counter() - t0
        self._plan = plan
        self._diag.append(
            {
                "step": ctx.step,
                "j_plan": info.j_plan,
                "j_uniform": info.j_uniform,
                "iterations": info.iterations,
                "evaluations": info.evaluations,
                "solve_time_s": elapsed,
            }
        )
        w = plan[0].copy()
        # the first row is applied, so make its sum exact
        w[np.argmax(w)] += ctx.capacity_kbps - w.sum()
        return w
