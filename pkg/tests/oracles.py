"""Deliberately naive reference implementations used as test oracles.

Everything here is scalar Python with loops and `math`, written without
looking at the vectorised library code paths.
"""

import itertools
import math


def buffer_step(b, w, r, dt, b_max):
    nxt = b + (w / r - 1.0) * dt
    if nxt < 0:
        nxt = 0.0
    if nxt > b_max:
        nxt = b_max
    return nxt


def video_quality(theta, r):
    return 1.0 - math.exp(-theta * r)


def buffer_penalty(lam, b):
    return math.exp(-lam * b)


def instant_qoe(alpha, beta, lam, theta, r_now, r_prev, b):
    v = video_quality(theta, r_now)
    vp = video_quality(theta, r_prev)
    return v - alpha * abs(v - vp) - beta * buffer_penalty(lam, b)


def average_qoe(us):
    return sum(us) / (len(us) - 1)


def social_welfare(us):
    return sum(us) / len(us)


def pairwise_unfairness(us, etas):
    n = len(us)
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += abs(etas[i] * us[i] - etas[j] * us[j])
    return total / n


def weighted_objective(gamma, j_e, j_f):
    return -(1.0 - gamma) * j_e + gamma * j_f


def jain_unfairness(us):
    s = sum(us)
    sq = sum(u * u for u in us)
    if sq == 0:
        return 0.0
    return 1.0 - s * s / (len(us) * sq)


def simplex_projection(v, total, iters=200):
    """Projection onto {x >= 0, sum x = total} by bisection on the threshold."""
    lo = min(v) - total
    hi = max(v)
    for _ in range(iters):
        tau = 0.5 * (lo + hi)
        s = sum(max(x - tau, 0.0) for x in v)
        if s > total:
            lo = tau
        else:
            hi = tau
    tau = 0.5 * (lo + hi)
    return [max(x - tau, 0.0) for x in v]


def polynomial_value(model, row):
    """Evaluate a fitted surrogate by enumerating its monomials explicitly."""
    z = [(x - o) / s for x, o, s in zip(row, model.offset, model.scale)]
    n = len(z)
    total = 0.0
    k = 0
    for d in range(model.degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), d):
            term = 1.0
            for var in combo:
                term *= z[var]
            total += model.coefficients[k] * term
            k += 1
    return total


def rollout_cost(plan, states, models, alpha, beta, lam, thetas, etas, gamma, dt=1.0):
    """Per-player scalar rollout of a (T_p+1) x N plan, then the combined cost."""
    h = len(plan)
    n = len(states)
    utils = []
    for i in range(n):
        m = models[i]
        st = states[i]
        b_win = list(st.buffer_history[-(m.t_b + 1):])
        w_win = list(st.bandwidth_history[-m.t_w:]) if m.t_w else []
        r_prev = st.last_bitrate_kbps
        b = b_win[-1]
        us = []
        for k in range(h):
            w = plan[k][i] if b < st.max_buffer_s - 1e-9 else 0.0
            row = b_win + w_win + [w, r_prev]
            r = polynomial_value(m, row)
            r = min(max(r, m.ladder.lowest), m.ladder.highest)
            us.append(instant_qoe(alpha, beta, lam, thetas[i], r, r_prev, b))
            b = buffer_step(b, w, r, dt, st.max_buffer_s)
            b_win = b_win[1:] + [b]
            if m.t_w:
                w_win = w_win[1:] + [w]
            r_prev = r
        utils.append(average_qoe(us))
    j_e = social_welfare(utils)
    j_f = pairwise_unfairness(utils, etas)
    return weighted_objective(gamma, j_e, j_f)
