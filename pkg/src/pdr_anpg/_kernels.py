"""Compiled rollout and inner-loop kernels.

All randomness comes from the ``numpy.random.Generator`` passed in; numba
advances the same underlying bit generator, so a kernel call and the
equivalent pure-Python sequence of draws leave the stream in the same state.

Draw order for one rollout is fixed: horizon, then (if not given) the start
state, then (if not given) the first action, then per step the next state
followed by the next action.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def geometric_from_uniform(log_gamma, u):
    # Inverse CDF of P(T = j) = (1 - gamma) gamma^j: smallest j with 1 - gamma^(j+1) >= u.
    if log_gamma == -np.inf or u <= 0.0:
        return 0
    x = np.log1p(-u) / log_gamma
    j = int(np.ceil(x)) - 1
    return j if j > 0 else 0


@njit(cache=True)
def draw_index(cum, u):
    # cum[-1] is forced to exactly 1.0 by the caller, so u < 1 always lands.
    n = cum.shape[0]
    for i in range(n):
        if u < cum[i]:
            return i
    return n - 1


@njit(cache=True)
def rollout_sum(cum_p, cum_rho, cum_pi, table, log_gamma, s, a, rng):
    """Undiscounted utility sum over one geometric-horizon trajectory.

    ``s < 0`` draws the start state from rho, ``a < 0`` draws the first action
    from the policy. Returns (total, last_state, n_pairs) with n_pairs = T + 1.
    """
    horizon = geometric_from_uniform(log_gamma, rng.random())
    if s < 0:
        s = draw_index(cum_rho, rng.random())
    if a < 0:
        a = draw_index(cum_pi[s], rng.random())
    total = table[s, a]
    for _ in range(horizon):
        s = draw_index(cum_p[s, a], rng.random())
        a = draw_index(cum_pi[s], rng.random())
        total += table[s, a]
    return total, s, horizon + 1


@njit(cache=True)
def rollout_path(cum_p, cum_rho, cum_pi, log_gamma, s, a, horizon, rng):
    """Trajectory of exactly horizon + 1 pairs; a negative horizon draws it."""
    if horizon < 0:
        horizon = geometric_from_uniform(log_gamma, rng.random())
    if s < 0:
        s = draw_index(cum_rho, rng.random())
    if a < 0:
        a = draw_index(cum_pi[s], rng.random())
    states = np.empty(horizon + 1, dtype=np.int64)
    actions = np.empty(horizon + 1, dtype=np.int64)
    states[0] = s
    actions[0] = a
    for j in range(horizon):
        s = draw_index(cum_p[s, a], rng.random())
        a = draw_index(cum_pi[s], rng.random())
        states[j + 1] = s
        actions[j + 1] = a
    return states, actions


@njit(cache=True)
def estimate_core(cum_p, cum_rho, cum_pi, cost, util, log_gamma, rng, adv_out):
    """Rollout part of the sampling procedure.

    Writes the advantage estimates into ``adv_out`` and returns
    (j_c_hat, s_hat, v_hat, samples_used).
    """
    j_c, s_hat, used = rollout_sum(cum_p, cum_rho, cum_pi, cost, log_gamma, -1, -1, rng)
    v_hat, _, m = rollout_sum(cum_p, cum_rho, cum_pi, util, log_gamma, s_hat, -1, rng)
    used += m
    for a in range(adv_out.shape[0]):
        q_hat, _, m = rollout_sum(cum_p, cum_rho, cum_pi, util, log_gamma, s_hat, a, rng)
        adv_out[a] = q_hat - v_hat
        used += m
    return j_c, s_hat, v_hat, used


@njit(cache=True)
def estimate_many(cum_p, cum_rho, cum_pi, cost, util, pi, scores, omega, log_gamma,
                  inv_one_minus_gamma, n, rng):
    """n independent (j_c_hat, grad_hat, s_hat, samples) draws at a fixed omega."""
    n_actions = pi.shape[1]
    d = scores.shape[2]
    j_c = np.empty(n)
    grads = np.zeros((n, d))
    states = np.empty(n, dtype=np.int64)
    used = np.empty(n, dtype=np.int64)
    adv = np.empty(n_actions)
    for i in range(n):
        jc_i, s, _, m = estimate_core(cum_p, cum_rho, cum_pi, cost, util, log_gamma, rng, adv)
        j_c[i] = jc_i
        states[i] = s
        used[i] = m
        for a in range(n_actions):
            sc = scores[s, a]
            w = pi[s, a] * (np.dot(sc, omega) - inv_one_minus_gamma * adv[a])
            for k in range(d):
                grads[i, k] += w * sc[k]
    return j_c, grads, states, used


@njit(cache=True)
def asgd_stochastic(cum_p, cum_rho, cum_pi, cost, util, pi, scores, log_gamma,
                    inv_one_minus_gamma, alpha, beta, xi, delta, n_steps, rng):
    """Tail-averaged ASGD whose gradients come from fresh sampler draws.

    The gradient at y_h is sum_a pi(a|s) score(s,a) [score(s,a).y - A_hat(s,a)/(1-gamma)],
    i.e. F_hat y - H_hat / (1 - gamma) without forming F_hat.
    """
    n_actions = pi.shape[1]
    d = scores.shape[2]
    x = np.zeros(d)
    v = np.zeros(d)
    acc = np.zeros(d)
    g = np.zeros(d)
    adv = np.empty(n_actions)
    half = n_steps // 2
    used = 0
    for h in range(n_steps):
        y = alpha * x + (1.0 - alpha) * v
        _, s, _, m = estimate_core(cum_p, cum_rho, cum_pi, cost, util, log_gamma, rng, adv)
        used += m
        g[:] = 0.0
        for a in range(n_actions):
            sc = scores[s, a]
            w = pi[s, a] * (np.dot(sc, y) - inv_one_minus_gamma * adv[a])
            g += w * sc
        x = y - delta * g
        v = (beta * y + (1.0 - beta) * v) - xi * g
        if h + 1 > half:
            acc += x
    return acc * (2.0 / n_steps), used


@njit(cache=True)
def asgd_exact(fisher, b, alpha, beta, xi, delta, n_steps):
    """Tail-averaged ASGD with the exact gradient F y - b."""
    d = b.shape[0]
    x = np.zeros(d)
    v = np.zeros(d)
    acc = np.zeros(d)
    half = n_steps // 2
    for h in range(n_steps):
        y = alpha * x + (1.0 - alpha) * v
        g = fisher @ y - b
        x = y - delta * g
        v = (beta * y + (1.0 - beta) * v) - xi * g
        if h + 1 > half:
            acc += x
    return acc * (2.0 / n_steps)


@njit(cache=True)
def rollout_sums(cum_p, cum_rho, cum_pi, table, log_gamma, s, a, n, rng):
    """n independent :func:`rollout_sum` draws: (totals, last_states, n_pairs)."""
    totals = np.empty(n)
    last = np.empty(n, dtype=np.int64)
    pairs = np.empty(n, dtype=np.int64)
    for i in range(n):
        totals[i], last[i], pairs[i] = rollout_sum(cum_p, cum_rho, cum_pi, table, log_gamma, s, a, rng)
    return totals, last, pairs
