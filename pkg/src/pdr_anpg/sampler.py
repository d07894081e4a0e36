"""Monte-Carlo estimates of J_c and of the compatible-error gradient.

One call draws a geometric-horizon rollout from rho (giving J_c and the
terminal state s_hat), one rollout from s_hat for V, and one rollout from
(s_hat, a) for every action a. The expectations over a ~ pi(.|s_hat) that
form F_hat and H_hat are then exact finite sums over the actions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .cmdp import UtilityFn, check_generator, cumulative
from .exceptions import InvalidParameterError
from .policy import score_table


@dataclass(eq=False)
class GradSample:
    j_c_hat: float
    grad_hat: np.ndarray
    s_hat: int
    adv_hat: np.ndarray
    samples_used: int
    v_hat: float = float("nan")


@dataclass(eq=False)
class SamplerTables:
    """Per-(theta, lambda, tau) lookup tables shared by every draw."""

    pi: np.ndarray
    cum_pi: np.ndarray
    scores: np.ndarray
    util: np.ndarray

    @classmethod
    def build(cls, spec, params, lam, tau):
        if lam < 0:
            raise InvalidParameterError(f"lambda must be nonnegative, got {lam}")
        if tau < 0:
            raise InvalidParameterError(f"tau must be nonnegative, got {tau}")
        pi = params.prob_table()
        util = UtilityFn.regularized(lam, tau, params).table(spec)
        return cls(pi=pi, cum_pi=cumulative(pi), scores=score_table(params), util=util)


def _check_omega(omega, params):
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (params.dim,):
        raise InvalidParameterError(f"omega must have shape ({params.dim},), got {omega.shape}")
    return omega


def estimate(spec, params, omega, lam, tau, rng=None, tables=None):
    """One draw of (J_c_hat, grad_hat) at (theta, lambda, tau, omega)."""
    rng = check_generator(rng)
    omega = _check_omega(omega, params)
    t = SamplerTables.build(spec, params, lam, tau) if tables is None else tables
    adv = np.empty(spec.n_actions)
    j_c, s, v_hat, used = _kernels.estimate_core(spec.cum_transition, spec.cum_rho, t.cum_pi, spec.cost,
                                                 t.util, spec.log_gamma, rng, adv)
    sc = t.scores[s]
    pi_s = t.pi[s]
    fisher_omega = sc.T @ (pi_s * (sc @ omega))
    h_hat = sc.T @ (pi_s * adv)
    grad = fisher_omega - h_hat / (1.0 - spec.gamma)
    return GradSample(j_c_hat=float(j_c), grad_hat=grad, s_hat=int(s), adv_hat=adv,
                      samples_used=int(used), v_hat=float(v_hat))


def estimate_jc_only(spec, params, rng=None):
    """Only the J_c rollout from rho; returns (j_c_hat, samples_used)."""
    rng = check_generator(rng)
    cum_pi = cumulative(params.prob_table())
    total, _, used = _kernels.rollout_sum(spec.cum_transition, spec.cum_rho, cum_pi, spec.cost,
                                          spec.log_gamma, -1, -1, rng)
    return float(total), int(used)


@dataclass(eq=False)
class BatchEstimate:
    j_c_hat: np.ndarray
    grad_hat: np.ndarray
    s_hat: np.ndarray
    samples_used: np.ndarray

    def __len__(self):
        return len(self.j_c_hat)


def estimate_batch(spec, params, omega, lam, tau, n, rng=None):
    """``n`` independent draws from one stream, in the same order as ``n`` calls to :func:`estimate`."""
    if n < 1:
        raise InvalidParameterError("n must be positive")
    rng = check_generator(rng)
    omega = _check_omega(omega, params)
    t = SamplerTables.build(spec, params, lam, tau)
    j_c, grads, states, used = _kernels.estimate_many(
        spec.cum_transition, spec.cum_rho, t.cum_pi, spec.cost, t.util, t.pi, t.scores, omega,
        spec.log_gamma, 1.0 / (1.0 - spec.gamma), int(n), rng)
    return BatchEstimate(j_c_hat=j_c, grad_hat=grads, s_hat=states, samples_used=used)


def expected_samples_per_call(spec):
    """Mean transitions consumed by :func:`estimate`: (A + 2) / (1 - gamma)."""
    return (spec.n_actions + 2) / (1.0 - spec.gamma)
