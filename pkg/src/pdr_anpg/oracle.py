"""Exact dynamic-programming oracle for finite CMDPs.

Everything here is deterministic and computed with dense linear algebra:
value functions and occupancy measures from direct solves, the constrained
optimum from the occupancy-measure linear program, and the regularized
saddle point from soft value iteration plus a one-dimensional dual solve.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, linprog
from scipy.special import logsumexp

from .cmdp import UtilityFn, policy_table, utility_table
from .exceptions import ConvergenceError, DomainError, InfeasibleError, InvalidParameterError
from .policy import PolicyParams, score_table, state_fishers

EIG_CUTOFF = 1e-10


@dataclass(eq=False)
class OracleReport:
    """Exact value tables of one (policy, utility) pair."""

    v: np.ndarray
    q: np.ndarray
    adv: np.ndarray
    occupancy_d: np.ndarray
    occupancy_nu: np.ndarray
    j_value: float

    def to_dict(self):
        return {
            "v": self.v.tolist(),
            "q": self.q.tolist(),
            "adv": self.adv.tolist(),
            "occupancy_d": self.occupancy_d.tolist(),
            "occupancy_nu": self.occupancy_nu.tolist(),
            "j_value": float(self.j_value),
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc):
        return cls(
            v=np.asarray(doc["v"], dtype=float),
            q=np.asarray(doc["q"], dtype=float),
            adv=np.asarray(doc["adv"], dtype=float),
            occupancy_d=np.asarray(doc["occupancy_d"], dtype=float),
            occupancy_nu=np.asarray(doc["occupancy_nu"], dtype=float),
            j_value=float(doc["j_value"]),
        )


def _pi(policy, spec):
    pi = policy_table(policy, spec)
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-10):
        raise InvalidParameterError("policy rows must be probability vectors")
    return pi


def state_transition(spec, pi):
    """``P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)``."""
    return np.einsum("sa,sat->st", pi, spec.transition)


def occupancy(spec, policy):
    """Normalized discounted state visitation ``d^pi``."""
    pi = _pi(policy, spec)
    p_pi = state_transition(spec, pi)
    d = np.linalg.solve((np.eye(spec.n_states) - spec.gamma * p_pi).T, (1.0 - spec.gamma) * spec.rho)
    return d / d.sum()


def policy_evaluation(spec, policy, g):
    """Solve ``(I - gamma P_pi) v = g_pi`` and derive q, advantages and occupancies."""
    pi = _pi(policy, spec)
    table = utility_table(g, spec)
    if not np.all(np.isfinite(table)):
        raise DomainError("utility is not finite; a regularized utility needs pi > 0")
    p_pi = state_transition(spec, pi)
    lhs = np.eye(spec.n_states) - spec.gamma * p_pi
    # Zero-probability actions contribute nothing to g_pi even if their utility is huge.
    g_pi = np.where(pi > 0, pi * table, 0.0).sum(axis=1)
    v = np.linalg.solve(lhs, g_pi)
    q = table + spec.gamma * spec.transition @ v
    d = np.linalg.solve(lhs.T, (1.0 - spec.gamma) * spec.rho)
    d = d / d.sum()
    return OracleReport(v=v, q=q, adv=q - v[:, None], occupancy_d=d,
                        occupancy_nu=d[:, None] * pi, j_value=float(spec.rho @ v))


def j_value(spec, policy, g):
    return policy_evaluation(spec, policy, g).j_value


def _neg_log_pi(pi):
    if np.any(pi <= 0):
        raise DomainError("entropy needs a strictly positive policy")
    return -np.log(pi)


def entropy(spec, policy):
    """Discounted entropy ``-(1/(1-gamma)) sum_s d(s) sum_a pi log pi``."""
    if isinstance(policy, PolicyParams):
        pi = policy.prob_table()
        psi = -policy.log_prob_table()
        if np.any(pi <= 0):
            raise DomainError("entropy needs a strictly positive policy")
    else:
        pi = _pi(policy, spec)
        psi = _neg_log_pi(pi)
    d = occupancy(spec, pi)
    return float((d * (pi * psi).sum(axis=1)).sum() / (1.0 - spec.gamma))


def lagrangian(spec, policy, lam, tau):
    """``J_{r + lam c} + tau (H(pi) + lam^2 / 2)``."""
    if lam < 0 or tau < 0:
        raise InvalidParameterError("lagrangian needs lam >= 0 and tau >= 0")
    val = j_value(spec, policy, UtilityFn.combined(lam))
    if tau > 0:
        val += tau * (entropy(spec, policy) + 0.5 * lam * lam)
    return float(val)


def regularized_report(spec, params, lam, tau):
    """Oracle report for ``g = r + lam c + tau psi_theta``."""
    return policy_evaluation(spec, params, UtilityFn.regularized(lam, tau, params))


def exact_lagrangian_gradient(spec, params, lam, tau, report=None, scores=None):
    """``(1/(1-gamma)) sum nu(s,a) A_g(s,a) score(s,a)`` with g the regularized utility."""
    report = regularized_report(spec, params, lam, tau) if report is None else report
    scores = score_table(params) if scores is None else scores
    weights = report.occupancy_nu * report.adv
    return np.einsum("sa,sad->d", weights, scores) / (1.0 - spec.gamma)


def exact_fisher(spec, params, d=None):
    """``F(theta) = sum_s d(s) F_s(theta)``."""
    d = occupancy(spec, params) if d is None else d
    return np.einsum("s,sij->ij", d, state_fishers(params))


def eig_solve(matrix, rhs, ridge=0.0):
    """``(F + ridge I)^{-1} rhs``, or the minimum-norm pseudoinverse solution when ridge = 0."""
    if ridge < 0:
        raise InvalidParameterError("ridge must be nonnegative")
    w, vecs = np.linalg.eigh(matrix)
    if ridge > 0:
        return vecs @ ((vecs.T @ rhs) / (w + ridge))
    keep = w > EIG_CUTOFF * max(w.max(), 0.0)
    coef = np.zeros_like(w)
    coef[keep] = (vecs.T @ rhs)[keep] / w[keep]
    return vecs @ coef


def restricted_min_eigenvalue(matrix):
    """Smallest eigenvalue on the range of a PSD matrix (cutoff relative to the largest)."""
    w = np.linalg.eigvalsh(matrix)
    top = w.max()
    if top <= 0:
        return 0.0
    return float(w[w > EIG_CUTOFF * top].min())


def exact_npg(spec, params, lam, tau, ridge=0.0):
    """Natural policy gradient ``F^dagger grad L`` (ridge-regularized when ridge > 0)."""
    report = regularized_report(spec, params, lam, tau)
    grad = exact_lagrangian_gradient(spec, params, lam, tau, report=report)
    return eig_solve(exact_fisher(spec, params, d=report.occupancy_d), grad, ridge)


def error_function(spec, params, omega, lam, tau, nu=None):
    """Compatible-approximation error ``(1/2) E_nu[(omega . score - A/(1-gamma))^2]``.

    ``nu`` defaults to the policy's own state-action occupancy.
    """
    report = regularized_report(spec, params, lam, tau)
    nu = report.occupancy_nu if nu is None else np.asarray(nu, dtype=float)
    resid = score_table(params) @ np.asarray(omega, dtype=float) - report.adv / (1.0 - spec.gamma)
    return float(0.5 * (nu * resid ** 2).sum())


def error_gradient(spec, params, omega, lam, tau):
    """Gradient of :func:`error_function` in omega: ``F omega - H / (1 - gamma)``."""
    report = regularized_report(spec, params, lam, tau)
    fisher = exact_fisher(spec, params, d=report.occupancy_d)
    grad = exact_lagrangian_gradient(spec, params, lam, tau, report=report)
    return fisher @ np.asarray(omega, dtype=float) - grad


def averaged_advantage_sq(spec, params, lam, tau):
    """Per-state ``E_{a ~ pi(s)} |A_g(s, a)|^2`` for the regularized utility."""
    report = regularized_report(spec, params, lam, tau)
    return (params.prob_table() * report.adv ** 2).sum(axis=1)


def l_squared(gamma, n_actions, lam, tau):
    """Averaged-advantage bound ``8(1+lam)^2/(1-gamma)^2 + tau^2 [32 A/e^2 + 12 log(A)^2/(1-gamma)^2]``."""
    one = 1.0 - gamma
    return (8.0 * (1.0 + lam) ** 2 / one ** 2
            + tau ** 2 * (32.0 * n_actions / math.e ** 2 + 12.0 * math.log(n_actions) ** 2 / one ** 2))


def sigma_squared(gamma, n_actions, lam, tau, G, mu_F):
    """Scaled noise variance of the gradient estimator."""
    one = 1.0 - gamma
    return (48.0 / one ** 4 * (1.0 + lam ** 2 + 4.0 * n_actions * tau ** 2 / math.e ** 2)
            + 2.0 * G ** 4 * l_squared(gamma, n_actions, lam, tau) / (mu_F ** 2 * one ** 2))


# --------------------------------------------------------------------------- optimal control

def optimal_value(spec, g, tol=1e-13, max_iter=1_000_000):
    """Unconstrained optimum by value iteration; returns (v, greedy policy table)."""
    table = utility_table(g, spec)
    v = np.zeros(spec.n_states)
    for _ in range(max_iter):
        q = table + spec.gamma * spec.transition @ v
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) < tol:
            v = v_new
            break
        v = v_new
    else:
        raise ConvergenceError("value iteration did not converge")
    q = table + spec.gamma * spec.transition @ v
    pi = np.zeros_like(q)
    pi[np.arange(spec.n_states), q.argmax(axis=1)] = 1.0
    return v, pi


def _occupancy_lp(spec, objective, cost_constraint):
    n_s, n_a = spec.n_states, spec.n_actions
    a_eq = np.zeros((n_s, n_s * n_a))
    for s in range(n_s):
        a_eq[s, s * n_a:(s + 1) * n_a] = 1.0
    a_eq -= spec.gamma * spec.transition.reshape(n_s * n_a, n_s).T
    b_eq = (1.0 - spec.gamma) * spec.rho
    kwargs = {}
    if cost_constraint:
        kwargs = dict(A_ub=-spec.cost.reshape(1, -1), b_ub=np.zeros(1))
    res = linprog(-objective.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
                  **kwargs)
    return res


def _policy_from_occupancy(nu):
    mass = nu.sum(axis=1, keepdims=True)
    n_a = nu.shape[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = np.where(mass > 1e-14, nu / np.where(mass > 0, mass, 1.0), 1.0 / n_a)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum(axis=1, keepdims=True)


def max_constraint_value(spec):
    """Largest attainable J_c and a policy attaining it (the feasibility LP)."""
    res = _occupancy_lp(spec, spec.cost, cost_constraint=False)
    if res.status != 0:
        raise ConvergenceError(f"feasibility LP failed: {res.message}")
    nu = np.clip(res.x.reshape(spec.n_states, spec.n_actions), 0.0, None)
    return float(-res.fun / (1.0 - spec.gamma)), _policy_from_occupancy(nu)


def slater_margin(spec):
    """Declared ``c_slat`` if present, else the largest margin, capped at 1/(1-gamma)."""
    if spec.c_slat is not None:
        return float(spec.c_slat)
    best, _ = max_constraint_value(spec)
    if best <= 0:
        raise InfeasibleError(best)
    return min(best, 1.0 / (1.0 - spec.gamma))


@dataclass(eq=False)
class ConstrainedOptimum:
    policy: np.ndarray
    j_r_star: float
    lambda_star: float
    occupancy_nu: np.ndarray
    max_jc: float

    def __iter__(self):
        # Unpacks as (policy, j_r_star).
        return iter((self.policy, self.j_r_star))


def solve_constrained_optimum(spec):
    """``max J_r s.t. J_c >= 0`` through the occupancy-measure LP.

    Returns the recovered policy (uniform on unvisited states), the optimal
    value, and the LP multiplier of the cost constraint, which is the
    unregularized dual solution lambda*.
    """
    max_jc, _ = max_constraint_value(spec)
    if max_jc < 0:
        raise InfeasibleError(max_jc)
    res = _occupancy_lp(spec, spec.reward, cost_constraint=True)
    if res.status != 0:
        raise ConvergenceError(f"constrained LP failed: {res.message}")
    nu = np.clip(res.x.reshape(spec.n_states, spec.n_actions), 0.0, None)
    lam = max(0.0, -float(res.ineqlin.marginals[0]))
    return ConstrainedOptimum(policy=_policy_from_occupancy(nu),
                              j_r_star=float((nu * spec.reward).sum() / (1.0 - spec.gamma)),
                              lambda_star=lam, occupancy_nu=nu, max_jc=max_jc)


def soft_best_response(spec, lam, tau, tol=1e-13, max_iter=1_000_000):
    """Entropy-regularized optimal policy for ``r + lam c`` at temperature tau.

    Soft value iteration ``V(s) = tau log sum_a exp(Q(s,a)/tau)``; the policy is
    ``softmax(Q/tau)``. Returns (policy table, soft value).
    """
    if tau <= 0:
        raise InvalidParameterError("soft best response needs tau > 0")
    table = spec.reward + lam * spec.cost
    v = np.zeros(spec.n_states)
    for _ in range(max_iter):
        q = table + spec.gamma * spec.transition @ v
        v_new = tau * logsumexp(q / tau, axis=1)
        delta = np.max(np.abs(v_new - v))
        v = v_new
        if delta < tol * max(1.0, np.max(np.abs(v))):
            break
    else:
        raise ConvergenceError("soft value iteration did not converge", {"sup_change": float(delta)})
    q = table + spec.gamma * spec.transition @ v
    log_pi = q / tau - logsumexp(q / tau, axis=1, keepdims=True)
    return np.exp(log_pi), v


@dataclass(eq=False)
class SaddlePoint:
    pi_star_tau: np.ndarray
    lambda_star_tau: float
    lagrangian_value: float
    tau: float
    lambda_max: float

    @property
    def params(self):
        return PolicyParams.from_policy_table(self.pi_star_tau)


def solve_regularized_saddle(spec, tau, lambda_max):
    """Unique saddle point of the regularized Lagrangian over policies x [0, lambda_max].

    The dual function ``D(lam) = max_pi L_tau(pi, lam)`` is tau-strongly convex
    with derivative ``J_c(pi_lam) + tau lam`` where ``pi_lam`` is the soft best
    response. Its minimizer on the interval is found by bracketing that
    derivative; the primal solution is the best response at the minimizer.
    """
    if tau <= 0:
        raise InvalidParameterError("the regularized saddle point needs tau > 0")
    if lambda_max < 0:
        raise InvalidParameterError("lambda_max must be nonnegative")

    def slope(lam):
        pi, _ = soft_best_response(spec, lam, tau)
        return j_value(spec, pi, spec.cost) + tau * lam

    lo, hi = slope(0.0), slope(lambda_max)
    if lo >= 0:
        lam_star = 0.0
    elif hi <= 0:
        lam_star = float(lambda_max)
    else:
        lam_star = brentq(slope, 0.0, lambda_max, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    pi_star, _ = soft_best_response(spec, lam_star, tau)
    residual = abs(slope(lam_star)) if 0 < lam_star < lambda_max else 0.0
    if residual > 1e-8:
        raise ConvergenceError("dual stationarity not reached", {"dual_residual": residual})
    return SaddlePoint(pi_star_tau=pi_star, lambda_star_tau=float(lam_star),
                       lagrangian_value=lagrangian(spec, pi_star, lam_star, tau),
                       tau=float(tau), lambda_max=float(lambda_max))


def kl_to_saddle(spec, saddle, params, d_star=None):
    """``sum_s d^{pi*}(s) KL(pi*(.|s) || pi_theta(.|s))``."""
    pi_star = saddle.pi_star_tau
    d_star = occupancy(spec, pi_star) if d_star is None else d_star
    log_ratio = np.log(pi_star) - params.log_prob_table()
    return float((d_star * (pi_star * log_ratio).sum(axis=1)).sum())


def potential(spec, saddle, params, lam, d_star=None):
    """Lyapunov potential ``KL_k + (lambda*_tau - lam)^2 / 2`` at one iterate."""
    return kl_to_saddle(spec, saddle, params, d_star) + 0.5 * (saddle.lambda_star_tau - lam) ** 2
