"""Tail-averaged accelerated SGD for the compatible-approximation least squares.

The inner problem minimizes ``(1/2) omega^T F omega - omega^T b`` where
``b`` is the exact Lagrangian gradient; its gradient at ``y`` is ``F y - b``.
With exact gradients the recurrence is affine in ``(x, v)``, so the tail
average also has a closed form through a matrix power.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .cmdp import check_generator
from .exceptions import InvalidParameterError
from .oracle import exact_fisher, exact_lagrangian_gradient, regularized_report
from .sampler import SamplerTables


@dataclass(frozen=True)
class AsgdRates:
    alpha: float
    beta: float
    xi: float
    delta: float
    H: int

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise InvalidParameterError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not (0.0 <= self.beta <= 1.0):
            raise InvalidParameterError(f"beta must lie in [0, 1], got {self.beta}")
        if self.xi <= 0 or self.delta <= 0:
            raise InvalidParameterError("xi and delta must be positive")
        if int(self.H) != self.H or self.H < 2 or self.H % 2:
            raise InvalidParameterError(f"H must be an even integer >= 2, got {self.H}")
        object.__setattr__(self, "H", int(self.H))

    @classmethod
    def from_bounds(cls, G, mu_F, H):
        """Learning rates from the score bound G and the Fisher floor mu_F."""
        if G <= 0 or mu_F <= 0:
            raise InvalidParameterError("G and mu_F must be positive")
        g2 = G * G
        k = 3.0 * math.sqrt(5.0) * g2
        return cls(alpha=k / (mu_F + k), beta=mu_F / (9.0 * g2), xi=1.0 / k, delta=1.0 / (5.0 * g2),
                   H=even_ceil(H))

    def with_H(self, H):
        return replace(self, H=even_ceil(H))


def even_ceil(h):
    h = max(2, int(math.ceil(h)))
    return h + (h % 2)


def min_inner_steps(G, mu_F, dim, C_bar=4.0):
    """Smallest H the learning-rate analysis admits: ``max(1, C_bar G^2/mu_F log(sqrt(d) G^2/mu_F))``."""
    ratio = G * G / mu_F
    return max(1.0, C_bar * ratio * math.log(max(math.sqrt(dim) * ratio, 1.0)))


@dataclass(eq=False)
class AsgdState:
    x: np.ndarray
    v: np.ndarray
    y: np.ndarray
    z: np.ndarray
    h: int = 0

    @classmethod
    def initial(cls, dim):
        zero = np.zeros(dim)
        return cls(zero, zero.copy(), zero.copy(), zero.copy(), 0)


def query_point(state, rates):
    """``y_h = alpha x_h + (1 - alpha) v_h``: where the next gradient is evaluated."""
    return rates.alpha * state.x + (1.0 - rates.alpha) * state.v


def asgd_step(state, rates, grad):
    """One step given ``grad`` evaluated at :func:`query_point` of ``state``."""
    grad = np.asarray(grad, dtype=float)
    y = query_point(state, rates)
    x = y - rates.delta * grad
    z = rates.beta * y + (1.0 - rates.beta) * state.v
    v = z - rates.xi * grad
    return AsgdState(x=x, v=v, y=y, z=z, h=state.h + 1)


def run_steps(grad_fn, dim, rates):
    """Reference loop: H steps with ``grad_fn(y)`` and the tail average of x over (H/2, H]."""
    state = AsgdState.initial(dim)
    acc = np.zeros(dim)
    for h in range(rates.H):
        state = asgd_step(state, rates, grad_fn(query_point(state, rates)))
        if h + 1 > rates.H // 2:
            acc += state.x
    return acc * (2.0 / rates.H)


def affine_system(fisher, b, rates):
    """``(M, c)`` with ``u_{h+1} = M u_h + c`` for ``u = (x, v)``."""
    d = b.shape[0]
    eye = np.eye(d)
    a, be = rates.alpha, rates.beta
    px = eye - rates.delta * fisher
    pv = be * eye - rates.xi * fisher
    m = np.block([[a * px, (1.0 - a) * px],
                  [a * pv, (1.0 - a) * pv + (1.0 - be) * eye]])
    c = np.concatenate([rates.delta * b, rates.xi * b])
    return m, c


def exact_tail_average(fisher, b, rates):
    """Closed-form tail average of the exact-gradient recurrence.

    Tracks ``(u, 1, S)`` with ``S`` the running sum of x through an augmented
    linear map, so both halves of the run are single matrix powers.
    """
    fisher = np.asarray(fisher, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b.shape[0]
    m, c = affine_system(fisher, b, rates)
    n = 2 * d
    aug = np.zeros((n + 1 + d, n + 1 + d))
    aug[:n, :n] = m
    aug[:n, n] = c
    aug[n, n] = 1.0
    aug[n + 1:, :n] = m[:d]
    aug[n + 1:, n] = c[:d]
    aug[n + 1:, n + 1:] = np.eye(d)
    half = np.linalg.matrix_power(aug, rates.H // 2)
    w = np.zeros(n + 1 + d)
    w[n] = 1.0
    w = half @ w
    w[n + 1:] = 0.0
    w = half @ w
    return w[n + 1:] * (2.0 / rates.H)


def exact_problem(spec, params, lam, tau):
    """``(F(theta), grad L)``: the exact quadratic whose gradient is ``F omega - grad L``."""
    report = regularized_report(spec, params, lam, tau)
    fisher = exact_fisher(spec, params, d=report.occupancy_d)
    return fisher, exact_lagrangian_gradient(spec, params, lam, tau, report=report)


def run_inner_loop(spec, params, lam, tau, rates, gradient_source="stochastic", rng=None,
                   closed_form=True):
    """Inner loop producing the NPG estimate; returns ``(omega_k, samples_used)``.

    ``gradient_source="exact"`` uses the exact gradient ``F y - grad L`` and
    consumes no samples. With ``closed_form=False`` the exact run goes through
    the explicit step loop instead of the matrix-power shortcut.
    """
    if gradient_source == "exact":
        fisher, b = exact_problem(spec, params, lam, tau)
        if closed_form:
            return exact_tail_average(fisher, b, rates), 0
        return _kernels.asgd_exact(fisher, b, rates.alpha, rates.beta, rates.xi, rates.delta, rates.H), 0
    if gradient_source != "stochastic":
        raise InvalidParameterError(f"unknown gradient source {gradient_source!r}")
    rng = check_generator(rng)
    t = SamplerTables.build(spec, params, lam, tau)
    omega, used = _kernels.asgd_stochastic(
        spec.cum_transition, spec.cum_rho, t.cum_pi, spec.cost, t.util, t.pi, t.scores,
        spec.log_gamma, 1.0 / (1.0 - spec.gamma), rates.alpha, rates.beta, rates.xi, rates.delta,
        rates.H, rng)
    return omega, int(used)
