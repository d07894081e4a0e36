"""Softmax-family policy parameterizations.

Two classes ship: ``tabular_softmax`` (one logit per state-action pair, a
complete class) and ``log_linear`` (logits ``phi(s, a) . theta`` from a fixed
feature table, in general incomplete).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .cmdp import check_generator
from .exceptions import InvalidParameterError

KINDS = ("tabular_softmax", "log_linear")


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Parameter vector ``theta`` plus the parameterization it indexes."""

    theta: np.ndarray
    kind: str
    n_states: int
    n_actions: int
    features: np.ndarray | None = None

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).ravel()
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown policy kind {self.kind!r}")
        if self.kind == "tabular_softmax":
            if theta.size != self.n_states * self.n_actions:
                raise InvalidParameterError(
                    f"tabular theta must have {self.n_states * self.n_actions} entries, got {theta.size}")
        else:
            feats = np.array(self.features, dtype=float)
            if feats.ndim != 3 or feats.shape[:2] != (self.n_states, self.n_actions):
                raise InvalidParameterError(f"features must be S x A x d, got shape {feats.shape}")
            if feats.shape[2] != theta.size:
                raise InvalidParameterError(
                    f"feature dimension {feats.shape[2]} does not match theta size {theta.size}")
            feats.setflags(write=False)
            object.__setattr__(self, "features", feats)

    @classmethod
    def tabular(cls, n_states, n_actions, theta=None):
        if theta is None:
            theta = np.zeros(n_states * n_actions)
        return cls(theta, "tabular_softmax", n_states, n_actions)

    @classmethod
    def log_linear(cls, features, theta=None):
        features = np.asarray(features, dtype=float)
        if features.ndim != 3:
            raise InvalidParameterError(f"features must be S x A x d, got shape {features.shape}")
        if theta is None:
            theta = np.zeros(features.shape[2])
        return cls(theta, "log_linear", features.shape[0], features.shape[1], features)

    @classmethod
    def from_policy_table(cls, probs):
        """Tabular parameters whose softmax reproduces a strictly positive table."""
        probs = np.asarray(probs, dtype=float)
        if np.any(probs <= 0):
            raise InvalidParameterError("policy table must be strictly positive")
        return cls.tabular(*probs.shape, theta=np.log(probs).ravel())

    @property
    def dim(self):
        return self.theta.size

    @property
    def feature_norm_bound(self):
        if self.kind == "tabular_softmax":
            return 1.0
        return float(np.linalg.norm(self.features, axis=2).max())

    def with_theta(self, theta):
        return PolicyParams(theta, self.kind, self.n_states, self.n_actions, self.features)

    def logits(self):
        if self.kind == "tabular_softmax":
            return self.theta.reshape(self.n_states, self.n_actions)
        return self.features @ self.theta

    def log_prob_table(self):
        z = self.logits()
        return z - logsumexp(z, axis=1, keepdims=True)

    def prob_table(self):
        return np.exp(self.log_prob_table())


def action_log_probs(params, s):
    """``log pi_theta(. | s)`` through a max-shifted log-sum-exp."""
    z = params.logits()[s]
    return z - logsumexp(z)


def score(params, s, a):
    """Score function ``grad_theta log pi_theta(a | s)`` as a dense d-vector."""
    pi_s = np.exp(action_log_probs(params, s))
    if params.kind == "tabular_softmax":
        out = np.zeros(params.dim)
        block = -pi_s
        block[a] += 1.0
        out[s * params.n_actions:(s + 1) * params.n_actions] = block
        return out
    phi = params.features[s]
    return phi[a] - pi_s @ phi


def score_table(params):
    """All scores at once, shape (S, A, d)."""
    pi = params.prob_table()
    n_s, n_a = pi.shape
    if params.kind == "tabular_softmax":
        out = np.zeros((n_s, n_a, params.dim))
        eye = np.eye(n_a)
        for s in range(n_s):
            out[s, :, s * n_a:(s + 1) * n_a] = eye - pi[s]
        return out
    phi = params.features
    return phi - np.einsum("sa,sad->sd", pi, phi)[:, None, :]


def fisher_at_state(params, s):
    """``sum_a pi(a|s) score(s,a) score(s,a)^T``; symmetric PSD."""
    pi_s = np.exp(action_log_probs(params, s))
    scores = np.stack([score(params, s, a) for a in range(params.n_actions)])
    return (scores * pi_s[:, None]).T @ scores


def state_fishers(params):
    """Per-state Fisher contributions, shape (S, d, d)."""
    pi = params.prob_table()
    sc = score_table(params)
    return np.einsum("sa,sai,saj->sij", pi, sc, sc)


@dataclass(frozen=True)
class ScoreBounds:
    """Score norm bound ``G`` and score Lipschitz bound ``B`` with their witnesses."""

    G: float
    B: float
    G_witness: tuple = ()
    B_witness: tuple = ()


def tabular_score_bounds():
    """Analytic bounds for tabular softmax.

    ``||e_a - pi||^2 = (1 - pi_a)^2 + sum_{b != a} pi_b^2 <= 2``, and the
    softmax Jacobian ``diag(pi) - pi pi^T`` has spectral norm at most 1/2.
    """
    return ScoreBounds(G=math.sqrt(2.0), B=0.5, G_witness=("analytic",), B_witness=("analytic",))


def measure_score_bounds(params_samples, spec=None, radius=0.1, n_perturb=8, rng=None):
    """Empirical G and B over sampled parameters.

    G is the largest score norm over the samples and their perturbations.
    B is the largest ratio ``||score(theta1) - score(theta2)|| / ||theta1 - theta2||``
    over pairs formed by each sample and Gaussian perturbations at ``radius``,
    plus every pair of distinct samples.
    """
    params_samples = list(params_samples)
    if not params_samples:
        raise InvalidParameterError("measure_score_bounds needs at least one parameter sample")
    if spec is not None and (params_samples[0].n_states, params_samples[0].n_actions) != (
            spec.n_states, spec.n_actions):
        raise InvalidParameterError("parameter samples do not match the CMDP dimensions")
    rng = check_generator(0 if rng is None else rng)
    g_best, g_wit = 0.0, ()
    b_best, b_wit = 0.0, ()

    def norms(p):
        return np.linalg.norm(score_table(p), axis=2)

    pairs = []
    points = []
    for i, p in enumerate(params_samples):
        points.append(("sample", i, p))
        for j in range(n_perturb):
            step = rng.normal(size=p.dim)
            step *= radius / max(np.linalg.norm(step), 1e-300)
            q = p.with_theta(p.theta + step)
            points.append(("perturbed", i, q))
            pairs.append(((i, j), p, q))
    for i in range(len(params_samples)):
        for j in range(i + 1, len(params_samples)):
            pairs.append(((i, j), params_samples[i], params_samples[j]))

    for tag, i, p in points:
        n = norms(p)
        idx = np.unravel_index(np.argmax(n), n.shape)
        if n[idx] > g_best:
            g_best, g_wit = float(n[idx]), (tag, i, int(idx[0]), int(idx[1]))
    for wit, p, q in pairs:
        dist = np.linalg.norm(p.theta - q.theta)
        if dist == 0:
            continue
        diff = np.linalg.norm(score_table(p) - score_table(q), axis=2)
        idx = np.unravel_index(np.argmax(diff), diff.shape)
        ratio = float(diff[idx] / dist)
        if ratio > b_best:
            b_best, b_wit = ratio, wit + (int(idx[0]), int(idx[1]))
    return ScoreBounds(G=g_best, B=b_best, G_witness=g_wit, B_witness=b_wit)
