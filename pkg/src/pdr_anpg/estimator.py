"""scikit-learn style front end to :func:`pdr_anpg.outer.run_pdr_anpg`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .cmdp import CmdpSpec, load_cmdp, load_features
from .exceptions import InvalidParameterError
from .oracle import j_value
from .outer import ScheduleConfig, run_pdr_anpg
from .policy import PolicyParams


def check_cmdp(spec):
    """Accept a :class:`CmdpSpec`, a JSON document dict or a path (``bundled:<name>`` allowed)."""
    if isinstance(spec, CmdpSpec):
        return spec
    if isinstance(spec, dict):
        return CmdpSpec.from_dict(spec)
    if isinstance(spec, str) or hasattr(spec, "__fspath__"):
        return load_cmdp(spec)
    raise InvalidParameterError(f"expected a CmdpSpec, dict or path, got {type(spec).__name__}")


def check_states(states, n_states):
    """Validate an array of state indices."""
    arr = np.asarray(states)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.integer):
        raise InvalidParameterError("states must be a 1-d array of integer indices")
    if arr.size and (arr.min() < 0 or arr.max() >= n_states):
        raise InvalidParameterError(f"state indices must lie in [0, {n_states})")
    return arr


class PDRANPG(BaseEstimator):
    """Primal-dual regularized accelerated NPG as an estimator.

    ``fit`` takes a CMDP and runs the outer loop with the schedule derived
    from ``epsilon``; ``predict_proba`` returns the learned action
    distribution at the given states and ``predict`` the most likely action.

    Parameters
    ----------
    epsilon : float
        Target accuracy in (0, 1).
    epsilon_bias : float
        Declared approximation error of the policy class.
    mode : {"exact", "stochastic"}
        Exact-gradient inner loop or Monte-Carlo sampling.
    policy_kind : {"tabular_softmax", "log_linear"}
        ``log_linear`` needs ``features`` or a CMDP document carrying them.
    features : array (S, A, d), optional
    K, H, tau, eta, lambda_max : optional overrides of the derived schedule.
    mu_floor : float
        Lower clamp on the measured Fisher eigenvalue.
    record_stride : int, optional
        Oracle metrics every ``record_stride`` outer iterations.
    sample_cap : int, optional
        Stop a stochastic run once this many transitions are used.
    random_state : int or Generator, optional
    """

    def __init__(self, epsilon=0.2, epsilon_bias=0.0, mode="exact", policy_kind="tabular_softmax",
                 features=None, K=None, H=None, tau=None, eta=None, lambda_max=None, mu_floor=1e-3,
                 record_stride=None, sample_cap=None, random_state=None):
        self.epsilon = epsilon
        self.epsilon_bias = epsilon_bias
        self.mode = mode
        self.policy_kind = policy_kind
        self.features = features
        self.K = K
        self.H = H
        self.tau = tau
        self.eta = eta
        self.lambda_max = lambda_max
        self.mu_floor = mu_floor
        self.record_stride = record_stride
        self.sample_cap = sample_cap
        self.random_state = random_state

    def _initial_params(self, spec, source):
        if self.policy_kind == "tabular_softmax":
            return PolicyParams.tabular(spec.n_states, spec.n_actions)
        if self.policy_kind != "log_linear":
            raise InvalidParameterError(f"unknown policy_kind {self.policy_kind!r}")
        feats = self.features
        if feats is None and isinstance(source, str):
            feats = load_features(source)
        if feats is None:
            raise InvalidParameterError("log_linear policies need a feature table")
        params = PolicyParams.log_linear(feats)
        if (params.n_states, params.n_actions) != (spec.n_states, spec.n_actions):
            raise InvalidParameterError("feature table does not match the CMDP dimensions")
        return params

    def fit(self, X, y=None):
        """Run the algorithm on the CMDP ``X``; ``y`` is ignored."""
        spec = check_cmdp(X)
        config = ScheduleConfig(epsilon=self.epsilon, epsilon_bias=self.epsilon_bias, mu_floor=self.mu_floor,
                                K=self.K, H=self.H, tau=self.tau, eta=self.eta, lambda_max=self.lambda_max)
        result = run_pdr_anpg(spec, config, mode=self.mode, rng=self.random_state,
                              record_stride=self.record_stride, params0=self._initial_params(spec, X),
                              sample_cap=self.sample_cap)
        self.spec_ = spec
        self.params_ = result.params
        self.lambda_ = result.dual.lam
        self.records_ = result.records
        self.schedule_ = result.schedule
        self.config_ = result.config
        self.n_samples_ = result.samples
        self.truncated_ = result.truncated
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("this PDRANPG instance is not fitted yet; call fit first")

    def predict_proba(self, X=None):
        """Action probabilities at states ``X`` (all states when omitted)."""
        self._check_fitted()
        table = self.params_.prob_table()
        if X is None:
            return table
        return table[check_states(X, self.spec_.n_states)]

    def predict(self, X=None):
        return np.argmax(self.predict_proba(X), axis=1)

    def score(self, X=None, y=None):
        """Exact J_r of the learned policy on ``X`` (the fitted CMDP when omitted)."""
        self._check_fitted()
        spec = self.spec_ if X is None else check_cmdp(X)
        return j_value(spec, self.params_, spec.reward)

    def constraint_value(self, X=None):
        """Exact J_c of the learned policy."""
        self._check_fitted()
        spec = self.spec_ if X is None else check_cmdp(X)
        return j_value(spec, self.params_, spec.cost)
