"""Finite constrained MDPs, utility functions and geometric-horizon rollouts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .exceptions import CmdpValidationError, DomainError, InvalidParameterError

PROB_ATOL = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CmdpSpec:
    """A finite CMDP ``(S, A, r, c, P, gamma, rho)``.

    Parameters
    ----------
    reward : array, shape (S, A)
        Entries in [0, 1].
    cost : array, shape (S, A)
        Entries in [-1, 1]. The constraint is ``J_c >= 0``.
    transition : array, shape (S, A, S)
        ``transition[s, a]`` is the next-state distribution.
    gamma : float
        Discount factor in [0, 1).
    rho : array, shape (S,)
        Initial state distribution.
    c_slat : float, optional
        Declared Slater margin. When omitted, callers compute the largest
        admissible margin with :func:`pdr_anpg.oracle.max_constraint_value`.
    """

    reward: np.ndarray
    cost: np.ndarray
    transition: np.ndarray
    gamma: float
    rho: np.ndarray
    c_slat: float | None = None
    name: str = ""
    _cum: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "cost", _frozen(self.cost))
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "rho", _frozen(self.rho))
        object.__setattr__(self, "gamma", float(self.gamma))
        validate_cmdp(self)

    @property
    def n_states(self):
        return self.reward.shape[0]

    @property
    def n_actions(self):
        return self.reward.shape[1]

    @property
    def cum_transition(self):
        if "p" not in self._cum:
            self._cum["p"] = cumulative(self.transition)
        return self._cum["p"]

    @property
    def cum_rho(self):
        if "rho" not in self._cum:
            self._cum["rho"] = cumulative(self.rho)
        return self._cum["rho"]

    @property
    def log_gamma(self):
        return math.log(self.gamma) if self.gamma > 0 else -math.inf

    def replace(self, **changes):
        kwargs = dict(reward=self.reward, cost=self.cost, transition=self.transition,
                      gamma=self.gamma, rho=self.rho, c_slat=self.c_slat, name=self.name)
        kwargs.update(changes)
        return CmdpSpec(**kwargs)

    def to_dict(self):
        doc = {
            "n_states": int(self.n_states),
            "n_actions": int(self.n_actions),
            "gamma": self.gamma,
            "rho": self.rho.tolist(),
            "reward": self.reward.tolist(),
            "cost": self.cost.tolist(),
            "transition": self.transition.tolist(),
        }
        if self.c_slat is not None:
            doc["c_slat"] = self.c_slat
        if self.name:
            doc["name"] = self.name
        return doc

    @classmethod
    def from_dict(cls, doc):
        """Build a spec from the JSON document layout, validating shapes first."""
        for key in ("n_states", "n_actions", "gamma", "rho", "reward", "cost", "transition"):
            if key not in doc:
                raise CmdpValidationError(key, "missing key")
        n_s, n_a = doc["n_states"], doc["n_actions"]
        if not isinstance(n_s, int) or n_s < 1:
            raise CmdpValidationError("n_states", f"must be a positive integer, got {n_s!r}")
        if not isinstance(n_a, int) or n_a < 1:
            raise CmdpValidationError("n_actions", f"must be a positive integer, got {n_a!r}")
        arrays = {}
        for key, shape in (("rho", (n_s,)), ("reward", (n_s, n_a)), ("cost", (n_s, n_a)),
                           ("transition", (n_s, n_a, n_s))):
            arrays[key] = _nested_array(doc[key], shape, key)
        return cls(reward=arrays["reward"], cost=arrays["cost"], transition=arrays["transition"],
                   gamma=doc["gamma"], rho=arrays["rho"], c_slat=doc.get("c_slat"),
                   name=doc.get("name", ""))


def _nested_array(value, shape, path):
    # Walk the nesting so a ragged or short row is reported by its index path.
    def walk(v, depth, p):
        if depth == len(shape):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise CmdpValidationError(p, f"expected a number, got {v!r}")
            return
        if not isinstance(v, (list, tuple)) or len(v) != shape[depth]:
            n = len(v) if isinstance(v, (list, tuple)) else type(v).__name__
            raise CmdpValidationError(p, f"expected {shape[depth]} entries, got {n}")
        for i, item in enumerate(v):
            walk(item, depth + 1, f"{p}[{i}]")

    walk(value, 0, path)
    return np.asarray(value, dtype=float)


def _index_path(name, idx):
    return name + "".join(f"[{int(i)}]" for i in idx)


def validate_cmdp(spec):
    """Check every model invariant; raise :class:`CmdpValidationError` on the first failure."""
    r, c, p, rho = spec.reward, spec.cost, spec.transition, spec.rho
    if r.ndim != 2 or r.shape[0] < 1 or r.shape[1] < 1:
        raise CmdpValidationError("reward", f"expected a non-empty S x A table, got shape {r.shape}")
    n_s, n_a = r.shape
    if c.shape != (n_s, n_a):
        raise CmdpValidationError("cost", f"expected shape {(n_s, n_a)}, got {c.shape}")
    if p.shape != (n_s, n_a, n_s):
        raise CmdpValidationError("transition", f"expected shape {(n_s, n_a, n_s)}, got {p.shape}")
    if rho.shape != (n_s,):
        raise CmdpValidationError("rho", f"expected shape {(n_s,)}, got {rho.shape}")
    if not (0.0 <= spec.gamma < 1.0):
        raise CmdpValidationError("gamma", f"must lie in [0, 1), got {spec.gamma}")
    for name, arr, lo, hi in (("reward", r, 0.0, 1.0), ("cost", c, -1.0, 1.0)):
        bad = np.argwhere(~np.isfinite(arr) | (arr < lo) | (arr > hi))
        if len(bad):
            idx = tuple(bad[0])
            raise CmdpValidationError(_index_path(name, idx), f"value {arr[idx]} outside [{lo}, {hi}]")
    bad = np.argwhere(~np.isfinite(p) | (p < 0))
    if len(bad):
        idx = tuple(bad[0])
        raise CmdpValidationError(_index_path("transition", idx), f"negative or non-finite probability {p[idx]}")
    sums = p.sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1.0) > PROB_ATOL)
    if len(bad):
        idx = tuple(bad[0])
        raise CmdpValidationError(_index_path("transition", idx), f"row sums to {sums[idx]!r}, expected 1")
    bad = np.argwhere(~np.isfinite(rho) | (rho < 0))
    if len(bad):
        idx = tuple(bad[0])
        raise CmdpValidationError(_index_path("rho", idx), f"negative or non-finite probability {rho[idx]}")
    if abs(rho.sum() - 1.0) > PROB_ATOL:
        raise CmdpValidationError("rho", f"sums to {rho.sum()!r}, expected 1")
    if spec.c_slat is not None and not (0.0 < spec.c_slat <= 1.0 / (1.0 - spec.gamma) + 1e-12):
        raise CmdpValidationError("c_slat", f"must lie in (0, 1/(1-gamma)], got {spec.c_slat}")


def load_cmdp(path):
    """Load a CMDP from a JSON file (row-major S x A (x S) nesting).

    ``bundled:<name>`` loads one of the instances shipped with the package.
    """
    return CmdpSpec.from_dict(_load_document(path))


def load_features(path):
    """Return the ``features`` table (S x A x d) of a CMDP document, or None."""
    doc = _load_document(path)
    if "features" not in doc:
        return None
    feats = doc["features"]
    n_s, n_a = doc["n_states"], doc["n_actions"]
    try:
        d = len(feats[0][0])
    except (TypeError, IndexError):
        raise CmdpValidationError("features", "expected S x A x d nested arrays") from None
    return _nested_array(feats, (n_s, n_a, d), "features")


def _load_document(path):
    path = str(path)
    if path.startswith("bundled:"):
        path = bundled_path(path.split(":", 1)[1])
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InvalidParameterError(f"CMDP file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CmdpValidationError("<document>", f"invalid JSON in {path}: {exc}") from None


DATA_DIR = Path(__file__).resolve().parent / "data"
BUNDLED = ("greedy_violates", "three_state", "bandit")


def bundled_path(name):
    if name not in BUNDLED:
        raise InvalidParameterError(f"unknown bundled CMDP {name!r}; choose from {BUNDLED}")
    return DATA_DIR / f"{name}.json"


def cumulative(probs):
    """Row-wise cumulative sums with the last entry pinned to exactly 1."""
    cum = np.cumsum(np.asarray(probs, dtype=float), axis=-1)
    cum[..., -1] = 1.0
    return cum


def check_generator(seed=None):
    """Turn ``seed`` into a ``numpy.random.Generator`` backed by Philox.

    Philox is counter-based, and ``Generator.spawn`` gives independent child
    streams for parallel replication. An existing Generator is returned as is.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    if seed is None or isinstance(seed, (int, np.integer)):
        return np.random.Generator(np.random.Philox(seed))
    raise InvalidParameterError(f"cannot build a generator from {seed!r}")


# --------------------------------------------------------------------------- utilities

UTILITY_KINDS = ("reward", "cost", "combined", "regularized")


@dataclass(frozen=True)
class UtilityFn:
    """Per-step utility ``g(s, a)``.

    ``reward`` gives r, ``cost`` gives c, ``combined`` gives r + lam c and
    ``regularized`` gives r + lam c + tau psi with psi(s, a) = -log pi_theta(a|s).
    """

    kind: str
    lam: float = 0.0
    tau: float = 0.0
    params: object = None

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise InvalidParameterError(f"unknown utility kind {self.kind!r}")
        if self.kind == "regularized" and self.params is None:
            raise InvalidParameterError("regularized utility needs policy parameters")

    @classmethod
    def reward(cls):
        return cls("reward")

    @classmethod
    def cost(cls):
        return cls("cost")

    @classmethod
    def combined(cls, lam):
        return cls("combined", lam=float(lam))

    @classmethod
    def regularized(cls, lam, tau, params):
        return cls("regularized", lam=float(lam), tau=float(tau), params=params)

    def table(self, spec):
        if self.kind == "reward":
            return np.array(spec.reward)
        if self.kind == "cost":
            return np.array(spec.cost)
        g = spec.reward + self.lam * spec.cost
        if self.kind == "regularized" and self.tau != 0.0:
            log_pi = self.params.log_prob_table()
            if not np.all(np.isfinite(log_pi)):
                raise DomainError("regularized utility needs pi(a|s) > 0 everywhere")
            g = g - self.tau * log_pi
        return g

    def __call__(self, spec, s, a):
        return float(self.table(spec)[s, a])


def utility_table(g, spec):
    """Accept a :class:`UtilityFn` or an S x A array and return the table."""
    if isinstance(g, UtilityFn):
        return g.table(spec)
    table = np.asarray(g, dtype=float)
    if table.shape != (spec.n_states, spec.n_actions):
        raise InvalidParameterError(f"utility table has shape {table.shape}, expected "
                                    f"{(spec.n_states, spec.n_actions)}")
    return table


def policy_table(policy, spec=None):
    """Action probabilities (S x A) from PolicyParams or an explicit table."""
    if hasattr(policy, "prob_table"):
        table = policy.prob_table()
    else:
        table = np.asarray(policy, dtype=float)
    if spec is not None and table.shape != (spec.n_states, spec.n_actions):
        raise InvalidParameterError(f"policy has shape {table.shape}, expected "
                                    f"{(spec.n_states, spec.n_actions)}")
    return table


# --------------------------------------------------------------------------- rollouts

@dataclass(frozen=True, eq=False)
class Trajectory:
    """Visited (state, action) pairs; ``len(steps) == horizon + 1``."""

    states: np.ndarray
    actions: np.ndarray

    @property
    def horizon(self):
        return len(self.states) - 1

    @property
    def steps(self):
        return list(zip(self.states.tolist(), self.actions.tolist()))

    def __len__(self):
        return len(self.states)


def sample_geometric_horizon(gamma, rng):
    """Draw T with P(T = j) = (1 - gamma) gamma^j by inverting the CDF of one uniform."""
    if not (0.0 <= gamma < 1.0):
        raise InvalidParameterError(f"gamma must lie in [0, 1), got {gamma}")
    log_gamma = math.log(gamma) if gamma > 0 else -math.inf
    return int(_kernels.geometric_from_uniform(log_gamma, rng.random()))


def geometric_from_uniform(gamma, u):
    log_gamma = math.log(gamma) if gamma > 0 else -math.inf
    return int(_kernels.geometric_from_uniform(log_gamma, float(u)))


def _start_indices(spec, start):
    s, a = -1, -1
    if isinstance(start, str):
        if start != "rho":
            raise InvalidParameterError(f"unknown start directive {start!r}")
    elif isinstance(start, (tuple, list)):
        s, a = (int(v) for v in start)
    else:
        s = int(start)
    if not (-1 <= s < spec.n_states) or (s == -1 and not isinstance(start, str)):
        raise InvalidParameterError(f"start state {start!r} out of range")
    if not (-1 <= a < spec.n_actions):
        raise InvalidParameterError(f"start action {start!r} out of range")
    return s, a


def rollout(spec, policy, start="rho", horizon=None, rng=None):
    """Simulate one trajectory under ``policy``.

    ``start`` is ``"rho"``, a state index, or a ``(state, action)`` pair.
    With ``horizon=None`` the length is drawn from Geo(1 - gamma).
    """
    rng = check_generator(rng)
    pi = policy_table(policy, spec)
    s, a = _start_indices(spec, start)
    h = -1 if horizon is None else int(horizon)
    if horizon is not None and h < 0:
        raise InvalidParameterError("horizon must be nonnegative")
    states, actions = _kernels.rollout_path(spec.cum_transition, spec.cum_rho, cumulative(pi),
                                            spec.log_gamma, s, a, h, rng)
    return Trajectory(states, actions)


def accumulate_utility(traj, g, spec=None):
    """Undiscounted sum of g over every pair of the trajectory.

    The geometric horizon already supplies the discounting in expectation.
    ``g`` is a table or a :class:`UtilityFn` (which then needs ``spec``).
    """
    if isinstance(g, UtilityFn):
        if spec is None:
            raise InvalidParameterError("a UtilityFn needs the CMDP spec to be evaluated")
        g = g.table(spec)
    vals = np.asarray(g, dtype=float)[traj.states, traj.actions]
    if not np.all(np.isfinite(vals)):
        raise DomainError("utility is not finite along the trajectory")
    return float(vals.sum())


@dataclass(frozen=True, eq=False)
class UtilitySums:
    totals: np.ndarray
    last_states: np.ndarray
    lengths: np.ndarray


def sample_utility_sums(spec, policy, g, n, start="rho", rng=None):
    """``n`` geometric-horizon rollouts reduced to their utility sums.

    Consumes the stream exactly like ``n`` calls of :func:`rollout` followed by
    :func:`accumulate_utility`, without the per-call overhead.
    """
    if n < 1:
        raise InvalidParameterError("n must be positive")
    rng = check_generator(rng)
    table = utility_table(g, spec)
    if not np.all(np.isfinite(table)):
        raise DomainError("utility is not finite")
    s, a = _start_indices(spec, start)
    totals, last, pairs = _kernels.rollout_sums(spec.cum_transition, spec.cum_rho,
                                                cumulative(policy_table(policy, spec)), table,
                                                spec.log_gamma, s, a, int(n), rng)
    return UtilitySums(totals, last, pairs)
