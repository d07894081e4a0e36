"""Primal-dual outer loop, hyperparameter schedule and run instrumentation."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .asgd import AsgdRates, even_ceil, min_inner_steps, run_inner_loop
from .cmdp import check_generator
from .exceptions import DivergedError, InvalidParameterError, ScheduleInfeasibleError
from .oracle import (averaged_advantage_sq, exact_lagrangian_gradient, exact_npg, exact_fisher,
                     j_value, l_squared, occupancy, potential, restricted_min_eigenvalue,
                     solve_constrained_optimum, solve_regularized_saddle, slater_margin)
from .policy import PolicyParams, measure_score_bounds, tabular_score_bounds
from .sampler import estimate_jc_only, expected_samples_per_call

log = logging.getLogger(__name__)

OVERRIDE_KEYS = ("tau", "eta", "K", "H", "lambda_max")


@dataclass(frozen=True)
class ScheduleConfig:
    """Target accuracy, model constants and optional explicit overrides.

    ``G``, ``B`` and ``mu_F`` may be left as None and filled in by
    :func:`measure_constants` before the schedule is derived.
    """

    epsilon: float
    epsilon_bias: float = 0.0
    c_slat: float | None = None
    G: float | None = None
    B: float | None = None
    mu_F: float | None = None
    C_bar: float = 4.0
    C: float = 1.0
    mu_floor: float = 1e-3
    tau: float | None = None
    eta: float | None = None
    K: int | None = None
    H: int | None = None
    lambda_max: float | None = None

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise InvalidParameterError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not (0.0 <= self.epsilon_bias < 1.0):
            raise InvalidParameterError(f"epsilon_bias must lie in [0, 1), got {self.epsilon_bias}")
        for name in ("c_slat", "G", "B", "mu_F", "tau", "eta", "lambda_max"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise InvalidParameterError(f"{name} must be positive, got {val}")
        if self.C_bar <= 0 or self.C <= 0 or self.mu_floor <= 0:
            raise InvalidParameterError("C_bar, C and mu_floor must be positive")
        if self.K is not None and (int(self.K) != self.K or self.K < 0):
            raise InvalidParameterError(f"K must be a nonnegative integer, got {self.K}")
        if self.H is not None and (int(self.H) != self.H or self.H < 1):
            raise InvalidParameterError(f"H must be a positive integer, got {self.H}")

    def replace(self, **changes):
        doc = asdict(self)
        doc.update(changes)
        return ScheduleConfig(**doc)

    @property
    def overrides(self):
        return {k: getattr(self, k) for k in OVERRIDE_KEYS if getattr(self, k) is not None}

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidParameterError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class Schedule:
    tau: float
    eta: float
    K: int
    H: int
    lambda_max: float
    rates: AsgdRates
    overridden: tuple = ()

    def to_dict(self):
        doc = {k: getattr(self, k) for k in ("tau", "eta", "K", "H", "lambda_max")}
        doc["rates"] = asdict(self.rates)
        doc["overridden"] = list(self.overridden)
        return doc


def derive_schedule(config, gamma, dim=None):
    """Concrete ``(tau, eta, K, H, lambda_max, rates)`` for a target accuracy.

    tau = max(eps, eps_bias^(1/6)), K = ceil(2 / (eps^2 tau^2)), eta = eps^2 tau,
    H = ceil(40 G^2 / mu_F * log(1 / (tau eps^2))) rounded up to even and
    lambda_max = 4 / ((1 - gamma) c_slat). Explicit overrides are used verbatim.
    """
    if config.G is None or config.mu_F is None:
        raise InvalidParameterError("G and mu_F must be set (see measure_constants)")
    if config.lambda_max is None and config.c_slat is None:
        raise InvalidParameterError("either c_slat or a lambda_max override is required")
    eps = config.epsilon
    mu = max(config.mu_F, config.mu_floor)
    g2 = config.G ** 2
    tau = config.tau if config.tau is not None else max(eps, config.epsilon_bias ** (1.0 / 6.0))
    eta = config.eta if config.eta is not None else eps * eps * tau
    if config.K is not None:
        K = int(config.K)
    else:
        # Guard the ceiling against representation error (e.g. 2/(0.1^2 0.1^2) = 20000.000000000004).
        K = int(math.ceil(round(2.0 / (eps * eps * tau * tau), 9)))
    if config.H is not None:
        H = even_ceil(config.H)
    else:
        H = even_ceil(40.0 * g2 / mu * math.log(1.0 / (tau * eps * eps)))
    lam_max = config.lambda_max if config.lambda_max is not None else 4.0 / ((1.0 - gamma) * config.c_slat)
    if eta * tau >= 1.0:
        raise ScheduleInfeasibleError(f"eta * tau = {eta * tau:.6g} must be < 1")
    overridden = tuple(k for k in OVERRIDE_KEYS if getattr(config, k) is not None)
    if "K" in overridden:
        warnings.warn("K is overridden; the last-iterate guarantees no longer apply verbatim", stacklevel=2)
    if dim is not None and H <= min_inner_steps(config.G, mu, dim, config.C_bar):
        warnings.warn(f"H = {H} is below the inner-loop threshold "
                      f"{min_inner_steps(config.G, mu, dim, config.C_bar):.1f}", stacklevel=2)
    return Schedule(tau=float(tau), eta=float(eta), K=K, H=H, lambda_max=float(lam_max),
                    rates=AsgdRates.from_bounds(config.G, mu, H), overridden=overridden)


@dataclass(frozen=True)
class DualState:
    lam: float
    lambda_max: float

    def __post_init__(self):
        if not math.isfinite(self.lam):
            raise DivergedError(f"dual variable became non-finite: {self.lam}")
        # Projection contract; only violated by a programming error.
        assert 0.0 <= self.lam <= self.lambda_max, (self.lam, self.lambda_max)


def dual_step(state, j_c_hat, eta, tau, lambda_max=None):
    """``lam' = clip(lam (1 - eta tau) - eta j_c_hat, 0, lambda_max)``."""
    lam_max = state.lambda_max if lambda_max is None else lambda_max
    lam = state.lam * (1.0 - eta * tau) - eta * j_c_hat
    if not math.isfinite(lam):
        raise DivergedError(f"dual update produced {lam}")
    return DualState(lam=min(max(lam, 0.0), lam_max), lambda_max=lam_max)


def primal_step(params, omega, eta):
    """``theta' = theta + eta omega`` (no projection)."""
    omega = np.asarray(omega, dtype=float)
    if not np.all(np.isfinite(omega)):
        raise DivergedError("NPG estimate is not finite")
    theta = params.theta + eta * omega
    if not np.all(np.isfinite(theta)):
        raise DivergedError("policy parameters became non-finite")
    return params.with_theta(theta)


def conservative_transform(spec, delta_prime):
    """Tighten the constraint to ``J_c >= delta_prime`` by shifting the cost.

    The new cost is ``c - (1 - gamma) delta_prime``, so ``J_c' = J_c - delta_prime``.
    """
    if delta_prime < 0:
        raise InvalidParameterError("delta_prime must be nonnegative")
    cost = spec.cost - (1.0 - spec.gamma) * delta_prime
    bad = np.argwhere(cost < -1.0)
    if len(bad):
        s, a = bad[0]
        raise InvalidParameterError(f"cost[{s}][{a}] would become {cost[s, a]:.6g} < -1")
    c_slat = None
    if spec.c_slat is not None and spec.c_slat - delta_prime > 0:
        c_slat = spec.c_slat - delta_prime
    return spec.replace(cost=cost, c_slat=c_slat)


# --------------------------------------------------------------------------- constants

@dataclass(frozen=True)
class MeasuredConstants:
    G: float
    B: float
    mu_F: float
    mu_F_raw: float
    c_slat: float
    floored: bool = False


def measure_constants(spec, params0, tau, lambda_max=None, c_slat=None, mu_floor=1e-3,
                      n_perturb=8, radius=0.1, rng=0):
    """Score bounds and the Fisher floor used by the learning rates.

    For tabular softmax G and B are the analytic values. The Fisher floor is
    the smallest eigenvalue on the range of F, over the initial parameters,
    the regularized optimum (tabular only) and Gaussian perturbations of
    both, clamped below at ``mu_floor``.
    """
    rng = check_generator(rng)
    c_slat = slater_margin(spec) if c_slat is None else float(c_slat)
    lam_max = 4.0 / ((1.0 - spec.gamma) * c_slat) if lambda_max is None else lambda_max
    anchors = [params0]
    if params0.kind == "tabular_softmax":
        anchors.append(solve_regularized_saddle(spec, tau, lam_max).params)
    points = list(anchors)
    for p in anchors:
        for _ in range(n_perturb):
            step = rng.normal(size=p.dim)
            points.append(p.with_theta(p.theta + step * (radius / np.linalg.norm(step))))
    mu_raw = min(restricted_min_eigenvalue(exact_fisher(spec, p)) for p in points)
    if params0.kind == "tabular_softmax":
        bounds = tabular_score_bounds()
    else:
        bounds = measure_score_bounds(anchors, spec, radius=radius, n_perturb=n_perturb, rng=rng)
    return MeasuredConstants(G=bounds.G, B=bounds.B, mu_F=max(mu_raw, mu_floor), mu_F_raw=mu_raw,
                             c_slat=c_slat, floored=mu_raw < mu_floor)


def complete_config(spec, config, params0):
    """Fill in measured G, B, mu_F and c_slat where the config leaves them open."""
    changes = {}
    c_slat = config.c_slat if config.c_slat is not None else (
        spec.c_slat if spec.c_slat is not None else None)
    if config.G is None or config.B is None or config.mu_F is None or c_slat is None:
        tau = config.tau if config.tau is not None else max(config.epsilon, config.epsilon_bias ** (1 / 6))
        consts = measure_constants(spec, params0, tau, lambda_max=config.lambda_max, c_slat=c_slat,
                                   mu_floor=config.mu_floor)
        for key in ("G", "B", "mu_F"):
            if getattr(config, key) is None:
                changes[key] = getattr(consts, key)
        c_slat = consts.c_slat
    if config.c_slat is None:
        changes["c_slat"] = c_slat
    return config.replace(**changes) if changes else config


# --------------------------------------------------------------------------- run

@dataclass
class RunRecord:
    """Oracle metrics at one outer iteration.

    ``omega_norm`` is NaN at the final row (no inner loop runs at k = K).
    The audit fields are filled only when the run is audited.
    """

    k: int
    optimality_gap: float
    violation: float
    phi_surrogate: float
    omega_norm: float
    lam: float
    samples_cumulative: int
    j_r: float = float("nan")
    j_c: float = float("nan")
    bias: float = float("nan")
    phi_next: float = float("nan")
    advantage_ratio: float = float("nan")
    gradient_ratio: float = float("nan")

    CSV_COLUMNS = ("k", "optimality_gap", "violation", "phi_surrogate", "omega_norm", "lambda",
                   "samples_cumulative")

    def csv_row(self):
        return (self.k, self.optimality_gap, self.violation, self.phi_surrogate, self.omega_norm,
                self.lam, self.samples_cumulative)


@dataclass(eq=False)
class RunResult:
    params: PolicyParams
    dual: DualState
    records: list
    schedule: Schedule
    config: ScheduleConfig
    truncated: bool = False
    samples: int = 0
    reference: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.params, self.dual, self.records))


class _Instrument:
    """Oracle references fixed for a run: J_r*, the regularized saddle point and d^{pi*}."""

    def __init__(self, spec, schedule, config, audit):
        self.spec = spec
        self.schedule = schedule
        self.config = config
        self.audit = audit
        self.optimum = solve_constrained_optimum(spec)
        self.saddle = solve_regularized_saddle(spec, schedule.tau, schedule.lambda_max)
        self.d_star = occupancy(spec, self.saddle.pi_star_tau)
        self.l2 = l_squared(spec.gamma, spec.n_actions, schedule.lambda_max, schedule.tau)

    def phi(self, params, lam):
        return potential(self.spec, self.saddle, params, lam, self.d_star)

    def record(self, k, params, lam, omega, samples):
        spec = self.spec
        j_r = j_value(spec, params, spec.reward)
        j_c = j_value(spec, params, spec.cost)
        rec = RunRecord(k=k, optimality_gap=self.optimum.j_r_star - j_r, violation=max(0.0, -j_c),
                        phi_surrogate=self.phi(params, lam),
                        omega_norm=float(np.linalg.norm(omega)) if omega is not None else float("nan"),
                        lam=lam, samples_cumulative=int(samples), j_r=j_r, j_c=j_c)
        if self.audit:
            tau = self.schedule.tau
            l2 = l_squared(spec.gamma, spec.n_actions, lam, tau)
            rec.advantage_ratio = float(averaged_advantage_sq(spec, params, lam, tau).max() / l2)
            grad = exact_lagrangian_gradient(spec, params, lam, tau)
            g2 = self.config.G ** 2
            rec.gradient_ratio = float(grad @ grad * (1.0 - spec.gamma) ** 2 / (g2 * l2))
            if omega is not None:
                rec.bias = float(np.linalg.norm(omega - exact_npg(spec, params, lam, tau)))
        return rec

    def reference(self):
        return {"j_r_star": self.optimum.j_r_star, "lambda_star": self.optimum.lambda_star,
                "lambda_star_tau": self.saddle.lambda_star_tau, "l_squared_max": self.l2}


def default_stride(K):
    return max(1, K // 200)


def run_pdr_anpg(spec, config, mode="exact", rng=None, instrumentation=True, record_stride=None,
                 params0=None, lam0=0.0, audit=False, sample_cap=None, closed_form=True):
    """Run the primal-dual loop for ``K`` outer iterations.

    Each iteration computes the NPG estimate omega_k with the inner loop,
    obtains J_c(theta_k) (a fresh rollout in stochastic mode, the exact value
    in exact mode), then applies the primal and dual steps. With
    instrumentation on, a :class:`RunRecord` is written at
    ``k = 0, stride, 2 stride, ...`` and at ``k = K``.

    In stochastic mode the run stops early (``truncated=True``) once the
    cumulative transition count reaches ``sample_cap``. Exact mode consumes
    no samples; its ``samples_cumulative`` reports the expected count the
    stochastic run would have used.
    """
    if mode not in ("exact", "stochastic"):
        raise InvalidParameterError(f"mode must be 'exact' or 'stochastic', got {mode!r}")
    params = PolicyParams.tabular(spec.n_states, spec.n_actions) if params0 is None else params0
    if (params.n_states, params.n_actions) != (spec.n_states, spec.n_actions):
        raise InvalidParameterError("initial parameters do not match the CMDP dimensions")
    config = complete_config(spec, config, params)
    schedule = derive_schedule(config, spec.gamma, dim=params.dim)
    rng = check_generator(rng)
    dual = DualState(lam=float(lam0), lambda_max=schedule.lambda_max)
    stride = default_stride(schedule.K) if record_stride is None else int(record_stride)
    if stride < 1:
        raise InvalidParameterError("record_stride must be positive")
    inst = _Instrument(spec, schedule, config, audit) if instrumentation else None
    if inst is not None and inst.optimum.lambda_star > schedule.lambda_max:
        warnings.warn(f"lambda* = {inst.optimum.lambda_star:.4g} exceeds lambda_max = "
                      f"{schedule.lambda_max:.4g}", stacklevel=2)
    per_iter = (schedule.H * (spec.n_actions + 2) + 1) / (1.0 - spec.gamma)
    source = "exact" if mode == "exact" else "stochastic"
    records = []
    samples = 0
    truncated = False
    k = 0
    if schedule.K == 0:
        return RunResult(params, dual, records, schedule, config,
                         reference=inst.reference() if inst else {})
    while k < schedule.K:
        if mode == "stochastic" and sample_cap is not None and samples >= sample_cap:
            truncated = True
            log.warning("sample cap %d reached at k=%d of %d", sample_cap, k, schedule.K)
            break
        omega, used = run_inner_loop(spec, params, dual.lam, schedule.tau, schedule.rates,
                                     gradient_source=source, rng=rng, closed_form=closed_form)
        if mode == "exact":
            j_c_hat = j_value(spec, params, spec.cost)
        else:
            j_c_hat, m = estimate_jc_only(spec, params, rng)
            used += m
        rec = None
        if inst is not None and k % stride == 0:
            rec = inst.record(k, params, dual.lam, omega, samples)
        params = primal_step(params, omega, schedule.eta)
        dual = dual_step(dual, j_c_hat, schedule.eta, schedule.tau)
        samples = samples + used if mode == "stochastic" else int(round((k + 1) * per_iter))
        if rec is not None:
            if audit:
                rec.phi_next = inst.phi(params, dual.lam)
            records.append(rec)
        k += 1
    if inst is not None:
        records.append(inst.record(k, params, dual.lam, None, samples))
    return RunResult(params, dual, records, schedule, config, truncated=truncated, samples=samples,
                     reference=inst.reference() if inst else {})


def recursion_rhs(rec, schedule, config, gamma):
    """Right-hand side of the one-step potential recursion at a recorded iterate."""
    eta, tau = schedule.eta, schedule.tau
    omega_sq = rec.omega_norm ** 2
    return ((1.0 - eta * tau) * rec.phi_surrogate + eta * math.sqrt(config.epsilon_bias)
            + eta * config.G * rec.bias + 0.5 * config.B * eta * eta * omega_sq
            + eta * eta * (2.0 / (1.0 - gamma) ** 2 + tau * tau * schedule.lambda_max ** 2))
