"""Executable checks of the estimator and oracle properties on one CMDP.

Each check returns a :class:`CheckResult` whose ``margin`` is the slack of
the worst probe (negative means violated). Everything is seeded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cmdp import UtilityFn, check_generator
from .exceptions import InvalidParameterError
from .oracle import (EIG_CUTOFF, averaged_advantage_sq, entropy, error_function, error_gradient, exact_fisher,
                     exact_lagrangian_gradient, exact_npg, j_value, l_squared, lagrangian,
                     policy_evaluation, restricted_min_eigenvalue, sigma_squared, slater_margin,
                     solve_constrained_optimum, solve_regularized_saddle)
from .policy import PolicyParams, tabular_score_bounds
from .sampler import estimate_batch, expected_samples_per_call


@dataclass
class CheckResult:
    name: str
    passed: bool
    margin: float
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.name} margin={self.margin:.3e}"
        return f"{text} ({self.detail})" if self.detail else text


@dataclass
class VerifyConfig:
    n_probes: int = 100
    n_samples: int = 100_000
    n_unbiased_tuples: int = 5
    n_variance_tuples: int = 3
    tau: float | None = None
    lam: float | None = None
    saddle_tau: float = 0.2
    mu_floor: float = 1e-3
    seed: int = 0
    checks: list = field(default_factory=lambda: list(CHECKS))

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc or {})
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidParameterError(f"unknown verify keys: {sorted(unknown)}")
        cfg = cls(**doc)
        bad = [c for c in cfg.checks if c not in CHECKS]
        if bad:
            raise InvalidParameterError(f"unknown checks {bad}; choose from {list(CHECKS)}")
        return cfg


class _Context:
    def __init__(self, spec, features, cfg):
        self.spec = spec
        self.features = features
        self.cfg = cfg
        self.c_slat = slater_margin(spec)
        self.lambda_max = 4.0 / ((1.0 - spec.gamma) * self.c_slat)

    def rng(self, name):
        # One independent stream per check so the suite is order-independent.
        key = sum(ord(ch) * 31 ** i for i, ch in enumerate(name)) % (2 ** 32)
        return check_generator(np.random.SeedSequence([self.cfg.seed, key]))

    def params(self, theta):
        if self.features is not None:
            return PolicyParams.log_linear(self.features, theta)
        return PolicyParams.tabular(self.spec.n_states, self.spec.n_actions, theta)

    @property
    def dim(self):
        return self.features.shape[2] if self.features is not None else self.spec.n_states * self.spec.n_actions

    @property
    def G(self):
        if self.features is None:
            return tabular_score_bounds().G
        # ||phi(s,a) - E phi|| <= 2 max ||phi||.
        return 2.0 * float(np.linalg.norm(self.features, axis=2).max())

    def probe(self, rng):
        theta = rng.normal(size=self.dim)
        lam = self.cfg.lam if self.cfg.lam is not None else rng.uniform(0.0, self.lambda_max)
        tau = self.cfg.tau if self.cfg.tau is not None else rng.uniform(0.0, 1.0)
        return self.params(theta), float(lam), float(tau)


def check_advantage_bound(ctx):
    rng = ctx.rng("advantage")
    spec = ctx.spec
    worst = math.inf
    for _ in range(ctx.cfg.n_probes):
        params, lam, tau = ctx.probe(rng)
        s = rng.integers(spec.n_states)
        bound = l_squared(spec.gamma, spec.n_actions, lam, tau)
        worst = min(worst, bound - averaged_advantage_sq(spec, params, lam, tau)[s])
    return CheckResult("advantage_bound", worst >= -1e-10, worst)


def check_gradient_bound(ctx):
    rng = ctx.rng("gradient")
    spec = ctx.spec
    worst = math.inf
    for _ in range(ctx.cfg.n_probes):
        params, lam, tau = ctx.probe(rng)
        grad = exact_lagrangian_gradient(spec, params, lam, tau)
        bound = ctx.G ** 2 * l_squared(spec.gamma, spec.n_actions, lam, tau) / (1.0 - spec.gamma) ** 2
        worst = min(worst, bound - float(grad @ grad))
    return CheckResult("gradient_norm_bound", worst >= -1e-10, worst)


def _central_diff(f, x, h):
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return out


def check_policy_gradient_identity(ctx, tol=1e-6, h=1e-5):
    rng = ctx.rng("policy_gradient")
    spec = ctx.spec
    worst = 0.0
    for _ in range(ctx.cfg.n_probes):
        params, lam, tau = ctx.probe(rng)
        fd = _central_diff(lambda th: lagrangian(spec, params.with_theta(th), lam, tau), params.theta, h)
        worst = max(worst, float(np.abs(fd - exact_lagrangian_gradient(spec, params, lam, tau)).max()))
    return CheckResult("policy_gradient_identity", worst <= tol, tol - worst, f"max abs err {worst:.2e}")


def check_error_gradient_identity(ctx, tol=1e-6, h=1e-5):
    rng = ctx.rng("error_gradient")
    spec = ctx.spec
    worst = 0.0
    for _ in range(ctx.cfg.n_probes):
        params, lam, tau = ctx.probe(rng)
        omega = rng.normal(size=ctx.dim)
        fd = _central_diff(lambda w: error_function(spec, params, w, lam, tau), omega, h)
        worst = max(worst, float(np.abs(fd - error_gradient(spec, params, omega, lam, tau)).max()))
    return CheckResult("error_gradient_identity", worst <= tol, tol - worst, f"max abs err {worst:.2e}")


def check_unbiased(ctx):
    rng = ctx.rng("unbiased")
    spec = ctx.spec
    n = ctx.cfg.n_samples
    worst = math.inf
    for _ in range(ctx.cfg.n_unbiased_tuples):
        params, lam, tau = ctx.probe(rng)
        omega = rng.normal(size=ctx.dim)
        batch = estimate_batch(spec, params, omega, lam, tau, n, rng)
        target_jc = j_value(spec, params, spec.cost)
        target_g = error_gradient(spec, params, omega, lam, tau)
        se_jc = batch.j_c_hat.std(ddof=1) / math.sqrt(n)
        se_g = batch.grad_hat.std(axis=0, ddof=1) / math.sqrt(n)
        z = np.concatenate([[abs(batch.j_c_hat.mean() - target_jc) / max(se_jc, 1e-300)],
                            np.abs(batch.grad_hat.mean(axis=0) - target_g) / np.maximum(se_g, 1e-300)])
        # Components with zero variance must match exactly.
        z[np.concatenate([[se_jc], se_g]) == 0] = 0.0
        worst = min(worst, 4.0 - float(z.max()))
    return CheckResult("estimator_unbiased", worst >= 0, worst, "margin in standard errors below 4")


def second_moment_dominance(spec, params, lam, tau, G, mu_F, n, rng):
    """``eigmin(sigma^2 F - M)``, the 4-standard-error Frobenius radius of M, and the
    smallest eigenvalue of ``sigma^2 F - M`` restricted to the range of F.

    Gradient draws lie in the range of F, so on the null space of F both
    terms vanish and the unrestricted eigmin is pinned near zero.
    """
    omega = exact_npg(spec, params, lam, tau)
    batch = estimate_batch(spec, params, omega, lam, tau, n, rng)
    g = batch.grad_hat
    outer = g[:, :, None] * g[:, None, :]
    m = outer.mean(axis=0)
    se = outer.std(axis=0, ddof=1) / math.sqrt(n)
    radius = 4.0 * float(np.linalg.norm(se))
    sigma2 = sigma_squared(spec.gamma, spec.n_actions, lam, tau, G, mu_F)
    fisher = exact_fisher(spec, params)
    diff = sigma2 * fisher - m
    w, vecs = np.linalg.eigh(fisher)
    basis = vecs[:, w > EIG_CUTOFF * w.max()]
    gap = float(np.linalg.eigvalsh(diff).min())
    gap_range = float(np.linalg.eigvalsh(basis.T @ diff @ basis).min())
    return gap, radius, gap_range


def check_variance(ctx):
    rng = ctx.rng("variance")
    spec = ctx.spec
    worst = worst_range = math.inf
    for _ in range(ctx.cfg.n_variance_tuples):
        params, lam, tau = ctx.probe(rng)
        mu = max(restricted_min_eigenvalue(exact_fisher(spec, params)), ctx.cfg.mu_floor)
        gap, radius, gap_range = second_moment_dominance(spec, params, lam, tau, ctx.G, mu,
                                                         ctx.cfg.n_samples, rng)
        worst = min(worst, gap + radius)
        worst_range = min(worst_range, gap_range)
    return CheckResult("variance_dominance", worst >= 0, worst,
                       f"eigmin on range(F) {worst_range:.3e}")


def check_sample_count(ctx):
    rng = ctx.rng("samples")
    spec = ctx.spec
    params, lam, tau = ctx.probe(rng)
    batch = estimate_batch(spec, params, np.zeros(ctx.dim), lam, tau, ctx.cfg.n_samples, rng)
    target = expected_samples_per_call(spec)
    rel = abs(batch.samples_used.mean() / target - 1.0)
    return CheckResult("sample_count", rel <= 0.02, 0.02 - rel, f"relative error {rel:.2e}")


def random_policy(rng, n_states, n_actions):
    return rng.dirichlet(np.ones(n_actions), size=n_states)


def check_performance_difference(ctx, n_pairs=50, tol=1e-9):
    rng = ctx.rng("performance_difference")
    spec = ctx.spec
    worst = 0.0
    for _ in range(n_pairs):
        p1 = random_policy(rng, spec.n_states, spec.n_actions)
        p2 = random_policy(rng, spec.n_states, spec.n_actions)
        g = rng.uniform(-1, 1, size=(spec.n_states, spec.n_actions))
        r1 = policy_evaluation(spec, p1, g)
        r2 = policy_evaluation(spec, p2, g)
        rhs = float((r1.occupancy_nu * r2.adv).sum() / (1.0 - spec.gamma))
        worst = max(worst, abs(r1.j_value - r2.j_value - rhs))
    return CheckResult("performance_difference", worst <= tol, tol - worst, f"max abs err {worst:.2e}")


def check_saddle_sandwich(ctx, tol=1e-8):
    rng = ctx.rng("saddle")
    spec = ctx.spec
    tau = ctx.cfg.saddle_tau
    sp = solve_regularized_saddle(spec, tau, ctx.lambda_max)
    pi_star, lam_star = sp.pi_star_tau, sp.lambda_star_tau
    mid = j_value(spec, pi_star, UtilityFn.combined(lam_star))
    h_star = entropy(spec, pi_star)
    worst = math.inf
    for _ in range(ctx.cfg.n_probes):
        pi = random_policy(rng, spec.n_states, spec.n_actions)
        lam = rng.uniform(0.0, ctx.lambda_max)
        left = j_value(spec, pi, UtilityFn.combined(lam_star)) - tau * h_star
        right = j_value(spec, pi_star, UtilityFn.combined(lam)) + 0.5 * tau * lam * lam
        worst = min(worst, mid - left, right - mid)
    return CheckResult("saddle_sandwich", worst >= -tol, worst)


def check_dual_bound(ctx):
    opt = solve_constrained_optimum(ctx.spec)
    bound = 1.0 / ((1.0 - ctx.spec.gamma) * ctx.c_slat)
    return CheckResult("dual_multiplier_bound", opt.lambda_star <= bound + 1e-9, bound - opt.lambda_star,
                       f"lambda*={opt.lambda_star:.6g}")


CHECKS = {
    "advantage_bound": check_advantage_bound,
    "gradient_norm_bound": check_gradient_bound,
    "policy_gradient_identity": check_policy_gradient_identity,
    "error_gradient_identity": check_error_gradient_identity,
    "estimator_unbiased": check_unbiased,
    "variance_dominance": check_variance,
    "sample_count": check_sample_count,
    "performance_difference": check_performance_difference,
    "saddle_sandwich": check_saddle_sandwich,
    "dual_multiplier_bound": check_dual_bound,
}


def run_checks(spec, features=None, cfg=None):
    """Run the configured checks in order and return their results."""
    cfg = VerifyConfig() if cfg is None else cfg
    ctx = _Context(spec, features, cfg)
    return [CHECKS[name](ctx) for name in cfg.checks]
