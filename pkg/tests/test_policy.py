import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pdr_anpg.exceptions import InvalidParameterError
from pdr_anpg.oracle import entropy
from pdr_anpg.policy import (PolicyParams, action_log_probs, fisher_at_state, measure_score_bounds, score,
                             score_table, state_fishers, tabular_score_bounds)

from conftest import random_spec

thetas = arrays(np.float64, 12, elements=st.floats(-20, 20))


def test_uniform_log_probs():
    params = PolicyParams.tabular(2, 4)
    np.testing.assert_allclose(action_log_probs(params, 1), np.log(np.full(4, 0.25)), atol=1e-15)


def test_equal_logits():
    params = PolicyParams.tabular(1, 2, [1.0, 1.0])
    np.testing.assert_allclose(action_log_probs(params, 0), np.log([0.5, 0.5]), atol=1e-15)


def test_logits_zero_ln3():
    params = PolicyParams.tabular(1, 2, [0.0, math.log(3.0)])
    np.testing.assert_allclose(action_log_probs(params, 0), np.log([0.25, 0.75]), atol=1e-14)


def test_huge_logits_stay_finite():
    params = PolicyParams.tabular(1, 3, [1000.0, 0.0, -1000.0])
    lp = action_log_probs(params, 0)
    assert np.all(np.isfinite(lp))
    assert lp[0] == 0.0


@settings(max_examples=100, deadline=None)
@given(thetas)
def test_probabilities_normalized(theta):
    params = PolicyParams.tabular(4, 3, theta)
    for s in range(4):
        assert abs(np.exp(action_log_probs(params, s)).sum() - 1.0) < 1e-12


def test_uniform_score_block():
    params = PolicyParams.tabular(3, 2)
    sc = score(params, 1, 0)
    np.testing.assert_allclose(sc, [0, 0, 0.5, -0.5, 0, 0])


@settings(max_examples=50, deadline=None)
@given(thetas, st.integers(0, 3))
def test_score_centering(theta, s):
    params = PolicyParams.tabular(4, 3, theta)
    pi = np.exp(action_log_probs(params, s))
    centered = sum(pi[a] * score(params, s, a) for a in range(3))
    np.testing.assert_allclose(centered, 0.0, atol=1e-12)


def _fd_score(params, s, a, h=1e-5):
    out = np.empty(params.dim)
    for i in range(params.dim):
        e = np.zeros(params.dim)
        e[i] = h
        up = action_log_probs(params.with_theta(params.theta + e), s)[a]
        dn = action_log_probs(params.with_theta(params.theta - e), s)[a]
        out[i] = (up - dn) / (2 * h)
    return out


@pytest.mark.parametrize("kind", ["tabular", "log_linear"])
def test_score_matches_finite_differences(kind, three_state_features):
    rng = np.random.default_rng(0)
    for _ in range(100):
        if kind == "tabular":
            params = PolicyParams.tabular(3, 2, rng.normal(size=6) * 2)
        else:
            params = PolicyParams.log_linear(three_state_features, rng.normal(size=3) * 2)
        s, a = rng.integers(3), rng.integers(2)
        np.testing.assert_allclose(score(params, s, a), _fd_score(params, s, a), atol=1e-6)


def test_score_table_matches_pointwise(three_state_features):
    params = PolicyParams.log_linear(three_state_features, [0.3, -1.0, 2.0])
    table = score_table(params)
    for s in range(3):
        for a in range(2):
            np.testing.assert_allclose(table[s, a], score(params, s, a), atol=1e-15)


def test_fisher_single_state_uniform():
    params = PolicyParams.tabular(1, 2)
    np.testing.assert_allclose(fisher_at_state(params, 0), [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(thetas, st.integers(0, 3))
def test_fisher_psd(theta, s):
    f = fisher_at_state(PolicyParams.tabular(4, 3, theta), s)
    np.testing.assert_allclose(f, f.T, atol=1e-15)
    assert np.linalg.eigvalsh(f).min() >= -1e-10


def test_fisher_vanishes_at_deterministic_limit():
    params = PolicyParams.tabular(1, 2, [30.0, 0.0])
    assert np.linalg.norm(fisher_at_state(params, 0)) < 1e-12


def test_fisher_matches_monte_carlo_second_moment():
    rng = np.random.default_rng(3)
    params = PolicyParams.tabular(2, 3, rng.normal(size=6))
    pi = params.prob_table()[1]
    draws = rng.choice(3, size=10 ** 6, p=pi)
    freq = np.bincount(draws, minlength=3) / draws.size
    sc = score_table(params)[1]
    empirical = (sc * freq[:, None]).T @ sc
    assert np.linalg.norm(empirical - fisher_at_state(params, 1)) < 0.01


def test_state_fishers_stack():
    params = PolicyParams.tabular(3, 2, np.arange(6.0))
    stacked = state_fishers(params)
    for s in range(3):
        np.testing.assert_allclose(stacked[s], fisher_at_state(params, s), atol=1e-15)


def test_tabular_bounds_hold_numerically():
    rng = np.random.default_rng(4)
    samples = [PolicyParams.tabular(3, 4, rng.normal(size=12) * scale) for scale in (0.1, 1, 5, 20)]
    measured = measure_score_bounds(samples, rng=0)
    analytic = tabular_score_bounds()
    assert measured.G <= math.sqrt(2) + 1e-9
    assert measured.B <= analytic.B + 1e-9
    assert 0 < measured.B <= 2


def test_score_norm_approaches_sqrt2():
    # ||e_a - pi||^2 = (1 - pi_a)^2 + sum_b pi_b^2 -> 2 as pi concentrates on b != a.
    params = PolicyParams.tabular(1, 2, [0.0, 40.0])
    assert np.linalg.norm(score(params, 0, 0)) == pytest.approx(math.sqrt(2), abs=1e-12)


def test_single_sample_uses_perturbations():
    bounds = measure_score_bounds([PolicyParams.tabular(2, 2, [0.1, 0.2, 0.3, 0.4])], radius=0.1, rng=1)
    assert bounds.B > 0
    assert bounds.B_witness[0] == 0


def test_equal_features_give_zero_score():
    params = PolicyParams.log_linear(np.ones((3, 2, 4)))
    assert measure_score_bounds([params]).G == pytest.approx(0.0, abs=1e-12)


def test_log_linear_bounds_scale_with_features(three_state_features):
    params = PolicyParams.log_linear(three_state_features)
    scaled = PolicyParams.log_linear(3 * three_state_features)
    g1 = measure_score_bounds([params], rng=0).G
    g3 = measure_score_bounds([scaled], rng=0).G
    assert g1 <= 2 * params.feature_norm_bound
    assert g3 > g1


def test_empty_sample_list():
    with pytest.raises(InvalidParameterError):
        measure_score_bounds([])


@pytest.mark.parametrize("build", [
    lambda: PolicyParams.tabular(2, 2, np.zeros(5)),
    lambda: PolicyParams(np.zeros(3), "log_linear", 2, 2, np.zeros((2, 2, 4))),
    lambda: PolicyParams.log_linear(np.zeros((2, 2))),
    lambda: PolicyParams(np.zeros(4), "neural", 2, 2),
    lambda: PolicyParams.from_policy_table([[1.0, 0.0]]),
])
def test_invalid_params(build):
    with pytest.raises(InvalidParameterError):
        build()


def test_from_policy_table_round_trip():
    table = np.array([[0.2, 0.8], [0.6, 0.4]])
    np.testing.assert_allclose(PolicyParams.from_policy_table(table).prob_table(), table, atol=1e-15)


def test_theta_is_read_only():
    params = PolicyParams.tabular(1, 2)
    with pytest.raises(ValueError):
        params.theta[0] = 1.0


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 8, elements=st.floats(-10, 10)), st.integers(0, 10 ** 6))
def test_entropy_bounded_by_log_a(theta, seed):
    spec = random_spec(np.random.default_rng(seed), 4, 2, gamma=0.9)
    params = PolicyParams.tabular(4, 2, theta)
    if np.any(params.prob_table() <= 0):
        return
    assert entropy(spec, params) <= math.log(2) / (1 - 0.9) + 1e-10
