import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdr_anpg.cmdp import (BUNDLED, CmdpSpec, UtilityFn, accumulate_utility, check_generator, cumulative,
                           geometric_from_uniform, load_cmdp, load_features, rollout, sample_geometric_horizon,
                           sample_utility_sums)
from pdr_anpg.exceptions import CmdpValidationError, DomainError, InvalidParameterError
from pdr_anpg.oracle import occupancy, policy_evaluation
from pdr_anpg.policy import PolicyParams

from conftest import chain_spec, random_policy, random_spec


def one_state(gamma=0.5):
    return CmdpSpec(reward=[[1.0]], cost=[[0.0]], transition=[[[1.0]]], gamma=gamma, rho=[1.0])


def doc_of(spec):
    return json.loads(json.dumps(spec.to_dict()))


# ---------------------------------------------------------------- validation

def test_round_trip_through_json(three_state):
    again = CmdpSpec.from_dict(doc_of(three_state))
    np.testing.assert_array_equal(again.transition, three_state.transition)
    assert again.gamma == three_state.gamma


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d["transition"][1][0].__setitem__(0, d["transition"][1][0][0] + 0.1), "transition[1][0]"),
    (lambda d: d["transition"][0][1].__setitem__(2, -0.2), "transition[0][1][2]"),
    (lambda d: d["reward"][2].__setitem__(1, 1.5), "reward[2][1]"),
    (lambda d: d["cost"][0].__setitem__(0, -1.01), "cost[0][0]"),
    (lambda d: d.__setitem__("rho", [0.5, 0.5, 0.5]), "rho"),
    (lambda d: d.__setitem__("gamma", 1.0), "gamma"),
    (lambda d: d["transition"][2].pop(), "transition[2]"),
    (lambda d: d["reward"][1].__setitem__(0, "x"), "reward[1][0]"),
    (lambda d: d.pop("cost"), "cost"),
])
def test_validation_names_index_path(three_state, mutate, path):
    doc = doc_of(three_state)
    mutate(doc)
    with pytest.raises(CmdpValidationError) as info:
        CmdpSpec.from_dict(doc)
    assert info.value.path == path
    assert str(info.value).startswith(path)


@pytest.mark.parametrize("excess, ok", [(5e-13, True), (5e-12, False)])
def test_row_sum_tolerance(excess, ok):
    p = np.array([[[0.5, 0.5 + excess]], [[1.0, 0.0]]])
    kwargs = dict(reward=[[0.0], [0.0]], cost=[[0.0], [0.0]], transition=p, gamma=0.5, rho=[1.0, 0.0])
    if ok:
        CmdpSpec(**kwargs)
    else:
        with pytest.raises(CmdpValidationError, match=r"transition\[0\]\[0\]"):
            CmdpSpec(**kwargs)


def test_spec_arrays_are_read_only(three_state):
    with pytest.raises(ValueError):
        three_state.reward[0, 0] = 0.3


def test_missing_file_names_path(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(InvalidParameterError, match="nope.json"):
        load_cmdp(missing)


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_instances_load(name):
    spec = load_cmdp(f"bundled:{name}")
    assert spec.name == name


def test_features_loaded_with_shape(three_state_features):
    assert three_state_features.shape == (3, 2, 3)
    assert load_features("bundled:bandit") is None


def test_cumulative_pins_last_entry():
    cum = cumulative([[0.1, 0.2, 0.7]])
    assert cum[0, -1] == 1.0


# ---------------------------------------------------------------- geometric horizon

def test_gamma_zero_gives_zero():
    rng = check_generator(0)
    assert all(sample_geometric_horizon(0.0, rng) == 0 for _ in range(100))


@pytest.mark.parametrize("u, expected", [(0.05, 0), (0.0999, 0), (0.1001, 1), (0.1899, 1), (0.2, 2), (0.0, 0)])
def test_inverse_cdf_cells(u, expected):
    # P(T <= j) = 1 - 0.9^(j+1): cells [0, 0.1], (0.1, 0.19], (0.19, 0.271], ...
    assert geometric_from_uniform(0.9, u) == expected


@pytest.mark.parametrize("gamma", [1.0, 1.5, -0.1])
def test_invalid_gamma(gamma):
    with pytest.raises(InvalidParameterError):
        sample_geometric_horizon(gamma, check_generator(0))


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.0, 0.999999))
def test_inverse_cdf_is_smallest_index(gamma, u):
    j = geometric_from_uniform(gamma, u)
    assert 1 - gamma ** (j + 1) >= u - 1e-12
    if j > 0:
        assert 1 - gamma ** j < u + 1e-12


def test_geometric_mean_at_gamma_09():
    rng = check_generator(123)
    draws = np.array([sample_geometric_horizon(0.9, rng) for _ in range(10 ** 6)])
    # E[T] = gamma / (1 - gamma) = 9.
    assert abs(draws.mean() - 9.0) < 0.05


def test_geometric_pmf_matches():
    rng = check_generator(7)
    draws = np.array([sample_geometric_horizon(0.5, rng) for _ in range(200_000)])
    for j in range(5):
        p = 0.5 * 0.5 ** j
        se = math.sqrt(p * (1 - p) / draws.size)
        assert abs((draws == j).mean() - p) < 4 * se


# ---------------------------------------------------------------- rollouts

def test_single_path_rollout():
    spec = one_state()
    traj = rollout(spec, [[1.0]], start=0, horizon=3, rng=0)
    assert traj.steps == [(0, 0)] * 4
    assert traj.horizon == 3 and len(traj) == 4


def test_deterministic_chain_hand_trace():
    spec = chain_spec()
    traj = rollout(spec, [[0.0, 1.0], [0.0, 1.0]], start=0, horizon=2, rng=0)
    assert traj.steps == [(0, 1), (1, 1), (1, 1)]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fixed_start_pair(three_state, seed):
    pi = random_policy(np.random.default_rng(seed), 3, 2)
    traj = rollout(three_state, pi, start=(1, 0), horizon=4, rng=seed)
    assert traj.steps[0] == (1, 0)


def test_rollout_steps_follow_support(three_state):
    rng = check_generator(5)
    pi = random_policy(np.random.default_rng(5), 3, 2)
    for _ in range(50):
        traj = rollout(three_state, pi, rng=rng)
        for (s, a), (s2, _) in zip(traj.steps, traj.steps[1:]):
            assert three_state.transition[s, a, s2] > 0


def test_rollout_determinism(three_state):
    pi = random_policy(np.random.default_rng(1), 3, 2)
    a = rollout(three_state, pi, rng=42)
    b = rollout(three_state, pi, rng=42)
    assert a.steps == b.steps


@pytest.mark.parametrize("start", [(3, 0), (0, 2), 5, "somewhere"])
def test_rollout_bad_start(three_state, start):
    with pytest.raises(InvalidParameterError):
        rollout(three_state, np.full((3, 2), 0.5), start=start, horizon=1, rng=0)


def test_policy_shape_mismatch(three_state):
    with pytest.raises(InvalidParameterError):
        rollout(three_state, np.full((2, 2), 0.5), rng=0)


# ---------------------------------------------------------------- utilities

def test_accumulate_zero_and_constant():
    spec = one_state()
    traj = rollout(spec, [[1.0]], start=0, horizon=4, rng=0)
    assert accumulate_utility(traj, np.zeros((1, 1))) == 0.0
    assert accumulate_utility(traj, np.ones((1, 1))) == 5.0


def test_utility_kinds(three_state):
    params = PolicyParams.tabular(3, 2, np.arange(6.0))
    assert UtilityFn.reward()(three_state, 1, 0) == three_state.reward[1, 0]
    assert UtilityFn.cost()(three_state, 1, 0) == three_state.cost[1, 0]
    assert UtilityFn.combined(2.0)(three_state, 2, 1) == pytest.approx(
        three_state.reward[2, 1] + 2 * three_state.cost[2, 1])
    expected = three_state.reward[0, 1] + 0.5 * three_state.cost[0, 1] - 0.3 * params.log_prob_table()[0, 1]
    assert UtilityFn.regularized(0.5, 0.3, params)(three_state, 0, 1) == pytest.approx(expected)


def test_regularized_needs_positive_policy(three_state):
    class Degenerate:
        def log_prob_table(self):
            return np.log(np.array([[1.0, 0.0]] * 3))

    with np.errstate(divide="ignore"):
        with pytest.raises(DomainError):
            UtilityFn.regularized(0.0, 1.0, Degenerate()).table(three_state)


def test_accumulate_needs_spec_for_utility_fn():
    traj = rollout(one_state(), [[1.0]], start=0, horizon=1, rng=0)
    with pytest.raises(InvalidParameterError):
        accumulate_utility(traj, UtilityFn.reward())


def test_batched_sums_equal_sequential_rollouts(three_state):
    pi = random_policy(np.random.default_rng(2), 3, 2)
    rng = check_generator(99)
    seq = [accumulate_utility(rollout(three_state, pi, rng=rng), three_state.cost) for _ in range(200)]
    batch = sample_utility_sums(three_state, pi, three_state.cost, 200, rng=99)
    # Same draws; only the summation order differs.
    np.testing.assert_allclose(batch.totals, seq, rtol=0, atol=1e-12)


def test_mean_reward_sum_at_gamma_half():
    spec = one_state(0.5)
    sums = sample_utility_sums(spec, [[1.0]], spec.reward, 10 ** 6, rng=11)
    # E[T + 1] = 1 / (1 - gamma) = 2.
    assert abs(sums.totals.mean() - 2.0) < 0.01


@pytest.mark.parametrize("seed", range(3))
def test_unbiased_discounting(seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, 4, 3, gamma=0.8)
    pi = random_policy(rng, 4, 3)
    g = rng.uniform(-1, 1, (4, 3))
    sums = sample_utility_sums(spec, pi, g, 10 ** 5, rng=seed)
    se = sums.totals.std(ddof=1) / math.sqrt(10 ** 5)
    assert abs(sums.totals.mean() - policy_evaluation(spec, pi, g).j_value) < 4 * se


@pytest.mark.parametrize("seed", range(3))
def test_terminal_state_follows_occupancy(seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, 4, 2, gamma=0.9)
    pi = random_policy(rng, 4, 2)
    sums = sample_utility_sums(spec, pi, np.zeros((4, 2)), 10 ** 5, rng=seed)
    freq = np.bincount(sums.last_states, minlength=4) / 10 ** 5
    assert 0.5 * np.abs(freq - occupancy(spec, pi)).sum() < 0.01
