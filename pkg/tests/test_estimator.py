import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pdr_anpg import PDRANPG
from pdr_anpg.cmdp import load_cmdp
from pdr_anpg.estimator import check_cmdp, check_states
from pdr_anpg.exceptions import InvalidParameterError
from pdr_anpg.oracle import j_value


@pytest.fixture(scope="module")
def fitted():
    return PDRANPG(epsilon=0.4).fit("bundled:three_state")


def test_params_round_trip():
    est = PDRANPG(epsilon=0.3, K=5, random_state=2)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin.set_params(mode="stochastic").mode == "stochastic"


def test_unfitted():
    with pytest.raises(NotFittedError):
        PDRANPG().predict_proba()


def test_fitted_attributes(fitted, three_state):
    assert fitted.schedule_.K == 79
    assert len(fitted.records_) == 80
    assert 0 <= fitted.lambda_ <= fitted.schedule_.lambda_max
    assert fitted.n_samples_ > 0 and not fitted.truncated_
    assert fitted.score() == pytest.approx(j_value(three_state, fitted.params_, three_state.reward))
    assert fitted.constraint_value() == pytest.approx(j_value(three_state, fitted.params_, three_state.cost))


def test_predictions(fitted):
    probs = fitted.predict_proba()
    assert probs.shape == (3, 2)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    np.testing.assert_array_equal(fitted.predict_proba([2, 0]), probs[[2, 0]])
    np.testing.assert_array_equal(fitted.predict(), probs.argmax(axis=1))
    assert fitted.predict(1).shape == (1,)


@pytest.mark.parametrize("states", [[3], [-1], [0.5], [[0, 1]]])
def test_bad_states(fitted, states):
    with pytest.raises(InvalidParameterError):
        fitted.predict_proba(states)


def test_inputs_accepted(three_state):
    assert check_cmdp(three_state) is three_state
    assert check_cmdp(three_state.to_dict()).n_states == 3
    assert check_cmdp("bundled:bandit").n_actions == 3
    with pytest.raises(InvalidParameterError):
        check_cmdp(42)
    np.testing.assert_array_equal(check_states(np.int64(1), 3), [1])


def test_log_linear_from_bundled_features():
    est = PDRANPG(epsilon=0.4, policy_kind="log_linear", K=5).fit("bundled:three_state")
    assert est.params_.kind == "log_linear" and est.params_.dim == 3


def test_log_linear_without_features(three_state):
    with pytest.raises(InvalidParameterError):
        PDRANPG(policy_kind="log_linear", K=2).fit(three_state)


def test_unknown_policy_kind(three_state):
    with pytest.raises(InvalidParameterError):
        PDRANPG(policy_kind="mlp", K=2).fit(three_state)


def test_stochastic_fit_is_seeded(three_state):
    a = PDRANPG(epsilon=0.4, mode="stochastic", K=3, H=10, random_state=1).fit(three_state)
    b = PDRANPG(epsilon=0.4, mode="stochastic", K=3, H=10, random_state=1).fit(three_state)
    np.testing.assert_array_equal(a.params_.theta, b.params_.theta)


def test_score_on_other_cmdp(fitted):
    spec = load_cmdp("bundled:three_state")
    other = spec.replace(reward=np.zeros((3, 2)))
    assert fitted.score(other) == 0.0
