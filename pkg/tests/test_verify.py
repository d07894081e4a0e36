import numpy as np
import pytest

from pdr_anpg.cmdp import BUNDLED, load_cmdp
from pdr_anpg.exceptions import InvalidParameterError
from pdr_anpg.policy import PolicyParams
from pdr_anpg.verify import CHECKS, CheckResult, VerifyConfig, run_checks, second_moment_dominance

FAST = dict(n_probes=30, n_samples=20000, n_unbiased_tuples=3, n_variance_tuples=2)


@pytest.mark.parametrize("name", BUNDLED)
def test_all_checks_pass_tabular(name):
    results = run_checks(load_cmdp(f"bundled:{name}"), cfg=VerifyConfig(**FAST))
    assert [r.name for r in results] == list(CHECKS)
    failed = [r.line() for r in results if not r.passed]
    assert not failed


def test_all_checks_pass_log_linear(three_state, three_state_features):
    results = run_checks(three_state, three_state_features, VerifyConfig(**FAST))
    assert all(r.passed for r in results), [r.line() for r in results]


def test_pinned_probe(three_state):
    results = run_checks(three_state, cfg=VerifyConfig(tau=0.0, lam=0.0, **FAST))
    assert all(r.passed for r in results)


def test_seeded_results_repeat(bandit):
    cfg = VerifyConfig(checks=["estimator_unbiased", "sample_count"], **FAST)
    a = [r.margin for r in run_checks(bandit, cfg=cfg)]
    b = [r.margin for r in run_checks(bandit, cfg=cfg)]
    assert a == b


def test_check_order_does_not_matter(bandit):
    one = run_checks(bandit, cfg=VerifyConfig(checks=["sample_count", "advantage_bound"], **FAST))
    two = run_checks(bandit, cfg=VerifyConfig(checks=["advantage_bound", "sample_count"], **FAST))
    assert one[0].margin == two[1].margin and one[1].margin == two[0].margin


def test_result_line():
    assert CheckResult("x", True, 0.5).line() == "PASS x margin=5.000e-01"
    assert CheckResult("y", False, -1.0, "why").line() == "FAIL y margin=-1.000e+00 (why)"


def test_config_parsing():
    cfg = VerifyConfig.from_dict({"lambda": 0.3, "checks": ["sample_count"]})
    assert cfg.lam == 0.3 and cfg.checks == ["sample_count"]
    with pytest.raises(InvalidParameterError):
        VerifyConfig.from_dict({"bogus": 1})
    with pytest.raises(InvalidParameterError):
        VerifyConfig.from_dict({"checks": ["nope"]})


def test_second_moment_dominance_direct(three_state):
    params = PolicyParams.tabular(3, 2, [0.5, -0.5, 0.0, 1.0, 0.2, -0.3])
    gap, radius, gap_range = second_moment_dominance(three_state, params, 0.5, 0.2, np.sqrt(2), 1e-3,
                                                     20000, np.random.default_rng(0))
    assert gap + radius >= 0
    assert gap_range >= gap - 1e-12
