import numpy as np
import pytest

from nashbid.enums import GradientTerm
from nashbid.exceptions import OracleBoundError
from nashbid.models import MarketConfig
from nashbid.oracle import (
    ObservationPolicy,
    TinyConfig,
    enumerate_paths,
    estimator_moments,
    exact_best_response,
    exact_expected_estimator,
    exact_focal_returns,
    exact_returns,
    exact_unified_ratios,
    exact_weighted_return,
)
from nashbid.validation import (
    check_best_response,
    check_exact_permutation,
    check_monte_carlo,
    check_score_identity,
    check_weighted_decomposition,
    random_policy,
    run_checks,
)


@pytest.fixture
def theta(tiny_market, rng):
    return random_policy(tiny_market, rng)


@pytest.mark.oracle
def test_desk_market_is_not_enumerable(desk_market):
    with pytest.raises(OracleBoundError, match="impressions_per_step"):
        TinyConfig.from_market(desk_market)


@pytest.mark.oracle
def test_continuous_values_are_not_enumerable():
    market = MarketConfig(n_agents=2, horizon=2, impressions_per_step=1, bid_levels=[0.0, 0.5, 1.0])
    with pytest.raises(OracleBoundError, match="value_model"):
        TinyConfig.from_market(market)


@pytest.mark.oracle
def test_tiny_leaf_count(tiny):
    assert 0 < tiny.leaf_count <= 10_000


@pytest.mark.oracle
def test_exact_returns(theta, tiny):
    returns = exact_returns(theta, tiny)
    assert returns.shape == (tiny.n_agents,)
    np.testing.assert_array_equal(exact_returns([theta, theta], tiny), returns)
    with pytest.raises(OracleBoundError):
        exact_returns([theta], tiny)


@pytest.mark.oracle
def test_focal_returns_against_itself(theta, tiny):
    focal = exact_focal_returns(theta, theta, tiny)
    np.testing.assert_allclose(focal, exact_returns(theta, tiny), atol=1e-12)


@pytest.mark.oracle
def test_weighted_return_with_one_hot_kappa(theta, tiny, rng):
    rho = random_policy(tiny.market, rng)
    focal = exact_focal_returns(rho, theta, tiny)
    for i in range(tiny.n_agents):
        kappa = np.eye(tiny.n_agents)[i]
        assert exact_weighted_return(rho, theta, kappa, tiny) == pytest.approx(focal[i], abs=1e-12)


@pytest.mark.oracle
def test_enumerated_paths_match_exact_returns(theta, tiny):
    paths = enumerate_paths(tiny, theta)
    np.testing.assert_allclose(paths.expected_returns, exact_returns(theta, tiny), atol=1e-12)


@pytest.mark.oracle
def test_zero_bids_earn_nothing(tiny):
    # The lowest bid level never clears the reserve price.
    silent = ObservationPolicy(n_actions=tiny.market.n_actions)
    np.testing.assert_array_equal(exact_returns(silent, tiny), np.zeros(tiny.n_agents))


@pytest.mark.oracle
def test_exact_best_response_beats_the_policy(theta, tiny):
    returns = exact_returns(theta, tiny)
    for i in range(tiny.n_agents):
        policy, value = exact_best_response(i, theta, tiny)
        assert value >= returns[i] - 1e-12
        profile = [policy if j == i else theta for j in range(tiny.n_agents)]
        assert exact_returns(profile, tiny)[i] == pytest.approx(value, abs=1e-12)


@pytest.mark.oracle
def test_exact_unified_ratios(theta, tiny):
    report = exact_unified_ratios(theta, theta, tiny)
    assert len(report.ratios) == tiny.n_agents
    assert all(ratio <= 1 + 1e-12 for ratio in report.ratios)


@pytest.mark.oracle
@pytest.mark.parametrize(
    "check",
    [check_weighted_decomposition, check_exact_permutation, check_score_identity],
)
def test_exact_checks(check, tiny, rng):
    result = check(tiny, rng, cases=2)
    assert result.passed, result


@pytest.mark.oracle
def test_best_response_check(tiny, rng):
    result = check_best_response(tiny, rng, cases=1)
    assert result.passed, result
    assert result.cases == tiny.n_agents


@pytest.mark.oracle
@pytest.mark.slow
def test_run_checks_exact_only(tiny_market):
    report = run_checks(tiny_market, seed=3, exact_only=True)
    assert report.passed, report.failures
    assert not any(check.name.startswith("mc_") for check in report.checks)


@pytest.mark.oracle
def test_run_checks_rejects_desk_market(desk_market):
    with pytest.raises(OracleBoundError):
        run_checks(desk_market, exact_only=True)


@pytest.mark.oracle
@pytest.mark.parametrize("baseline", [False, True])
def test_estimator_moments(theta, tiny, baseline):
    lambdas = np.array([0.3, 0.7])
    mean, variance = estimator_moments(GradientTerm.L1, theta, tiny, lambdas=lambdas, baseline=baseline)
    expected = exact_expected_estimator(GradientTerm.L1, theta, tiny, lambdas=lambdas)
    np.testing.assert_allclose(mean, expected, atol=1e-10)
    assert variance > 0


@pytest.mark.oracle
@pytest.mark.slow
def test_sampled_estimators_within_five_percent(tiny):
    results = check_monte_carlo(tiny, np.random.default_rng(0), episodes=20_000)
    gradient_checks = [r for r in results if r.name in {f"mc_{term}" for term in GradientTerm}]
    assert len(gradient_checks) == len(GradientTerm)
    assert all(r.error < 0.05 for r in gradient_checks), gradient_checks
