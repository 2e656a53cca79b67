import numpy as np
import pytest

from nashbid.exceptions import ExploitabilityError
from nashbid.exploitability import (
    as_profile,
    compliance_rate,
    exploitability_from_returns,
    max_exploitability,
    train_best_response,
)
from nashbid.oracle import TinyConfig, exact_best_response, exact_returns
from nashbid.validation import random_policy


@pytest.mark.exploitability
def test_exploitability_from_returns():
    report = exploitability_from_returns([3.0, 2.0], [2.0, 2.0], epsilon_norm=0.2)
    assert report.social_welfare == 4.0
    np.testing.assert_allclose(report.normalized_gaps, [0.25, 0.0])
    assert report.max_exploitability == pytest.approx(0.25)
    assert report.argmax_agent == 0
    assert not report.compliant

    report = exploitability_from_returns([3.0, 2.0], [2.0, 2.0], epsilon_norm=0.25)
    assert report.compliant


@pytest.mark.exploitability
def test_undertrained_best_response_is_clipped(caplog):
    report = exploitability_from_returns([1.5, 2.2], [2.0, 2.0], epsilon_norm=0.1)
    np.testing.assert_allclose(report.normalized_gaps, [0.0, 0.05])
    assert "underperform" in caplog.text


@pytest.mark.exploitability
@pytest.mark.parametrize(
    "best, returns",
    [
        ([1.0, 1.0], [0.0, 0.0]),
        ([1.0, 1.0], [-1.0, 0.5]),
        ([1.0], [1.0, 1.0]),
    ],
)
def test_exploitability_errors(best, returns):
    with pytest.raises(ExploitabilityError):
        exploitability_from_returns(best, returns, 0.1)


@pytest.mark.exploitability
@pytest.mark.parametrize(
    "results, epsilon, expected",
    [
        ([0.05, 0.1, 0.2], 0.1, 2 / 3),
        ([0.0], 0.0, 1.0),
        ([0.3, 0.4], 0.1, 0.0),
    ],
)
def test_compliance_rate(results, epsilon, expected):
    assert compliance_rate(results, epsilon) == pytest.approx(expected)


@pytest.mark.exploitability
def test_compliance_rate_needs_runs():
    with pytest.raises(ExploitabilityError):
        compliance_rate([], 0.1)


@pytest.mark.exploitability
def test_as_profile(desk_market, rng):
    theta = random_policy(desk_market, rng)
    assert as_profile(theta, 3) == [theta] * 3
    with pytest.raises(ExploitabilityError):
        as_profile([theta, theta], 3)


@pytest.mark.exploitability
def test_best_response_agent_range(tiny_market, fast_train, rng):
    theta = random_policy(tiny_market, rng)
    with pytest.raises(ExploitabilityError):
        train_best_response(2, theta, tiny_market, fast_train, rng)


@pytest.mark.exploitability
def test_best_response_from_warm_start(tiny_market, fast_train, rng):
    theta = random_policy(tiny_market, rng)
    warm = random_policy(tiny_market, rng)
    policy, value = train_best_response(0, theta, tiny_market, fast_train, rng, warm_start=warm, iters=0)
    assert policy == warm
    assert np.isfinite(value)


@pytest.mark.exploitability
def test_max_exploitability_fills_cache(tiny_market, fast_train, rng):
    theta = random_policy(tiny_market, rng)
    cache = {}
    report = max_exploitability(theta, tiny_market, fast_train, rng, cache=cache)
    assert sorted(cache) == [0, 1]
    assert len(report.best_response_returns) == tiny_market.n_agents
    assert len(report.returns_stderr) == tiny_market.n_agents
    assert report.max_exploitability == max(report.normalized_gaps)
    assert report.max_exploitability >= 0
    assert report.revenue > 0
    assert report.br_iters == fast_train.br_iters

    again = max_exploitability(theta, tiny_market, fast_train, rng, cache=cache)
    assert sorted(cache) == [0, 1]
    assert again.epsilon_norm == fast_train.epsilon_norm


@pytest.mark.exploitability
def test_max_exploitability_of_a_profile(tiny_market, fast_train, rng):
    profile = [random_policy(tiny_market, rng), random_policy(tiny_market, rng)]
    report = max_exploitability(profile, tiny_market, fast_train, rng)
    assert len(report.normalized_gaps) == 2


@pytest.mark.exploitability
@pytest.mark.oracle
@pytest.mark.slow
def test_trained_best_response_is_near_exact(tiny_config):
    market, cfg = tiny_config.market, tiny_config.train
    tiny = TinyConfig.from_market(market)
    rng = np.random.default_rng(0)
    theta = random_policy(market, rng)
    for i in range(market.n_agents):
        rho, _ = train_best_response(i, theta, market, cfg, rng)
        learned = exact_returns([rho if j == i else theta for j in range(market.n_agents)], tiny)[i]
        _, best = exact_best_response(i, theta, tiny)
        assert learned >= 0.9 * best
