import numpy as np
import pytest
from pydantic import ValidationError

from nashbid.exceptions import MarketError
from nashbid.market import (
    Impression,
    auction,
    initial_state_from_bases,
    resolve_step,
    sample_initial_state,
    step,
)
from nashbid.models import MarketConfig
from nashbid.rollout import rollout_shared
from nashbid.validation import check_equivariance, random_policy


def _impression(values):
    values = np.asarray(values, dtype=float)
    return Impression(feature=np.ones(values.size), values=values)


@pytest.mark.market
@pytest.mark.parametrize(
    "bids, reserve, winner, price",
    [
        ([1.0, 0.8, 0.2], 0.05, 0, 0.8),  # second price
        ([0.2, 1.0, 0.01], 0.05, 1, 0.2),
        ([0.01, 1.0, 0.02], 0.05, 1, 0.05),  # single qualifying bid pays the reserve
        ([0.05, 0.01], 0.05, None, 0.0),  # bids at the reserve do not qualify
        ([1.0, 1.0], 0.05, 0, 1.0),  # ties go to the lowest index
        ([0.3, 0.9, 0.9], 0.05, 1, 0.9),
    ],
)
def test_auction(bids, reserve, winner, price):
    outcome = auction(bids, _impression([2.0] * len(bids)), reserve)
    assert outcome.winner == winner
    assert outcome.price == pytest.approx(price)
    if winner is None:
        assert not outcome.per_agent_cost.any()
        assert not outcome.per_agent_reward.any()
    else:
        assert outcome.per_agent_cost.sum() == pytest.approx(price)
        assert outcome.per_agent_reward[winner] == 2.0


@pytest.mark.market
def test_unaffordable_winner_is_skipped():
    market = MarketConfig(
        n_agents=2, horizon=1, impressions_per_step=1, budgets=[0.5, 5.0], bid_levels=[0.0, 1.0]
    )
    state = initial_state_from_bases(market, [1.0, 1.0])
    result = resolve_step(state, [1, 1], [_impression([2.0, 1.0])], market)

    np.testing.assert_allclose(result.rewards, [0.0, 1.0])
    np.testing.assert_allclose(result.costs, [0.0, market.reserve_price])
    assert result.next_state.is_terminal
    assert not result.next_state.active_mask().any()
    assert result.next_state.budgets_remaining()[1] == pytest.approx(5.0 - market.reserve_price)


@pytest.mark.market
def test_budget_below_reserve_starts_inactive():
    market = MarketConfig(n_agents=2, horizon=2, budgets=[0.01, 1.0], reserve_price=0.05)
    state = initial_state_from_bases(market, [1.0, 1.0])
    assert state.active_mask().tolist() == [False, True]


@pytest.mark.market
def test_step_errors(desk_market, rng):
    state = sample_initial_state(desk_market, rng)
    with pytest.raises(MarketError):
        step(state, [0, 1], desk_market, rng)
    with pytest.raises(MarketError):
        step(state, [0, 1, desk_market.n_actions], desk_market, rng)

    for _ in range(desk_market.horizon):
        state = step(state, [1, 1, 1], desk_market, rng).next_state
    assert state.is_terminal
    with pytest.raises(MarketError):
        step(state, [1, 1, 1], desk_market, rng)


@pytest.mark.market
def test_spend_never_exceeds_budget(desk_market, rng):
    theta = random_policy(desk_market, rng, scale=2.0)
    batch = rollout_shared(theta, desk_market, 50, rng)
    spent = batch.costs.sum(axis=1)
    assert np.all(spent <= desk_market.budget_array() + 1e-12)
    assert np.all(batch.rewards >= 0)


@pytest.mark.market
def test_same_seed_same_step(desk_market):
    first = sample_initial_state(desk_market, np.random.default_rng(7))
    second = sample_initial_state(desk_market, np.random.default_rng(7))
    assert first == second

    a = step(first, [2, 3, 4], desk_market, np.random.default_rng(3))
    b = step(second, [2, 3, 4], desk_market, np.random.default_rng(3))
    np.testing.assert_array_equal(a.rewards, b.rewards)
    np.testing.assert_array_equal(a.costs, b.costs)
    assert a.next_state == b.next_state


@pytest.mark.market
def test_permuted_state_and_market(desk_market, rng):
    perm = [2, 0, 1]
    state = sample_initial_state(desk_market, rng)
    moved = state.permuted(perm)
    moved_market = desk_market.permuted(perm)
    for i, j in enumerate(perm):
        assert moved.locals[j].agent_index == j
        assert moved.locals[j].budget == state.locals[i].budget
        assert moved_market.budgets[j] == desk_market.budgets[i]

    with pytest.raises(ValueError):
        desk_market.permuted([0, 0, 1])


@pytest.mark.market
def test_equivariance(desk_market, rng):
    result = check_equivariance(desk_market, rng, cases=100)
    assert result.passed, result


@pytest.mark.market
@pytest.mark.parametrize(
    "overrides, field",
    [
        ({"bid_levels": [0.0, 1.0, 1.0]}, "bid_levels"),
        ({"bid_levels": [1.0]}, "bid_levels"),
        ({"n_agents": 2, "budgets": [1.0, 2.0, 3.0]}, None),
        ({"value_model": {"base_low": 2.0, "base_high": 1.0}}, "value_model"),
        ({"value_model": {"base_atoms": [1.0, 2.0], "base_probs": [0.3, 0.3]}}, "value_model"),
    ],
)
def test_market_validation(overrides, field):
    with pytest.raises(ValidationError) as excinfo:
        MarketConfig(**overrides)
    if field is not None:
        assert excinfo.value.errors()[0]["loc"][0] == field


@pytest.mark.market
def test_default_budgets_follow_agent_count():
    market = MarketConfig(n_agents=4)
    assert market.budgets == [5.0] * 4
    assert market.n_actions == 5
