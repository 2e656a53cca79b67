import numpy as np
import pytest

from nashbid.baselines import (
    TRAINERS,
    bpg_zero_direction,
    train_bpg_zero,
    train_fully_cooperative,
    train_independent,
)
from nashbid.enums import BaselineKind, Method
from nashbid.gradients import grad_L1
from nashbid.rollout import rollout_focal, rollout_shared
from nashbid.validation import random_policy


@pytest.mark.baselines
def test_every_baseline_has_a_trainer():
    assert set(TRAINERS) == set(BaselineKind)
    assert {str(kind) for kind in BaselineKind} < {str(method) for method in Method}


@pytest.mark.baselines
@pytest.mark.parametrize("kind", list(BaselineKind))
def test_baselines_run(kind, tiny_market, fast_train):
    records = []
    result = TRAINERS[kind](tiny_market, fast_train, on_iteration=records.append)
    assert len(result.history) == fast_train.max_outer_iters
    assert records == result.history
    for record in result.history:
        assert len(record.lambdas) == tiny_market.n_agents
        assert np.isfinite(record.sw)


@pytest.mark.baselines
def test_fully_cooperative_has_no_multipliers(tiny_market, fast_train):
    result = train_fully_cooperative(tiny_market, fast_train)
    assert all(record.lambda_bar == 0 for record in result.history)
    assert all(record.g_xstar == [] for record in result.history)
    assert result.profile is result.theta


@pytest.mark.baselines
def test_bpg_zero_keeps_responses_apart(tiny_market, fast_train):
    result = train_bpg_zero(tiny_market, fast_train)
    assert len(result.responses) == tiny_market.n_agents
    assert result.agent_policies == []
    assert result.profile is result.theta
    assert result.dual is not None
    assert np.all(result.dual.lambdas >= 0)
    for record in result.history:
        assert len(record.g_xstar) == tiny_market.n_agents


@pytest.mark.baselines
def test_independent_learners_keep_one_policy_per_agent(tiny_market, fast_train):
    result = train_independent(tiny_market, fast_train)
    assert len(result.agent_policies) == tiny_market.n_agents
    assert result.profile == result.agent_policies
    assert result.theta == result.agent_policies[0]


@pytest.mark.baselines
def test_baselines_are_deterministic(tiny_market, fast_train):
    first = train_bpg_zero(tiny_market, fast_train)
    second = train_bpg_zero(tiny_market, fast_train)
    assert [r.to_json_line() for r in first.history] == [r.to_json_line() for r in second.history]


@pytest.mark.baselines
def test_bpg_zero_direction_without_multipliers(desk_market, rng):
    theta = random_policy(desk_market, rng)
    shared = rollout_shared(theta, desk_market, 8, rng)
    focal = [rollout_focal(theta, theta, i, desk_market, 4, rng) for i in range(desk_market.n_agents)]
    lambdas = np.zeros(desk_market.n_agents)
    np.testing.assert_array_equal(
        bpg_zero_direction(shared, focal, lambdas, theta), -grad_L1(shared, lambdas, theta)
    )
