import numpy as np
import pytest

from nashbid.bpg import (
    ConvergenceMonitor,
    DualState,
    bpg_train,
    dual_ascent,
    dual_update,
    primal_update,
    train_unified_solution,
)
from nashbid.exceptions import DualUpdateError, GradientError
from nashbid.gradients import build_bundle
from nashbid.oracle import TinyConfig, exact_best_response, exact_unified_ratios, exact_weighted_return
from nashbid.validation import random_policy


@pytest.mark.bpg
def test_dual_update():
    dual = dual_update([3.0, 1.0], [1.0, 1.0], epsilon_norm=0.1, social_welfare=2.0)
    np.testing.assert_allclose(dual.lambdas, [1.8, 0.0])
    assert dual.lambda_bar == pytest.approx(1.8)
    np.testing.assert_allclose(dual.kappas, [1.0, 0.0])
    assert not dual.degenerate


@pytest.mark.bpg
def test_dual_update_raw_epsilon():
    dual = dual_update([3.0, 1.5], [1.0, 1.0], epsilon_norm=0.25, social_welfare=2.0, raw_epsilon=True)
    np.testing.assert_allclose(dual.lambdas, [1.75, 0.25])
    np.testing.assert_allclose(dual.kappas, [0.875, 0.125])


@pytest.mark.bpg
def test_dual_update_degenerate():
    dual = dual_update([1.0, 1.0, 1.0], [1.0, 2.0, 3.0], epsilon_norm=0.0, social_welfare=6.0)
    assert dual.degenerate
    assert dual.lambda_bar == 0
    np.testing.assert_allclose(dual.kappas, [1 / 3] * 3)


@pytest.mark.bpg
@pytest.mark.parametrize(
    "g_xstar, g_theta, social_welfare",
    [
        ([1.0, 2.0], [1.0, 1.0], 0.0),
        ([1.0, np.nan], [1.0, 1.0], 2.0),
        ([1.0], [1.0, 1.0], 2.0),
    ],
)
def test_dual_update_errors(g_xstar, g_theta, social_welfare):
    with pytest.raises(DualUpdateError):
        dual_update(g_xstar, g_theta, 0.1, social_welfare)


@pytest.mark.bpg
def test_dual_ascent():
    dual = dual_ascent([0.5, 0.0], [2.0, 1.0], [1.0, 1.0], 0.1, 2.0, step=1.0)
    np.testing.assert_allclose(dual.lambdas, [1.3, 0.0])
    dual = dual_ascent([0.5, 0.0], [2.0, 1.0], [1.0, 1.0], 0.1, 2.0, step=0.5)
    np.testing.assert_allclose(dual.lambdas, [0.9, 0.0])


@pytest.mark.bpg
def test_dual_state_initial():
    dual = DualState.initial(4, 0.08)
    assert dual.degenerate
    np.testing.assert_allclose(dual.kappas, [0.25] * 4)


@pytest.mark.bpg
def test_primal_update(desk_market, rng):
    theta, nu = random_policy(desk_market, rng), random_policy(desk_market, rng)
    l1, ls, lg_prime, lw_star = rng.normal(size=(4, theta.arch.size))
    bundle = build_bundle(l1, ls, lg_prime, lw_star, 1.0, 3.0)
    new_theta, new_nu = primal_update(theta, nu, bundle, 0.1, 0.2)
    np.testing.assert_array_equal(new_theta.values, theta.values - 0.1 * bundle.delta_theta)
    np.testing.assert_array_equal(new_nu.values, nu.values - 0.2 * bundle.delta_nu)


@pytest.mark.bpg
def test_primal_update_rejects_bad_directions(desk_market, rng):
    theta = random_policy(desk_market, rng)
    size = theta.arch.size
    zeros = np.zeros(size)
    bad = np.full(size, np.inf)
    with pytest.raises(GradientError):
        primal_update(theta, theta, build_bundle(bad, zeros, zeros, zeros, 1.0, 0.0), 0.1, 0.1)
    short = np.zeros(size - 1)
    with pytest.raises(GradientError):
        primal_update(theta, theta, build_bundle(short, short, short, short, 1.0, 0.0), 0.1, 0.1)


@pytest.mark.bpg
def test_convergence_monitor():
    monitor = ConvergenceMonitor(window=2, tol=1e-3)
    assert not monitor.update(1.0)
    assert not monitor.update(1.0)
    assert monitor.update(1.0)
    assert not monitor.update(2.0)


@pytest.mark.bpg
def test_unified_solution_improves_on_start(tiny_market, fast_train, rng):
    theta = random_policy(tiny_market, rng)
    x_star, g_w = train_unified_solution(theta, [0.5, 0.5], tiny_market, fast_train, rng)
    assert x_star.arch == theta.arch
    assert np.isfinite(g_w)


@pytest.mark.bpg
def test_bpg_train(tiny_market, fast_train):
    records = []
    result = bpg_train(tiny_market, fast_train, on_iteration=records.append)

    assert len(result.history) == fast_train.max_outer_iters
    assert records == result.history
    assert [r.iter for r in result.history] == list(range(fast_train.max_outer_iters))
    for record in result.history:
        assert len(record.lambdas) == tiny_market.n_agents
        assert min(record.lambdas) >= 0
        assert record.lambda_bar == pytest.approx(sum(record.lambdas))
        assert record.wall_ms == 0.0
        assert len(record.g_xstar) == tiny_market.n_agents
    assert result.nu is not None
    assert result.x_star is not None
    assert result.profile is result.theta


@pytest.mark.bpg
def test_bpg_train_is_deterministic(tiny_market, fast_train):
    first = bpg_train(tiny_market, fast_train)
    second = bpg_train(tiny_market, fast_train)
    assert [r.to_json_line() for r in first.history] == [r.to_json_line() for r in second.history]
    assert first.theta == second.theta


@pytest.mark.bpg
def test_bpg_train_with_no_iterations(tiny_market, fast_train):
    cfg = fast_train.model_copy(update={"max_outer_iters": 0})
    result = bpg_train(tiny_market, cfg)
    assert result.history == []
    assert result.theta.arch.n_agents == tiny_market.n_agents


@pytest.mark.bpg
@pytest.mark.oracle
@pytest.mark.slow
def test_single_agent_unified_solution_is_near_optimal(tiny_config):
    value_model = tiny_config.market.value_model.model_copy(update={"agent_scales": [1.0]})
    market = tiny_config.market.model_copy(
        update={"n_agents": 1, "budgets": [1.5], "value_model": value_model}
    )
    cfg = tiny_config.train.model_copy(update={"unified_train_iters": 200})
    tiny = TinyConfig.from_market(market)
    rng = np.random.default_rng(0)
    theta = random_policy(market, rng)

    x_star, _ = train_unified_solution(theta, [1.0], market, cfg, rng)
    start = exact_weighted_return(theta, theta, [1.0], tiny)
    reached = exact_weighted_return(x_star, theta, [1.0], tiny)
    _, optimum = exact_best_response(0, theta, tiny)
    assert reached >= start
    assert reached >= 0.9 * optimum


@pytest.mark.bpg
def test_slack_constraint_keeps_multipliers_at_zero(tiny_market, fast_train):
    cfg = fast_train.model_copy(update={"epsilon_norm": 1.0, "episodes_per_estimate": 128})
    result = bpg_train(tiny_market, cfg)
    for record in result.history:
        assert record.lambda_bar == 0.0
        assert record.lambdas == [0.0, 0.0]
        assert record.grad_norm_nu == 0.0
    assert result.dual is not None and result.dual.degenerate


@pytest.mark.bpg
@pytest.mark.oracle
@pytest.mark.slow
def test_unified_solution_ratios_on_tiny(tiny_config):
    market = tiny_config.market
    cfg = tiny_config.train.model_copy(update={"unified_train_iters": 400})
    tiny = TinyConfig.from_market(market)
    rng = np.random.default_rng(0)
    theta = random_policy(market, rng)

    x_star, _ = train_unified_solution(theta, [0.5, 0.5], market, cfg, rng)
    report = exact_unified_ratios(x_star, theta, tiny)
    assert min(report.ratios) >= 0.85, report
