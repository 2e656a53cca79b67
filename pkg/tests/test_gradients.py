import numpy as np
import pytest

from nashbid import gradients
from nashbid.enums import GradientTerm
from nashbid.exceptions import GradientError
from nashbid.gradients import (
    assemble,
    baseline_groups,
    build_bundle,
    episode_scores,
    focal_policy_gradient,
    grad_L1,
    grad_Lg_prime,
    grad_Ls,
    grad_Lw_star,
    grouped_baseline,
    leave_one_out_baseline,
    score_sum,
)
from nashbid.oracle import finite_difference_term
from nashbid.rollout import rollout_shared, rollout_weighted
from nashbid.validation import check_exact_estimators, check_policies, check_update_algebra, random_policy


@pytest.fixture
def vectors(rng):
    return rng.normal(size=(4, 7))


@pytest.mark.gradients
def test_assemble_matches_formula(vectors):
    l1, ls, lg_prime, lw_star = vectors
    xi, lambda_bar = 0.7, 2.5
    delta_theta, delta_nu = assemble(l1, ls, lg_prime, lw_star, xi, lambda_bar)
    factor = 1.0 - xi / lambda_bar
    np.testing.assert_allclose(delta_theta, xi * lw_star + factor * ls - l1, rtol=1e-15, atol=1e-15)
    np.testing.assert_allclose(delta_nu, factor * lg_prime, rtol=1e-15, atol=1e-15)


@pytest.mark.gradients
def test_assemble_without_multipliers(vectors):
    l1, ls, lg_prime, lw_star = vectors
    delta_theta, delta_nu = assemble(l1, ls, lg_prime, lw_star, 1.0, 0.0)
    np.testing.assert_array_equal(delta_theta, -l1)
    np.testing.assert_array_equal(delta_nu, np.zeros_like(l1))


@pytest.mark.gradients
def test_assemble_clamped_factor(vectors):
    l1, ls, lg_prime, lw_star = vectors
    delta_theta, delta_nu = assemble(l1, ls, lg_prime, lw_star, 2.0, 0.5, clamp_competitive_factor=True)
    np.testing.assert_allclose(delta_theta, 2.0 * lw_star - l1)
    np.testing.assert_array_equal(delta_nu, np.zeros_like(l1))

    unclamped, _ = assemble(l1, ls, lg_prime, lw_star, 2.0, 0.5)
    np.testing.assert_allclose(unclamped, 2.0 * lw_star - 3.0 * ls - l1)


@pytest.mark.gradients
@pytest.mark.parametrize(
    "kwargs",
    [
        {"xi": 0.0, "lambda_bar": 1.0},
        {"xi": 1.0, "lambda_bar": -1.0},
        {"xi": 1.0, "lambda_bar": np.inf},
    ],
)
def test_assemble_rejects_bad_scalars(vectors, kwargs):
    with pytest.raises(GradientError):
        assemble(*vectors, **kwargs)


@pytest.mark.gradients
def test_assemble_rejects_mismatched_terms(vectors):
    l1, ls, lg_prime, lw_star = vectors
    with pytest.raises(GradientError):
        assemble(l1[:3], ls, lg_prime, lw_star, 1.0, 1.0)


@pytest.mark.gradients
def test_bundle_norms(vectors):
    bundle = build_bundle(*vectors, 1.0, 2.0)
    assert bundle.norm_theta == pytest.approx(np.linalg.norm(bundle.delta_theta))
    assert bundle.norm_nu == pytest.approx(np.linalg.norm(bundle.delta_nu))


@pytest.mark.gradients
def test_update_algebra_check(rng):
    result = check_update_algebra(rng, cases=1000)
    assert result.passed, result


@pytest.mark.gradients
def test_leave_one_out_baseline():
    weights = np.array([[[1.0]], [[2.0]], [[6.0]]])
    mask = np.array([[[True]], [[True]], [[False]]])
    baseline = leave_one_out_baseline(weights, mask)
    np.testing.assert_allclose(baseline[:, 0, 0], [2.0, 1.0, 1.5])


@pytest.mark.gradients
def test_estimator_input_checks(desk_market, rng):
    theta = random_policy(desk_market, rng)
    shared = rollout_shared(theta, desk_market, 8, rng)
    with pytest.raises(GradientError):
        grad_L1(shared, [0.1, 0.2], theta)
    with pytest.raises(GradientError):
        grad_L1(shared, [0.1, -0.2, 0.3], theta)
    with pytest.raises(GradientError):
        grad_Lw_star(shared, theta)
    with pytest.raises(GradientError):
        grad_Ls(shared, -1.0, theta)


@pytest.mark.gradients
def test_competitive_terms_vanish_without_multipliers(desk_market, rng):
    theta = random_policy(desk_market, rng)
    batch = rollout_weighted(theta, theta, [0.2, 0.3, 0.5], desk_market, 8, rng)
    np.testing.assert_array_equal(grad_Ls(batch, 0.0, theta), np.zeros(theta.arch.size))
    np.testing.assert_array_equal(grad_Lg_prime(batch, 0.0, theta), np.zeros(theta.arch.size))
    np.testing.assert_allclose(grad_Ls(batch, 2.0, theta), 2.0 * grad_Lw_star(batch, theta))
    np.testing.assert_allclose(grad_Lg_prime(batch, 2.0, theta), 2.0 * focal_policy_gradient(batch, theta))


@pytest.mark.gradients
def test_estimates_are_finite(desk_market, rng):
    theta = random_policy(desk_market, rng)
    shared = rollout_shared(theta, desk_market, 16, rng)
    weighted = rollout_weighted(theta, theta, [1 / 3] * 3, desk_market, 16, rng)
    for grad in (
        grad_L1(shared, [0.0, 0.5, 1.0], theta),
        grad_Lw_star(weighted, theta, baseline=False),
        focal_policy_gradient(weighted, theta),
    ):
        assert grad.shape == (theta.arch.size,)
        assert np.all(np.isfinite(grad))


@pytest.mark.gradients
@pytest.mark.oracle
@pytest.mark.slow
def test_exact_estimators_match_finite_differences(tiny, rng):
    results = check_exact_estimators(tiny, rng)
    assert {r.name for r in results} == {f"exact_estimator_{term}" for term in GradientTerm}
    assert all(r.passed for r in results), [r for r in results if not r.passed]


@pytest.mark.gradients
def test_grouped_baseline(monkeypatch):
    values = np.array([1.0, 2.0, 3.0, 10.0])
    groups = np.array([0, 0, 0, 1])
    fallback = np.full(4, -1.0)
    np.testing.assert_array_equal(grouped_baseline(values, groups, fallback), fallback)

    monkeypatch.setattr(gradients, "GROUP_MIN_OTHERS", 1)
    np.testing.assert_allclose(grouped_baseline(values, groups, fallback), [2.5, 2.0, 1.5, -1.0])


@pytest.mark.gradients
def test_baseline_groups_ignore_own_action(tiny_market, rng):
    theta = random_policy(tiny_market, rng)
    batch = rollout_weighted(theta, theta, [0.5, 0.5], tiny_market, 64, rng)
    mask = batch.active
    groups = baseline_groups(batch, mask)
    episode, t, agent = np.nonzero(mask)
    assert groups.shape == episode.shape
    for g in np.unique(groups):
        members = groups == g
        assert np.unique(t[members]).size == 1
        assert np.unique(agent[members]).size == 1
        assert np.unique(batch.focal_agents[episode[members]]).size == 1


@pytest.mark.gradients
def test_episode_scores_average_to_score_sum(tiny_market, rng):
    theta = random_policy(tiny_market, rng)
    batch = rollout_shared(theta, tiny_market, 32, rng)
    weights = batch.reward_to_go
    per_episode = episode_scores(theta, batch, weights, batch.active)
    assert per_episode.shape == (32, theta.arch.size)
    expected = score_sum(theta, batch, weights, batch.active)
    np.testing.assert_allclose(per_episode.mean(axis=0), expected, atol=1e-12)


@pytest.mark.gradients
@pytest.mark.oracle
@pytest.mark.slow
def test_sampled_estimators_match_finite_differences(tiny):
    rng = np.random.default_rng(5)
    episodes = 20_000
    lambdas = np.array([0.3, 0.7])
    lambda_bar = float(lambdas.sum())
    kappa = lambdas / lambda_bar
    theta, rho = check_policies(tiny, rng, episodes, lambdas)
    shared = rollout_shared(theta, tiny.market, episodes, rng)
    weighted = rollout_weighted(rho, theta, kappa, tiny.market, episodes, rng)

    pairs = [
        (
            grad_L1(shared, lambdas, theta),
            finite_difference_term(GradientTerm.L1, theta, tiny, lambdas=lambdas),
        ),
        (
            grad_Ls(weighted, lambda_bar, theta),
            finite_difference_term(GradientTerm.LS, theta, tiny, rho=rho, lambdas=lambdas),
        ),
        (
            grad_Lg_prime(weighted, lambda_bar, rho),
            finite_difference_term(GradientTerm.LG_PRIME, theta, tiny, rho=rho, lambdas=lambdas),
        ),
        (
            grad_Lw_star(weighted, theta),
            finite_difference_term(GradientTerm.LW_STAR, theta, tiny, rho=rho, kappa=kappa),
        ),
    ]
    for estimate, reference in pairs:
        assert np.linalg.norm(estimate - reference) / np.linalg.norm(reference) < 0.05
