"""Score-function estimators of the four policy-gradient terms and their assembly.

``grad_L1`` is the cooperative term computed on shared rollouts. ``grad_Ls``, ``grad_Lg_prime`` and
``grad_Lw_star`` are competitive terms computed on weighted rollouts, where the focal agent of each
episode is drawn from ``kappa = lambda / lambda_bar``. Averaging over that draw turns the per-agent sums
into a single estimator whose cost does not grow with the number of agents.

All estimators return ascent directions of their objective; :func:`assemble` turns them into the
descent directions applied by the primal update.
"""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .exceptions import GradientError
from .policy import PolicyParams, entry_scores, weighted_score
from .rollout import TrajectoryBatch

KEY_DECIMALS = 9
GROUP_MIN_OTHERS = 8


@dataclass(frozen=True, slots=True, eq=False)
class GradientBundle:
    l1: np.ndarray
    ls: np.ndarray
    lg_prime: np.ndarray
    lw_star: np.ndarray
    delta_theta: np.ndarray
    delta_nu: np.ndarray
    xi: float
    lambda_bar: float

    @property
    def norm_theta(self) -> float:
        return float(np.linalg.norm(self.delta_theta))

    @property
    def norm_nu(self) -> float:
        return float(np.linalg.norm(self.delta_nu))


def leave_one_out_baseline(weights: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per ``(t, agent)`` mean of ``weights`` over the other episodes where ``mask`` holds.

    Excluding the episode itself keeps the baseline independent of its actions.
    """
    masked = np.where(mask, weights, 0.0)
    sums = masked.sum(axis=0, keepdims=True)
    counts = mask.sum(axis=0, keepdims=True)
    others = counts - mask.astype(np.int64)
    baseline = np.zeros_like(masked)
    np.divide(sums - masked, others, out=baseline, where=others > 0)
    return baseline


def baseline_groups(batch: TrajectoryBatch, mask: np.ndarray) -> np.ndarray:
    """Group id of every ``(episode, t, agent)`` entry where ``mask`` holds, in ``np.nonzero`` order.

    Entries share a group when they agree on the step, the agent, the focal agent, the joint observation
    and the simultaneous actions of the other agents. Given the state, an agent samples its action
    independently of all of these, so any function of the group is a valid baseline.
    """
    episode, t, agent = np.nonzero(mask)
    if episode.size == 0:
        return np.zeros(0, dtype=np.int64)
    joint_obs = np.round(batch.feats[episode, t].reshape(episode.size, -1), KEY_DECIMALS)
    others = batch.actions[episode, t].astype(float)
    others[np.arange(episode.size), agent] = -1.0
    focal = batch.focal_agents[episode] if batch.has_focal else np.full(episode.size, -1)
    rows = np.column_stack([t, agent, focal, batch.active[episode, t], others, joint_obs])
    _, groups = np.unique(rows, axis=0, return_inverse=True)
    return np.asarray(groups).ravel()


def grouped_baseline(values: np.ndarray, groups: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """Leave-one-out mean of ``values`` inside each group.

    Entries whose group has fewer than ``GROUP_MIN_OTHERS`` other members keep ``fallback``.
    """
    sums = np.bincount(groups, weights=values)
    others = np.bincount(groups)[groups] - 1
    baseline = np.array(fallback, dtype=float)
    enough = others >= GROUP_MIN_OTHERS
    baseline[enough] = (sums[groups][enough] - values[enough]) / others[enough]
    return baseline


def expected_grouped_baseline(values: np.ndarray, groups: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Exact conditional mean of ``values`` given the group."""
    totals = np.bincount(groups, weights=probs)
    sums = np.bincount(groups, weights=probs * values)
    means = np.zeros_like(totals)
    np.divide(sums, totals, out=means, where=totals > 0)
    return means[groups]


def _baselined_entries(
    batch: TrajectoryBatch,
    weights: np.ndarray,
    mask: np.ndarray,
    baseline: bool,
    episode_probs: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    episode, t, agent = np.nonzero(mask)
    values = np.asarray(weights[episode, t, agent], dtype=float)
    if baseline and episode.size:
        groups = baseline_groups(batch, mask)
        if episode_probs is None:
            fallback = leave_one_out_baseline(weights, mask)[episode, t, agent]
            values = values - grouped_baseline(values, groups, fallback)
        else:
            probs = np.asarray(episode_probs, dtype=float)[episode]
            values = values - expected_grouped_baseline(values, groups, probs)
    return episode, t, agent, values


def score_sum(
    policy: PolicyParams,
    batch: TrajectoryBatch,
    weights: np.ndarray,
    mask: np.ndarray,
    baseline: bool = True,
    episode_probs: np.ndarray | None = None,
) -> np.ndarray:
    """Average ``sum_{t, j in mask} grad log pi(a_{j,t}) * weights[e, t, j]`` over the episodes.

    Episodes are weighted uniformly unless ``episode_probs`` gives their exact probabilities, in which
    case the result is an exact expectation and the baseline is the matching exact conditional mean.
    The sampled baseline is the leave-one-out mean of the entry's group (see :func:`baseline_groups`),
    or of its ``(t, agent)`` cell when the group is too small.
    """
    episode, t, agent, values = _baselined_entries(batch, weights, mask, baseline, episode_probs)
    if episode_probs is None:
        scale = np.full(len(batch), 1.0 / len(batch))
    else:
        scale = np.asarray(episode_probs, dtype=float)
    return weighted_score(
        policy,
        batch.feats[episode, t, agent],
        agent,
        batch.actions[episode, t, agent],
        values * scale[episode],
    )


def episode_scores(
    policy: PolicyParams,
    batch: TrajectoryBatch,
    weights: np.ndarray,
    mask: np.ndarray,
    baseline: bool = True,
    episode_probs: np.ndarray | None = None,
) -> np.ndarray:
    """Single-episode terms of :func:`score_sum`, shape ``(episodes, policy.arch.size)``."""
    episode, t, agent, values = _baselined_entries(batch, weights, mask, baseline, episode_probs)
    rows = entry_scores(policy, batch.feats[episode, t, agent], agent, batch.actions[episode, t, agent])
    out = np.zeros((len(batch), policy.arch.size))
    np.add.at(out, episode, rows * values[:, None])
    return out


def cooperative_layout(
    batch: TrajectoryBatch, lambdas: Sequence[float] | np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Weights ``Q_t = sum_i (1 + lambda_i) rtg_i[t]`` for every agent, masked to active agents."""
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.shape != (batch.n_agents,):
        raise GradientError(f"Expected {batch.n_agents} multipliers, got shape {lambdas.shape}")
    if np.any(lambdas < 0):
        raise GradientError(f"Lagrange multipliers must be non-negative, got {lambdas.tolist()}")
    rtg = batch.reward_to_go
    q_values = rtg @ (1.0 + lambdas)
    return np.broadcast_to(q_values[:, :, None], rtg.shape), batch.active


def competitive_layout(batch: TrajectoryBatch) -> tuple[np.ndarray, np.ndarray]:
    """Return the focal reward-to-go broadcast to every agent and the ``is focal`` mask."""
    if len(batch) == 0 or not batch.has_focal:
        raise GradientError(f"Competitive gradients need focal annotations, got a {batch.mode} batch")
    focal = batch.focal_agents
    rtg = batch.reward_to_go
    focal_rtg = rtg[np.arange(len(batch)), :, focal]
    weights = np.broadcast_to(focal_rtg[:, :, None], rtg.shape)
    is_focal = (np.arange(batch.n_agents)[None, :] == focal[:, None])[:, None, :]
    return weights, np.broadcast_to(is_focal, rtg.shape)


def _check_lambda_bar(lambda_bar: float) -> None:
    if not np.isfinite(lambda_bar) or lambda_bar < 0:
        raise GradientError(f"lambda_bar must be finite and non-negative, got {lambda_bar}")


def grad_L1(
    batch: TrajectoryBatch,
    lambdas: Sequence[float] | np.ndarray,
    theta: PolicyParams,
    baseline: bool = True,
) -> np.ndarray:
    """Cooperative gradient ``sum_i (1 + lambda_i) grad G_i(theta)`` from shared rollouts.

    Every active agent's score is weighted by ``Q_t = sum_i (1 + lambda_i) rtg_i[t]``.

    Raises
    ------
    GradientError
        If ``lambdas`` has the wrong length or a negative entry.
    """
    weights, mask = cooperative_layout(batch, lambdas)
    return score_sum(theta, batch, weights, mask, baseline=baseline)


def grad_Lw_star(batch: TrajectoryBatch, theta: PolicyParams, baseline: bool = True) -> np.ndarray:
    """Gradient of the weighted return w.r.t. ``theta`` through the non-focal agents."""
    weights, is_focal = competitive_layout(batch)
    return score_sum(theta, batch, weights, batch.active & ~is_focal, baseline=baseline)


def grad_Ls(
    batch: TrajectoryBatch, lambda_bar: float, theta: PolicyParams, baseline: bool = True
) -> np.ndarray:
    """``lambda_bar`` times the gradient of ``G_w(nu; theta)`` w.r.t. ``theta``."""
    _check_lambda_bar(lambda_bar)
    if lambda_bar == 0:
        return np.zeros(theta.arch.size)
    return lambda_bar * grad_Lw_star(batch, theta, baseline=baseline)


def grad_Lg_prime(
    batch: TrajectoryBatch, lambda_bar: float, nu: PolicyParams, baseline: bool = True
) -> np.ndarray:
    """``lambda_bar`` times the gradient of ``G_w(nu; theta)`` w.r.t. the focal policy ``nu``."""
    _check_lambda_bar(lambda_bar)
    if lambda_bar == 0:
        return np.zeros(nu.arch.size)
    weights, is_focal = competitive_layout(batch)
    return lambda_bar * score_sum(nu, batch, weights, batch.active & is_focal, baseline=baseline)


def focal_policy_gradient(batch: TrajectoryBatch, rho: PolicyParams, baseline: bool = True) -> np.ndarray:
    """Plain policy gradient of the focal return w.r.t. the focal policy."""
    weights, is_focal = competitive_layout(batch)
    return score_sum(rho, batch, weights, batch.active & is_focal, baseline=baseline)


def assemble(
    l1: np.ndarray,
    ls: np.ndarray,
    lg_prime: np.ndarray,
    lw_star: np.ndarray,
    xi: float,
    lambda_bar: float,
    clamp_competitive_factor: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Combine the estimated terms into the primal descent directions.

    Parameters
    ----------
    l1, ls, lg_prime, lw_star
        Estimated gradient terms, all of the same length.
    xi
        Gap penalty weight, positive.
    lambda_bar
        Sum of the Lagrange multipliers.
    clamp_competitive_factor
        Replace ``1 - xi / lambda_bar`` by ``max(1 - xi / lambda_bar, 0)``.

    Returns
    -------
    tuple[np.ndarray, np.ndarray]
        ``(delta_theta, delta_nu)``. With ``lambda_bar == 0`` this is ``(-l1, 0)``.
    """
    sizes = {np.shape(v) for v in (l1, ls, lg_prime, lw_star)}
    if len(sizes) != 1:
        raise GradientError(f"Gradient terms have mismatched shapes {sorted(sizes)}")
    if not xi > 0:
        raise GradientError(f"xi must be positive, got {xi}")
    _check_lambda_bar(lambda_bar)
    l1, ls, lg_prime, lw_star = (np.asarray(v, dtype=float) for v in (l1, ls, lg_prime, lw_star))
    if lambda_bar == 0:
        return -l1, np.zeros_like(l1)
    factor = 1.0 - xi / lambda_bar
    if clamp_competitive_factor:
        factor = max(factor, 0.0)
    delta_theta = xi * lw_star + factor * ls - l1
    delta_nu = factor * lg_prime
    return delta_theta, delta_nu


def build_bundle(
    l1: np.ndarray,
    ls: np.ndarray,
    lg_prime: np.ndarray,
    lw_star: np.ndarray,
    xi: float,
    lambda_bar: float,
    clamp_competitive_factor: bool = False,
) -> GradientBundle:
    delta_theta, delta_nu = assemble(l1, ls, lg_prime, lw_star, xi, lambda_bar, clamp_competitive_factor)
    return GradientBundle(
        l1=np.asarray(l1, dtype=float),
        ls=np.asarray(ls, dtype=float),
        lg_prime=np.asarray(lg_prime, dtype=float),
        lw_star=np.asarray(lw_star, dtype=float),
        delta_theta=delta_theta,
        delta_nu=delta_nu,
        xi=xi,
        lambda_bar=lambda_bar,
    )
