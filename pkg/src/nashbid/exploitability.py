"""Best-response training and the epsilon-NE metrics."""

from collections.abc import Callable, MutableMapping, Sequence

import numpy as np
from loguru import logger

from .enums import RolloutMode
from .exceptions import ExploitabilityError
from .gradients import focal_policy_gradient
from .models.market import MarketConfig
from .models.records import ExploitReport
from .models.train import TrainConfig
from .policy import PolicyParams
from .rollout import TrajectoryBatch, rollout_policies

Profile = PolicyParams | Sequence[PolicyParams]
FocalSampler = Callable[[PolicyParams, np.random.Generator], TrajectoryBatch]


def as_profile(theta: Profile, n_agents: int) -> list[PolicyParams]:
    """Per-agent policies. A single policy is shared by every agent."""
    if isinstance(theta, PolicyParams):
        return [theta] * n_agents
    profile = list(theta)
    if len(profile) != n_agents:
        raise ExploitabilityError(f"Expected {n_agents} policies, got {len(profile)}")
    return profile


def ascend_focal_policy(
    rho: PolicyParams,
    sample: FocalSampler,
    iters: int,
    lr: float,
    rng: np.random.Generator,
    baseline: bool = True,
) -> PolicyParams:
    """Run ``iters`` REINFORCE ascent steps on the focal return of the batches drawn by ``sample``."""
    for it in range(iters):
        batch = sample(rho, rng)
        grad = focal_policy_gradient(batch, rho, baseline=baseline)
        rho = rho.with_values(rho.values + lr * grad)
        logger.trace("Focal ascent step {}: |grad|={:.4g}", it, np.linalg.norm(grad))
    return rho


def deviation_sampler(
    profile: Sequence[PolicyParams], agent: int, env: MarketConfig, episodes: int
) -> FocalSampler:
    """Sampler of episodes where ``agent`` deviates to the candidate policy."""

    def sample(rho: PolicyParams, rng: np.random.Generator) -> TrajectoryBatch:
        policies = [rho if j == agent else policy for j, policy in enumerate(profile)]
        return rollout_policies(policies, env, episodes, rng, mode=RolloutMode.FOCAL, focal=agent)

    return sample


def train_best_response(
    i: int,
    theta: Profile,
    env: MarketConfig,
    cfg: TrainConfig,
    rng: np.random.Generator,
    warm_start: PolicyParams | None = None,
    iters: int | None = None,
) -> tuple[PolicyParams, float]:
    """Train the best response of agent ``i`` against the others playing ``theta``.

    Parameters
    ----------
    i
        Deviating agent.
    theta
        Shared policy, or one policy per agent.
    env
        Market.
    cfg
        Uses ``br_iters``, ``br_episodes``, ``br_lr``, ``baseline`` and ``episodes_per_return``.
    rng
        Random stream.
    warm_start
        Initial deviation policy, ``theta``'s policy for agent ``i`` by default.
    iters
        Overrides ``cfg.br_iters``.

    Returns
    -------
    tuple[PolicyParams, float]
        Trained policy and its return estimated on ``episodes_per_return`` fresh episodes.
    """
    if not 0 <= i < env.n_agents:
        raise ExploitabilityError(f"Agent {i} outside [0, {env.n_agents})")
    profile = as_profile(theta, env.n_agents)
    rho = warm_start if warm_start is not None else profile[i]
    sample = deviation_sampler(profile, i, env, cfg.br_episodes)
    rho = ascend_focal_policy(
        rho, sample, cfg.br_iters if iters is None else iters, cfg.br_lr, rng, baseline=cfg.baseline
    )
    evaluation = deviation_sampler(profile, i, env, cfg.episodes_per_return)(rho, rng)
    return rho, float(evaluation.estimates().g_focal[i])


def exploitability_from_returns(
    best_response_returns: Sequence[float] | np.ndarray,
    returns: Sequence[float] | np.ndarray,
    epsilon_norm: float,
    **extra,
) -> ExploitReport:
    """Normalized exploitability of a joint policy from its returns and best-response returns.

    Raises
    ------
    ExploitabilityError
        If the social welfare ``sum(returns)`` is not positive.
    """
    best = np.asarray(best_response_returns, dtype=float)
    returns = np.asarray(returns, dtype=float)
    if best.shape != returns.shape:
        raise ExploitabilityError(f"Shape mismatch: {best.shape} best responses for {returns.shape} returns")
    social_welfare = float(returns.sum())
    if not social_welfare > 0:
        raise ExploitabilityError(f"Social welfare must be positive to normalize gaps, got {social_welfare}")
    raw_gaps = best - returns
    if np.any(raw_gaps < 0):
        behind = np.flatnonzero(raw_gaps < 0).tolist()
        logger.warning("Best responses of agents {} underperform their policy", behind)
    gaps = np.maximum(raw_gaps, 0.0) / social_welfare
    max_gap = float(gaps.max())
    return ExploitReport(
        best_response_returns=best.tolist(),
        returns=returns.tolist(),
        social_welfare=social_welfare,
        normalized_gaps=gaps.tolist(),
        max_exploitability=max_gap,
        epsilon_norm=epsilon_norm,
        compliant=max_gap <= epsilon_norm,
        **extra,
    )


def max_exploitability(
    theta: Profile,
    env: MarketConfig,
    cfg: TrainConfig,
    rng: np.random.Generator,
    cache: MutableMapping[int, PolicyParams] | None = None,
) -> ExploitReport:
    """Train a best response for every agent and report the largest normalized gain.

    Best responses found in ``cache`` are used as they are. Newly trained ones are stored in it.
    """
    profile = as_profile(theta, env.n_agents)
    evaluation = rollout_policies(profile, env, cfg.episodes_per_return, rng, mode=RolloutMode.SHARED)
    estimates = evaluation.estimates()
    best = np.zeros(env.n_agents)
    for i, child in enumerate(rng.spawn(env.n_agents)):
        if cache is not None and i in cache:
            focal = deviation_sampler(profile, i, env, cfg.episodes_per_return)(cache[i], child)
            best[i] = focal.estimates().g_focal[i]
            continue
        policy, best[i] = train_best_response(i, profile, env, cfg, child)
        if cache is not None:
            cache[i] = policy
        logger.debug("Agent {}: best response {:.4f} vs {:.4f}", i, best[i], estimates.g_shared[i])
    return exploitability_from_returns(
        best,
        estimates.g_shared,
        cfg.epsilon_norm,
        returns_stderr=estimates.g_shared_stderr.tolist(),
        revenue=estimates.revenue,
        br_iters=cfg.br_iters,
        br_episodes=cfg.br_episodes,
    )


def compliance_rate(results: Sequence[float], epsilon_norm: float) -> float:
    """Fraction of runs whose max exploitability is at most ``epsilon_norm``."""
    if len(results) == 0:
        raise ExploitabilityError("Compliance rate needs at least one run")
    return sum(1 for value in results if value <= epsilon_norm) / len(results)
