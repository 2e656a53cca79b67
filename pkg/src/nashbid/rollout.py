"""Episode sampling and Monte-Carlo return estimation.

Three regimes are supported: every agent plays the shared policy, one focal agent deviates to its own
policy, or the focal agent is drawn per episode from the sample ratios ``kappa``. Every episode gets its
own child random stream so a batch is reproducible from the parent stream alone.
"""

from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from loguru import logger

from .enums import RolloutMode
from .exceptions import RolloutError
from .market import GlobalState, sample_initial_state, step
from .models.market import MarketConfig
from .policy import FEATURE_DIM, Policy, feature_matrix, sample_from_probs

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True, slots=True, eq=False)
class Trajectory:
    """One episode. Arrays are indexed ``[t, agent]``."""

    states: tuple[GlobalState, ...]
    feats: np.ndarray
    actions: np.ndarray
    active: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    focal_agent: int | None = None

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    @property
    def reward_to_go(self) -> np.ndarray:
        """``rtg[t, i] = rewards[t, i] + rtg[t + 1, i]`` with ``rtg[T, i] = 0``."""
        rtg = np.zeros_like(self.rewards)
        running = np.zeros(self.rewards.shape[1])
        for t in range(self.horizon - 1, -1, -1):
            running = self.rewards[t] + running
            rtg[t] = running
        return rtg

    @property
    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=0)


@dataclass(frozen=True, slots=True)
class ReturnEstimates:
    """Sample means of the per-agent returns of a batch, with standard errors."""

    g_shared: np.ndarray
    g_shared_stderr: np.ndarray
    g_focal: np.ndarray
    g_focal_stderr: np.ndarray
    focal_counts: np.ndarray
    g_weighted: float
    g_weighted_stderr: float
    episode_count: int
    revenue: float

    @property
    def social_welfare(self) -> float:
        return float(self.g_shared.sum())


def _mean_and_stderr(samples: np.ndarray) -> tuple[float, float]:
    if samples.size == 0:
        return float("nan"), float("nan")
    mean = float(samples.mean())
    if samples.size == 1:
        return mean, 0.0
    return mean, float(samples.std(ddof=1) / np.sqrt(samples.size))


@dataclass(eq=False)
class TrajectoryBatch:
    """Episodes sampled under one rollout regime."""

    trajectories: list[Trajectory]
    mode: RolloutMode
    n_agents: int
    kappa: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def has_focal(self) -> bool:
        return all(traj.focal_agent is not None for traj in self.trajectories)

    @cached_property
    def focal_agents(self) -> np.ndarray:
        if not self.has_focal:
            raise RolloutError(f"Batch sampled in {self.mode} mode carries no focal annotations")
        return np.array([traj.focal_agent for traj in self.trajectories], dtype=np.int64)

    @cached_property
    def feats(self) -> np.ndarray:
        return np.stack([traj.feats for traj in self.trajectories])

    @cached_property
    def actions(self) -> np.ndarray:
        return np.stack([traj.actions for traj in self.trajectories])

    @cached_property
    def active(self) -> np.ndarray:
        return np.stack([traj.active for traj in self.trajectories])

    @cached_property
    def rewards(self) -> np.ndarray:
        return np.stack([traj.rewards for traj in self.trajectories])

    @cached_property
    def costs(self) -> np.ndarray:
        return np.stack([traj.costs for traj in self.trajectories])

    @cached_property
    def reward_to_go(self) -> np.ndarray:
        """Array of shape ``(episodes, T, N)``."""
        return np.flip(np.cumsum(np.flip(self.rewards, axis=1), axis=1), axis=1)

    @cached_property
    def returns(self) -> np.ndarray:
        """Array of shape ``(episodes, N)``."""
        return self.rewards.sum(axis=1)

    def focal_returns(self) -> np.ndarray:
        return self.returns[np.arange(len(self)), self.focal_agents]

    def estimates(self) -> ReturnEstimates:
        """Arithmetic means of the batch returns."""
        returns = self.returns
        g_shared = returns.mean(axis=0)
        g_shared_stderr = (
            returns.std(axis=0, ddof=1) / np.sqrt(len(self)) if len(self) > 1 else np.zeros(self.n_agents)
        )
        g_focal = np.full(self.n_agents, np.nan)
        g_focal_stderr = np.full(self.n_agents, np.nan)
        counts = np.zeros(self.n_agents, dtype=np.int64)
        g_weighted, g_weighted_stderr = float("nan"), float("nan")
        if self.has_focal:
            focal = self.focal_agents
            focal_returns = self.focal_returns()
            for i in range(self.n_agents):
                samples = focal_returns[focal == i]
                counts[i] = samples.size
                g_focal[i], g_focal_stderr[i] = _mean_and_stderr(samples)
            g_weighted, g_weighted_stderr = _mean_and_stderr(focal_returns)
        return ReturnEstimates(
            g_shared=g_shared,
            g_shared_stderr=g_shared_stderr,
            g_focal=g_focal,
            g_focal_stderr=g_focal_stderr,
            focal_counts=counts,
            g_weighted=g_weighted,
            g_weighted_stderr=g_weighted_stderr,
            episode_count=len(self),
            revenue=float(self.costs.sum(axis=(1, 2)).mean()),
        )


def _policy_groups(policies: Sequence[Policy]) -> list[tuple[Policy, np.ndarray]]:
    groups: dict[int, tuple[Policy, list[int]]] = {}
    for i, policy in enumerate(policies):
        groups.setdefault(id(policy), (policy, []))[1].append(i)
    return [(policy, np.array(agents, dtype=np.int64)) for policy, agents in groups.values()]


def run_episode(
    policies: Sequence[Policy],
    env: MarketConfig,
    rng: np.random.Generator,
    focal_agent: int | None = None,
) -> Trajectory:
    """Play one episode where agent ``i`` samples its actions from ``policies[i]``.

    Inactive agents still draw an action so the random stream advances identically for every agent;
    their bid is zero and estimators mask them out.
    """
    if len(policies) != env.n_agents:
        raise RolloutError(f"Expected {env.n_agents} policies, got {len(policies)}")
    groups = _policy_groups(policies)
    state = sample_initial_state(env, rng)
    shape = (env.horizon, env.n_agents)
    states = []
    feats = np.zeros((*shape, FEATURE_DIM))
    actions = np.zeros(shape, dtype=np.int64)
    active = np.zeros(shape, dtype=bool)
    rewards = np.zeros(shape)
    costs = np.zeros(shape)
    for t in range(env.horizon):
        step_feats = feature_matrix(state.locals)
        feats[t] = step_feats
        uniforms = rng.random(env.n_agents)
        for policy, agents in groups:
            probs = policy.action_probs(step_feats[agents], agents)
            actions[t, agents] = sample_from_probs(probs, uniforms[agents])
        states.append(state)
        active[t] = state.active_mask()
        state, rewards[t], costs[t] = step(state, actions[t], env, rng)
    return Trajectory(
        states=tuple(states),
        feats=feats,
        actions=actions,
        active=active,
        rewards=rewards,
        costs=costs,
        focal_agent=focal_agent,
    )


def _check_episodes(episodes: int) -> None:
    if episodes < 1:
        raise RolloutError(f"At least one episode is required, got {episodes}")


def rollout_policies(
    policies: Sequence[Policy],
    env: MarketConfig,
    episodes: int,
    rng: np.random.Generator,
    mode: RolloutMode = RolloutMode.MIXED,
    focal: int | None = None,
) -> TrajectoryBatch:
    """Sample ``episodes`` episodes with a fixed policy per agent."""
    _check_episodes(episodes)
    trajectories = [
        run_episode(policies, env, child, focal_agent=focal) for child in rng.spawn(episodes)
    ]
    logger.trace("Sampled {} {} episodes", episodes, mode)
    return TrajectoryBatch(trajectories, mode=mode, n_agents=env.n_agents)


def rollout_shared(
    theta: Policy, env: MarketConfig, episodes: int, rng: np.random.Generator
) -> TrajectoryBatch:
    """Every agent samples from ``theta``."""
    return rollout_policies([theta] * env.n_agents, env, episodes, rng, mode=RolloutMode.SHARED)


def focal_policies(rho: Policy, theta: Policy, focal: int, n_agents: int) -> list[Policy]:
    return [rho if i == focal else theta for i in range(n_agents)]


def rollout_focal(
    rho: Policy,
    theta: Policy,
    focal: int,
    env: MarketConfig,
    episodes: int,
    rng: np.random.Generator,
) -> TrajectoryBatch:
    """Agent ``focal`` samples from ``rho`` while the others sample from ``theta``."""
    if not 0 <= focal < env.n_agents:
        raise RolloutError(f"Focal agent {focal} outside [0, {env.n_agents})")
    policies = focal_policies(rho, theta, focal, env.n_agents)
    return rollout_policies(policies, env, episodes, rng, mode=RolloutMode.FOCAL, focal=focal)


def check_simplex(kappa: Sequence[float] | np.ndarray, n_agents: int) -> np.ndarray:
    kappa = np.asarray(kappa, dtype=float)
    if kappa.shape != (n_agents,):
        raise RolloutError(f"kappa must have {n_agents} entries, got shape {kappa.shape}")
    if np.any(kappa < 0) or not np.all(np.isfinite(kappa)) or abs(kappa.sum() - 1.0) > SIMPLEX_TOL:
        raise RolloutError(f"kappa {kappa.tolist()} is not on the probability simplex")
    return kappa


def rollout_weighted(
    rho: Policy,
    theta: Policy,
    kappa: Sequence[float] | np.ndarray,
    env: MarketConfig,
    episodes: int,
    rng: np.random.Generator,
) -> TrajectoryBatch:
    """Draw the focal agent of every episode from ``kappa``, then roll out as :func:`rollout_focal`."""
    _check_episodes(episodes)
    kappa = check_simplex(kappa, env.n_agents)
    trajectories = []
    for child in rng.spawn(episodes):
        focal = int(child.choice(env.n_agents, p=kappa))
        policies = focal_policies(rho, theta, focal, env.n_agents)
        trajectories.append(run_episode(policies, env, child, focal_agent=focal))
    logger.trace("Sampled {} weighted episodes", episodes)
    return TrajectoryBatch(trajectories, mode=RolloutMode.WEIGHTED, n_agents=env.n_agents, kappa=kappa)
