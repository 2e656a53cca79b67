"""Budget-constrained multi-agent auction game.

Every episode lasts ``horizon`` steps. At each step ``impressions_per_step`` impressions are sold one
after another through a single-slot second-price auction with reserve. Agents pick a bid multiplier
index per step and bid ``bid_levels[k] * value`` on every impression of that step.
"""

from collections.abc import Sequence
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from loguru import logger

from .exceptions import MarketError
from .models.market import MarketConfig

CONTEXT_DIM = 2


@dataclass(frozen=True, slots=True)
class AgentLocalState:
    """Local observation of a single agent."""

    agent_index: int
    budget_remaining: float
    budget: float
    step: int
    horizon: int
    context: tuple[float, ...]
    active: bool

    @property
    def base_value(self) -> float:
        return self.context[0]


@dataclass(frozen=True, slots=True)
class GlobalState:
    """Joint state of all agents."""

    locals: tuple[AgentLocalState, ...]

    def __post_init__(self) -> None:
        for i, local in enumerate(self.locals):
            if local.agent_index != i:
                raise MarketError(f"Local state at position {i} belongs to agent {local.agent_index}")

    @property
    def n_agents(self) -> int:
        return len(self.locals)

    @property
    def step(self) -> int:
        return self.locals[0].step

    @property
    def horizon(self) -> int:
        return self.locals[0].horizon

    @property
    def is_terminal(self) -> bool:
        return self.step >= self.horizon

    def budgets_remaining(self) -> np.ndarray:
        return np.array([local.budget_remaining for local in self.locals])

    def active_mask(self) -> np.ndarray:
        return np.array([local.active for local in self.locals], dtype=bool)

    def base_values(self) -> np.ndarray:
        return np.array([local.base_value for local in self.locals])

    def permuted(self, perm: Sequence[int]) -> "GlobalState":
        """Relabel agents so that agent ``i`` becomes agent ``perm[i]``."""
        relabelled: list[AgentLocalState | None] = [None] * self.n_agents
        for i, j in enumerate(perm):
            relabelled[j] = replace(self.locals[i], agent_index=j)
        return GlobalState(tuple(relabelled))  # type: ignore[arg-type]


@dataclass(frozen=True, slots=True, eq=False)
class Impression:
    """A single impression opportunity.

    ``feature`` holds the impression-level draw ``u`` (one entry, or one per agent) and ``values`` the
    resulting per-agent values.
    """

    feature: np.ndarray
    values: np.ndarray

    def permuted(self, perm: Sequence[int]) -> "Impression":
        values = np.empty_like(self.values)
        values[list(perm)] = self.values
        feature = self.feature
        if feature.shape[0] == self.values.shape[0]:
            feature = np.empty_like(self.feature)
            feature[list(perm)] = self.feature
        return Impression(feature=feature, values=values)


@dataclass(frozen=True, slots=True, eq=False)
class AuctionOutcome:
    winner: int | None
    price: float
    per_agent_cost: np.ndarray
    per_agent_reward: np.ndarray


class StepResult(NamedTuple):
    next_state: GlobalState
    rewards: np.ndarray
    costs: np.ndarray


def is_active(budget_remaining: float, step: int, horizon: int, reserve: float) -> bool:
    """Return True when an agent can still take part in the auctions."""
    return step < horizon and budget_remaining > 0 and budget_remaining >= reserve


def initial_state_from_bases(config: MarketConfig, bases: Sequence[float]) -> GlobalState:
    """Build the episode start state for already drawn base values."""
    scale = config.budget_scale
    locals_ = tuple(
        AgentLocalState(
            agent_index=i,
            budget_remaining=float(budget),
            budget=float(budget),
            step=0,
            horizon=config.horizon,
            context=(float(bases[i]), float(budget) / scale),
            active=is_active(budget, 0, config.horizon, config.reserve_price),
        )
        for i, budget in enumerate(config.budgets)
    )
    return GlobalState(locals_)


def sample_initial_state(config: MarketConfig, rng: np.random.Generator) -> GlobalState:
    """Draw the episode start state.

    Parameters
    ----------
    config
        Market definition.
    rng
        Random stream. The draw is deterministic given its state.

    Returns
    -------
    GlobalState
        Every agent starts at step 0 with its full budget. Agents with a budget below the reserve
        start inactive.
    """
    value_model = config.value_model
    if value_model.base_atoms is not None:
        atoms, probs = value_model.base_distribution()
        draws = rng.choice(atoms, size=config.n_agents, p=probs)
    else:
        draws = rng.uniform(value_model.base_low, value_model.base_high, size=config.n_agents)
    bases = draws * value_model.scales(config.n_agents)
    return initial_state_from_bases(config, bases)


def draw_impressions(state: GlobalState, config: MarketConfig, rng: np.random.Generator) -> list[Impression]:
    """Draw the impressions sold during the current step."""
    value_model = config.value_model
    width = 1 if value_model.shared_noise else config.n_agents
    if value_model.noise_atoms is not None:
        atoms, probs = value_model.noise_distribution()
        noise = rng.choice(atoms, size=(config.impressions_per_step, width), p=probs)
    else:
        noise = rng.uniform(
            value_model.noise_low, value_model.noise_high, size=(config.impressions_per_step, width)
        )
    bases = state.base_values()
    return [Impression(feature=u, values=bases * u) for u in noise]


def auction(bids: Sequence[float] | np.ndarray, imp: Impression, reserve: float) -> AuctionOutcome:
    """Run a single-slot second-price auction with reserve.

    Only bids strictly above the reserve qualify. The highest qualifying bid wins, ties go to the lowest
    agent index, and the winner pays the larger of the second qualifying bid and the reserve.
    """
    bids = np.asarray(bids, dtype=float)
    n_agents = bids.shape[0]
    cost = np.zeros(n_agents)
    reward = np.zeros(n_agents)
    qualifying = np.flatnonzero(bids > reserve)
    if qualifying.size == 0:
        return AuctionOutcome(winner=None, price=0.0, per_agent_cost=cost, per_agent_reward=reward)

    ranked = qualifying[np.argsort(-bids[qualifying], kind="stable")]
    winner = int(ranked[0])
    second = float(bids[ranked[1]]) if ranked.size > 1 else reserve
    price = max(second, reserve)
    cost[winner] = price
    reward[winner] = imp.values[winner]
    return AuctionOutcome(winner=winner, price=price, per_agent_cost=cost, per_agent_reward=reward)


def _check_actions(joint_actions: Sequence[int] | np.ndarray, config: MarketConfig) -> np.ndarray:
    actions = np.asarray(joint_actions, dtype=np.int64)
    if actions.shape != (config.n_agents,):
        raise MarketError(f"Expected {config.n_agents} actions, got shape {actions.shape}")
    if np.any(actions < 0) or np.any(actions >= config.n_actions):
        raise MarketError(f"Action indices must lie in [0, {config.n_actions}), got {actions.tolist()}")
    return actions


def resolve_step(
    state: GlobalState,
    joint_actions: Sequence[int] | np.ndarray,
    impressions: Sequence[Impression],
    config: MarketConfig,
) -> StepResult:
    """Sell ``impressions`` in order and advance the state by one step.

    Budgets are debited between impressions. A winner that cannot afford the price is removed from that
    impression and the auction is rerun among the remaining bidders.
    """
    if state.is_terminal:
        raise MarketError(f"Cannot step a terminal state (step {state.step} of {state.horizon})")
    actions = _check_actions(joint_actions, config)
    levels = config.level_array()
    active = state.active_mask()
    remaining = state.budgets_remaining()
    rewards = np.zeros(config.n_agents)
    costs = np.zeros(config.n_agents)

    for imp in impressions:
        bids = np.where(active, levels[actions] * imp.values, 0.0)
        while True:
            outcome = auction(bids, imp, config.reserve_price)
            if outcome.winner is None or outcome.price <= remaining[outcome.winner]:
                break
            logger.trace("Agent {} skipped, price {} above budget", outcome.winner, outcome.price)
            bids[outcome.winner] = 0.0
        if outcome.winner is None:
            continue
        remaining[outcome.winner] -= outcome.price
        rewards += outcome.per_agent_reward
        costs += outcome.per_agent_cost

    next_step = state.step + 1
    next_locals = tuple(
        replace(
            local,
            budget_remaining=float(remaining[i]),
            step=next_step,
            active=is_active(remaining[i], next_step, state.horizon, config.reserve_price),
        )
        for i, local in enumerate(state.locals)
    )
    return StepResult(GlobalState(next_locals), rewards, costs)


def step(
    state: GlobalState,
    joint_bids: Sequence[int] | np.ndarray,
    config: MarketConfig,
    rng: np.random.Generator,
) -> StepResult:
    """Draw this step's impressions and resolve them.

    Raises
    ------
    MarketError
        If ``state`` is terminal or an action index is out of range.
    """
    if state.is_terminal:
        raise MarketError(f"Cannot step a terminal state (step {state.step} of {state.horizon})")
    impressions = draw_impressions(state, config, rng)
    return resolve_step(state, joint_bids, impressions, config)
