"""Exact evaluation of tiny markets by full enumeration.

Every source of randomness (initial base draws, action draws, impression draws) has finite support on a
:class:`TinyConfig`, so expected returns, expected estimator values and best responses can be computed
without sampling. Sums over the game tree use :func:`math.fsum`.
"""

import itertools
import math
from collections.abc import Callable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from loguru import logger

from .enums import GradientTerm, RolloutMode
from .exceptions import OracleBoundError
from .gradients import competitive_layout, cooperative_layout, episode_scores, score_sum
from .market import GlobalState, Impression, StepResult, initial_state_from_bases, resolve_step
from .models.market import MarketConfig
from .models.records import UnifiedRatioReport
from .policy import FEATURE_DIM, Policy, PolicyParams, features
from .rollout import Trajectory, TrajectoryBatch, check_simplex, focal_policies

MAX_LEAVES = 10**7
MAX_PATHS = 10**6
MAX_BR_POLICIES = 10**6
OBS_DECIMALS = 12
TINY_MAX_AGENTS = 3
TINY_MAX_HORIZON = 3
TINY_MAX_ACTIONS = 3
TINY_MAX_ATOMS = 3

Support = list[tuple[int, float]]


@dataclass(frozen=True, eq=False)
class TinyConfig:
    """A market small enough to enumerate."""

    market: MarketConfig

    @classmethod
    def from_market(cls, market: MarketConfig) -> "TinyConfig":
        """Validate that ``market`` is enumerable.

        Raises
        ------
        OracleBoundError
            If the market breaks a size restriction or its game tree has more than ``MAX_LEAVES`` leaves.
        """
        problems = []
        if market.n_agents > TINY_MAX_AGENTS:
            problems.append(f"n_agents={market.n_agents} > {TINY_MAX_AGENTS}")
        if market.horizon > TINY_MAX_HORIZON:
            problems.append(f"horizon={market.horizon} > {TINY_MAX_HORIZON}")
        if market.impressions_per_step != 1:
            problems.append(f"impressions_per_step={market.impressions_per_step} != 1")
        if market.n_actions > TINY_MAX_ACTIONS:
            problems.append(f"{market.n_actions} bid levels > {TINY_MAX_ACTIONS}")
        value_model = market.value_model
        if not value_model.is_discrete:
            problems.append("value_model needs base_atoms and noise_atoms")
        elif max(len(value_model.base_atoms or []), len(value_model.noise_atoms or [])) > TINY_MAX_ATOMS:
            problems.append(f"value atoms exceed {TINY_MAX_ATOMS}")
        if problems:
            raise OracleBoundError("Market is not enumerable: " + "; ".join(problems))

        tiny = cls(market)
        if tiny.leaf_count > MAX_LEAVES:
            raise OracleBoundError(f"Game tree has {tiny.leaf_count} leaves, more than {MAX_LEAVES}")
        return tiny

    @property
    def n_agents(self) -> int:
        return self.market.n_agents

    @property
    def leaf_count(self) -> int:
        """Upper bound on the number of enumerated trajectories."""
        value_model = self.market.value_model
        n_base = len(value_model.base_atoms or [])
        n_noise = len(value_model.noise_atoms or [])
        n_agents = self.market.n_agents
        noise_branches = n_noise if value_model.shared_noise else n_noise**n_agents
        per_step = self.market.n_actions**n_agents * noise_branches
        return n_base**n_agents * per_step**self.market.horizon


def _as_policies(policies: Policy | Sequence[Policy], n_agents: int) -> list[Policy]:
    if isinstance(policies, Sequence):
        if len(policies) != n_agents:
            raise OracleBoundError(f"Expected {n_agents} policies, got {len(policies)}")
        return list(policies)
    return [policies] * n_agents


def initial_branches(tiny: TinyConfig) -> Iterator[tuple[float, GlobalState]]:
    """Yield every start state with its probability."""
    market = tiny.market
    atoms, probs = market.value_model.base_distribution()
    scales = market.value_model.scales(market.n_agents)
    for combo in itertools.product(range(atoms.size), repeat=market.n_agents):
        prob = math.prod(float(probs[k]) for k in combo)
        if prob == 0:
            continue
        yield prob, initial_state_from_bases(market, atoms[list(combo)] * scales)


def action_support(policy: Policy, state: GlobalState, agent: int) -> Support:
    """Actions of ``agent`` with positive probability. Inactive agents are not branched."""
    local = state.locals[agent]
    if not local.active:
        return [(0, 1.0)]
    probs = policy.action_probs(features(local)[None, :], np.array([agent]))[0]
    return [(a, float(p)) for a, p in enumerate(probs) if p > 0]


def impression_support(state: GlobalState, tiny: TinyConfig) -> list[tuple[float, Impression]]:
    value_model = tiny.market.value_model
    atoms, probs = value_model.noise_distribution()
    bases = state.base_values()
    if value_model.shared_noise:
        return [
            (float(p), Impression(feature=np.array([u]), values=bases * u))
            for u, p in zip(atoms, probs)
            if p > 0
        ]
    active = state.active_mask()
    full = [(float(u), float(p)) for u, p in zip(atoms, probs) if p > 0]
    per_agent = [full if active[i] else [(float(atoms[0]), 1.0)] for i in range(state.n_agents)]
    support = []
    for joint in itertools.product(*per_agent):
        noise = np.array([u for u, _ in joint])
        support.append((math.prod(p for _, p in joint), Impression(feature=noise, values=bases * noise)))
    return support


def transitions(
    state: GlobalState, supports: Sequence[Support], tiny: TinyConfig
) -> Iterator[tuple[float, list[int], StepResult]]:
    """Yield ``(probability, joint actions, step result)`` for every branch out of ``state``."""
    impressions = impression_support(state, tiny)
    for joint in itertools.product(*supports):
        p_actions = math.prod(p for _, p in joint)
        actions = [a for a, _ in joint]
        for p_imp, imp in impressions:
            yield p_actions * p_imp, actions, resolve_step(state, actions, [imp], tiny.market)


def _expected_future(state: GlobalState, policies: Sequence[Policy], tiny: TinyConfig) -> np.ndarray:
    n_agents = state.n_agents
    if state.is_terminal:
        return np.zeros(n_agents)
    supports = [action_support(policies[i], state, i) for i in range(n_agents)]
    terms: list[list[float]] = [[] for _ in range(n_agents)]
    for prob, _, result in transitions(state, supports, tiny):
        total = result.rewards + _expected_future(result.next_state, policies, tiny)
        for i in range(n_agents):
            terms[i].append(prob * total[i])
    return np.array([math.fsum(t) for t in terms])


def exact_returns(policies: Policy | Sequence[Policy], tiny: TinyConfig) -> np.ndarray:
    """Exact expected return of every agent.

    Parameters
    ----------
    policies
        A single policy played by every agent, or one policy per agent.
    tiny
        Enumerable market.
    """
    policies = _as_policies(policies, tiny.n_agents)
    terms: list[list[float]] = [[] for _ in range(tiny.n_agents)]
    for prob, start in initial_branches(tiny):
        future = _expected_future(start, policies, tiny)
        for i in range(tiny.n_agents):
            terms[i].append(prob * future[i])
    return np.array([math.fsum(t) for t in terms])


def exact_focal_returns(rho: Policy, theta: Policy, tiny: TinyConfig) -> np.ndarray:
    """Entry ``i`` is the return of agent ``i`` playing ``rho`` against ``theta``."""
    return np.array(
        [
            exact_returns(focal_policies(rho, theta, i, tiny.n_agents), tiny)[i]
            for i in range(tiny.n_agents)
        ]
    )


def exact_weighted_return(
    rho: Policy, theta: Policy, kappa: Sequence[float] | np.ndarray, tiny: TinyConfig
) -> float:
    """Focal return under the initial distribution that first draws the focal agent from ``kappa``."""
    kappa = check_simplex(kappa, tiny.n_agents)
    terms = []
    for focal, weight in enumerate(kappa):
        if weight == 0:
            continue
        policies = focal_policies(rho, theta, focal, tiny.n_agents)
        for prob, start in initial_branches(tiny):
            terms.append(weight * prob * _expected_future(start, policies, tiny)[focal])
    return math.fsum(terms)


@dataclass(frozen=True, eq=False)
class EnumeratedPaths:
    """Every trajectory of a tiny market with its exact probability."""

    probs: np.ndarray
    batch: TrajectoryBatch

    @property
    def expected_returns(self) -> np.ndarray:
        returns = self.batch.returns
        return np.array([math.fsum(self.probs * returns[:, i]) for i in range(self.batch.n_agents)])


def _walk_paths(
    state: GlobalState,
    prob: float,
    policies: Sequence[Policy],
    tiny: TinyConfig,
    history: list[tuple[GlobalState, list[int], StepResult]],
) -> Iterator[tuple[float, list[tuple[GlobalState, list[int], StepResult]]]]:
    if state.is_terminal:
        yield prob, list(history)
        return
    supports = [action_support(policies[i], state, i) for i in range(state.n_agents)]
    for p, actions, result in transitions(state, supports, tiny):
        if p == 0:
            continue
        history.append((state, actions, result))
        yield from _walk_paths(result.next_state, prob * p, policies, tiny, history)
        history.pop()


def _to_trajectory(history: list[tuple[GlobalState, list[int], StepResult]], focal: int | None) -> Trajectory:
    horizon = len(history)
    n_agents = history[0][0].n_agents
    feats = np.zeros((horizon, n_agents, FEATURE_DIM))
    for t, (state, _, _) in enumerate(history):
        feats[t] = np.stack([features(local) for local in state.locals])
    return Trajectory(
        states=tuple(state for state, _, _ in history),
        feats=feats,
        actions=np.array([actions for _, actions, _ in history], dtype=np.int64),
        active=np.stack([state.active_mask() for state, _, _ in history]),
        rewards=np.stack([result.rewards for _, _, result in history]),
        costs=np.stack([result.costs for _, _, result in history]),
        focal_agent=focal,
    )


def enumerate_paths(
    tiny: TinyConfig,
    theta: Policy,
    rho: Policy | None = None,
    kappa: Sequence[float] | np.ndarray | None = None,
) -> EnumeratedPaths:
    """Enumerate shared trajectories, or weighted ones when ``rho`` and ``kappa`` are given."""
    weighted = rho is not None
    n_paths = tiny.leaf_count * (tiny.n_agents if weighted else 1)
    if n_paths > MAX_PATHS:
        raise OracleBoundError(f"Path enumeration needs up to {n_paths} paths, more than {MAX_PATHS}")

    setups: list[tuple[float, int | None, list[Policy]]]
    if weighted:
        if kappa is None:
            raise OracleBoundError("Weighted enumeration needs kappa")
        kappa = check_simplex(kappa, tiny.n_agents)
        setups = [
            (float(w), i, focal_policies(rho, theta, i, tiny.n_agents)) for i, w in enumerate(kappa) if w > 0
        ]
    else:
        setups = [(1.0, None, [theta] * tiny.n_agents)]

    probs, trajectories = [], []
    for weight, focal, policies in setups:
        for prob, start in initial_branches(tiny):
            for path_prob, history in _walk_paths(start, weight * prob, policies, tiny, []):
                probs.append(path_prob)
                trajectories.append(_to_trajectory(history, focal))
    mode = RolloutMode.WEIGHTED if weighted else RolloutMode.SHARED
    batch = TrajectoryBatch(trajectories, mode=mode, n_agents=tiny.n_agents, kappa=kappa)
    logger.trace("Enumerated {} paths", len(trajectories))
    return EnumeratedPaths(np.array(probs), batch)


def _term_inputs(
    lambdas: Sequence[float] | np.ndarray | None, n_agents: int
) -> tuple[np.ndarray, float, np.ndarray | None]:
    lambdas = np.zeros(n_agents) if lambdas is None else np.asarray(lambdas, dtype=float)
    lambda_bar = float(lambdas.sum())
    kappa = lambdas / lambda_bar if lambda_bar > 0 else None
    return lambdas, lambda_bar, kappa


@dataclass(frozen=True, eq=False)
class EstimatorLayout:
    """Enumerated paths with the weights and mask one gradient term scores them with."""

    policy: PolicyParams
    paths: EnumeratedPaths
    weights: np.ndarray
    mask: np.ndarray
    scale: float


def estimator_layout(
    term: GradientTerm,
    theta: PolicyParams,
    tiny: TinyConfig,
    *,
    rho: PolicyParams | None = None,
    lambdas: Sequence[float] | np.ndarray | None = None,
    kappa: Sequence[float] | np.ndarray | None = None,
) -> EstimatorLayout | None:
    """Enumerate the rollouts ``term`` is estimated from. ``None`` when the term is identically zero."""
    if term == GradientTerm.L1:
        lambdas, _, _ = _term_inputs(lambdas, tiny.n_agents)
        paths = enumerate_paths(tiny, theta)
        weights, mask = cooperative_layout(paths.batch, lambdas)
        return EstimatorLayout(theta, paths, weights, mask, 1.0)

    if rho is None:
        raise OracleBoundError(f"{term} needs the focal policy rho")
    if term == GradientTerm.LW_STAR:
        if kappa is None:
            raise OracleBoundError(f"{term} needs kappa")
        scale, score_policy, focal_side = 1.0, theta, False
    else:
        _, scale, kappa = _term_inputs(lambdas, tiny.n_agents)
        if kappa is None:
            return None
        score_policy, focal_side = (theta, False) if term == GradientTerm.LS else (rho, True)

    paths = enumerate_paths(tiny, theta, rho=rho, kappa=kappa)
    weights, is_focal = competitive_layout(paths.batch)
    mask = paths.batch.active & (is_focal if focal_side else ~is_focal)
    return EstimatorLayout(score_policy, paths, weights, mask, scale)


def exact_expected_estimator(
    term: GradientTerm,
    theta: PolicyParams,
    tiny: TinyConfig,
    *,
    rho: PolicyParams | None = None,
    lambdas: Sequence[float] | np.ndarray | None = None,
    kappa: Sequence[float] | np.ndarray | None = None,
    baseline: bool = False,
) -> np.ndarray:
    """Exact expectation of the score-function estimator of ``term``.

    ``L1`` uses ``lambdas`` (zeros by default). ``LS`` and ``LG_PRIME`` take ``rho`` as the unified
    optimizer and derive ``kappa`` from ``lambdas``. ``LW_STAR`` takes ``rho`` as the unified solution and
    an explicit ``kappa``. With ``baseline`` the exact conditional mean weight of every baseline group
    is subtracted, which leaves the expectation unchanged.
    """
    layout = estimator_layout(term, theta, tiny, rho=rho, lambdas=lambdas, kappa=kappa)
    if layout is None:
        return np.zeros(theta.arch.size)
    batch = layout.paths.batch
    return layout.scale * score_sum(
        layout.policy, batch, layout.weights, layout.mask, baseline=baseline, episode_probs=layout.paths.probs
    )


def estimator_moments(
    term: GradientTerm,
    theta: PolicyParams,
    tiny: TinyConfig,
    *,
    rho: PolicyParams | None = None,
    lambdas: Sequence[float] | np.ndarray | None = None,
    kappa: Sequence[float] | np.ndarray | None = None,
    baseline: bool = True,
) -> tuple[np.ndarray, float]:
    """Exact mean and total variance of the single-episode estimator of ``term``.

    The total variance is the trace of the covariance, so an average over ``n`` episodes misses the mean
    by ``sqrt(variance / n)`` in root-mean-square L2 norm. Takes the same arguments as
    :func:`exact_expected_estimator`.
    """
    layout = estimator_layout(term, theta, tiny, rho=rho, lambdas=lambdas, kappa=kappa)
    if layout is None:
        return np.zeros(theta.arch.size), 0.0
    probs = layout.paths.probs
    per_episode = layout.scale * episode_scores(
        layout.policy, layout.paths.batch, layout.weights, layout.mask, baseline=baseline, episode_probs=probs
    )
    mean = probs @ per_episode
    variance = float(probs @ np.square(per_episode - mean).sum(axis=1))
    return mean, variance


def finite_difference_gradient(
    fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-4
) -> np.ndarray:
    """Central differences of ``fn`` at ``x``, one component at a time."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for k in range(x.size):
        step = np.zeros_like(x)
        step[k] = h
        grad[k] = (fn(x + step) - fn(x - step)) / (2 * h)
    return grad


def finite_difference_term(
    term: GradientTerm,
    theta: PolicyParams,
    tiny: TinyConfig,
    *,
    rho: PolicyParams | None = None,
    lambdas: Sequence[float] | np.ndarray | None = None,
    kappa: Sequence[float] | np.ndarray | None = None,
    h: float = 1e-4,
) -> np.ndarray:
    """Gradient that ``term`` estimates, from central differences of exact returns.

    Takes the same arguments as :func:`exact_expected_estimator`.
    """
    if term == GradientTerm.L1:
        lambdas, _, _ = _term_inputs(lambdas, tiny.n_agents)
        return finite_difference_gradient(
            lambda v: float((1.0 + lambdas) @ exact_returns(theta.with_values(v), tiny)), theta.values, h
        )
    if rho is None:
        raise OracleBoundError(f"{term} needs the focal policy rho")
    if term == GradientTerm.LW_STAR:
        if kappa is None:
            raise OracleBoundError(f"{term} needs kappa")
        return finite_difference_gradient(
            lambda v: exact_weighted_return(rho, theta.with_values(v), kappa, tiny), theta.values, h
        )
    _, lambda_bar, kappa = _term_inputs(lambdas, tiny.n_agents)
    if kappa is None:
        return np.zeros(theta.arch.size)
    if term == GradientTerm.LS:
        return lambda_bar * finite_difference_gradient(
            lambda v: exact_weighted_return(rho, theta.with_values(v), kappa, tiny), theta.values, h
        )
    return lambda_bar * finite_difference_gradient(
        lambda v: exact_weighted_return(rho.with_values(v), theta, kappa, tiny), rho.values, h
    )


def observation_key(feats: np.ndarray) -> tuple[float, ...]:
    return tuple(float(v) for v in np.round(feats, OBS_DECIMALS))


@dataclass(frozen=True, eq=False)
class ObservationPolicy:
    """Deterministic policy given by a table from local observations to actions."""

    n_actions: int
    table: Mapping[tuple[float, ...], int] = field(default_factory=dict)
    default_action: int = 0

    def action_for(self, feats: np.ndarray) -> int:
        return self.table.get(observation_key(feats), self.default_action)

    def action_probs(self, feats: np.ndarray, agents: np.ndarray) -> np.ndarray:
        feats = np.atleast_2d(feats)
        probs = np.zeros((feats.shape[0], self.n_actions))
        for row, f in enumerate(feats):
            probs[row, self.action_for(f)] = 1.0
        return probs


def _state_key(state: GlobalState) -> tuple:
    return tuple(
        (round(local.budget_remaining, OBS_DECIMALS), local.step, local.base_value) for local in state.locals
    )


def _supports_with(
    agent: int, own: Support, theta: Policy, state: GlobalState
) -> list[Support]:
    return [own if j == agent else action_support(theta, state, j) for j in range(state.n_agents)]


def reachable_observations(agent: int, theta: Policy, tiny: TinyConfig) -> list[tuple[float, ...]]:
    """Active observations of ``agent`` before the final step, reachable under some own behaviour."""
    n_actions = tiny.market.n_actions
    last = tiny.market.horizon - 1
    seen_states: set[tuple] = set()
    observations: dict[tuple[float, ...], None] = {}

    def visit(state: GlobalState) -> None:
        if state.step >= last:
            return
        key = _state_key(state)
        if key in seen_states:
            return
        seen_states.add(key)
        local = state.locals[agent]
        if local.active:
            observations.setdefault(observation_key(features(local)), None)
            own = [(a, 1.0) for a in range(n_actions)]
        else:
            own = [(0, 1.0)]
        for _, _, result in transitions(state, _supports_with(agent, own, theta, state), tiny):
            visit(result.next_state)

    for _, start in initial_branches(tiny):
        visit(start)
    return list(observations)


def _evaluate_observation_map(
    agent: int, theta: Policy, table: Mapping[tuple[float, ...], int], tiny: TinyConfig
) -> tuple[float, dict[tuple[float, ...], int]]:
    """Exact return of ``table`` before the final step with the best final-step actions."""
    n_actions = tiny.market.n_actions
    last = tiny.market.horizon - 1
    early_terms: list[float] = []
    final_terms: dict[tuple[float, ...], list[list[float]]] = {}

    def walk(state: GlobalState, prob: float) -> None:
        local = state.locals[agent]
        if state.step == last:
            if not local.active:
                return
            scores = final_terms.setdefault(
                observation_key(features(local)), [[] for _ in range(n_actions)]
            )
            for a in range(n_actions):
                supports = _supports_with(agent, [(a, 1.0)], theta, state)
                for p, _, result in transitions(state, supports, tiny):
                    scores[a].append(prob * p * result.rewards[agent])
            return
        action = table[observation_key(features(local))] if local.active else 0
        for p, _, result in transitions(state, _supports_with(agent, [(action, 1.0)], theta, state), tiny):
            early_terms.append(prob * p * result.rewards[agent])
            walk(result.next_state, prob * p)

    for prob, start in initial_branches(tiny):
        walk(start, prob)

    final_actions, final_values = {}, []
    for key, scores in final_terms.items():
        totals = [math.fsum(s) for s in scores]
        best = int(np.argmax(totals))
        final_actions[key] = best
        final_values.append(totals[best])
    return math.fsum(early_terms) + math.fsum(final_values), final_actions


def exact_best_response(agent: int, theta: Policy, tiny: TinyConfig) -> tuple[ObservationPolicy, float]:
    """Best deterministic observation policy of ``agent`` against ``theta`` and its exact return.

    Observation maps before the final step are searched exhaustively. At the final step an action only
    changes the final reward, so it is chosen greedily per observation.

    Raises
    ------
    OracleBoundError
        If more than ``MAX_BR_POLICIES`` observation maps would have to be scored.
    """
    n_actions = tiny.market.n_actions
    observations = reachable_observations(agent, theta, tiny)
    n_maps = n_actions ** len(observations)
    if n_maps > MAX_BR_POLICIES:
        raise OracleBoundError(f"{n_maps} observation maps to search, more than {MAX_BR_POLICIES}")
    logger.debug("Searching {} observation maps for agent {}", n_maps, agent)

    best_value, best_table = -math.inf, {}
    for choice in itertools.product(range(n_actions), repeat=len(observations)):
        table = dict(zip(observations, choice))
        value, final_actions = _evaluate_observation_map(agent, theta, table, tiny)
        if value > best_value:
            best_value, best_table = value, {**table, **final_actions}
    return ObservationPolicy(n_actions=n_actions, table=best_table), best_value


def exact_unified_ratios(x_star: Policy, theta: Policy, tiny: TinyConfig) -> UnifiedRatioReport:
    """Exact return of the unified solution for every agent relative to the exact best response."""
    unified = exact_focal_returns(x_star, theta, tiny)
    best = np.array([exact_best_response(i, theta, tiny)[1] for i in range(tiny.n_agents)])
    ratios = np.divide(unified, best, out=np.ones_like(unified), where=best > 0)
    return UnifiedRatioReport(
        unified_returns=unified.tolist(), best_response_returns=best.tolist(), ratios=ratios.tolist()
    )
