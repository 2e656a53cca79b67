"""Bi-level policy gradient trainer.

Every outer iteration

1. trains the unified solution ``x*`` on the weighted POMDP built from the current sample ratios,
2. sets the Lagrange multipliers from the gap between ``x*`` and the shared policy,
3. takes one primal step on the shared policy ``theta`` and the unified optimizer ``nu``,
4. refreshes the sample ratios ``kappa = lambda / lambda_bar``.
"""

import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from loguru import logger

from .exceptions import DualUpdateError, GradientError
from .exploitability import ascend_focal_policy, train_best_response
from .gradients import GradientBundle, build_bundle, grad_L1, grad_Lg_prime, grad_Ls, grad_Lw_star
from .models.market import MarketConfig
from .models.records import IterationRecord, UnifiedRatioReport
from .models.train import TrainConfig
from .policy import PolicyArch, PolicyParams
from .rollout import TrajectoryBatch, rollout_focal, rollout_shared, rollout_weighted

IterationCallback = Callable[[IterationRecord], None]


@dataclass(frozen=True, slots=True, eq=False)
class DualState:
    """Lagrange multipliers with their sum and the derived sample ratios."""

    lambdas: np.ndarray
    lambda_bar: float
    kappas: np.ndarray
    epsilon_norm: float

    @property
    def degenerate(self) -> bool:
        """True when every multiplier is zero and ``kappas`` fell back to uniform."""
        return self.lambda_bar == 0

    @classmethod
    def from_lambdas(cls, lambdas: Sequence[float] | np.ndarray, epsilon_norm: float) -> "DualState":
        lambdas = np.asarray(lambdas, dtype=float)
        lambda_bar = float(lambdas.sum())
        if lambda_bar > 0:
            kappas = lambdas / lambda_bar
        else:
            kappas = np.full(lambdas.size, 1.0 / lambdas.size)
        return cls(lambdas=lambdas, lambda_bar=lambda_bar, kappas=kappas, epsilon_norm=epsilon_norm)

    @classmethod
    def initial(cls, n_agents: int, epsilon_norm: float) -> "DualState":
        return cls.from_lambdas(np.zeros(n_agents), epsilon_norm)


@dataclass(eq=False)
class TrainResult:
    theta: PolicyParams
    history: list[IterationRecord]
    nu: PolicyParams | None = None
    x_star: PolicyParams | None = None
    dual: DualState | None = None
    agent_policies: list[PolicyParams] = field(default_factory=list)
    responses: list[PolicyParams] = field(default_factory=list)

    @property
    def profile(self) -> PolicyParams | list[PolicyParams]:
        """Policies the agents play: one per agent for independent learners, the shared one otherwise."""
        return list(self.agent_policies) if self.agent_policies else self.theta


def _epsilon_raw(epsilon_norm: float, social_welfare: float, raw_epsilon: bool) -> float:
    if raw_epsilon:
        return epsilon_norm
    if not social_welfare > 0:
        raise DualUpdateError(f"Social welfare must be positive to scale epsilon, got {social_welfare}")
    return epsilon_norm * social_welfare


def _check_returns(g_comparator: np.ndarray, g_theta: np.ndarray, social_welfare: float) -> None:
    if g_comparator.shape != g_theta.shape:
        raise DualUpdateError(f"Shape mismatch {g_comparator.shape} vs {g_theta.shape}")
    finite = np.all(np.isfinite(g_comparator)) and np.all(np.isfinite(g_theta))
    if not (finite and np.isfinite(social_welfare)):
        raise DualUpdateError("Dual update received non-finite returns")


def dual_update(
    g_xstar: Sequence[float] | np.ndarray,
    g_theta: Sequence[float] | np.ndarray,
    epsilon_norm: float,
    social_welfare: float,
    raw_epsilon: bool = False,
) -> DualState:
    """Set ``lambda_i = max(G_i(x*) - G_i(theta) - eps, 0)``.

    ``eps`` is ``epsilon_norm * social_welfare`` unless ``raw_epsilon`` is set.

    Raises
    ------
    DualUpdateError
        On non-finite inputs, mismatched lengths or a non-positive social welfare.
    """
    g_xstar = np.asarray(g_xstar, dtype=float)
    g_theta = np.asarray(g_theta, dtype=float)
    _check_returns(g_xstar, g_theta, social_welfare)
    epsilon = _epsilon_raw(epsilon_norm, social_welfare, raw_epsilon)
    return DualState.from_lambdas(np.maximum(g_xstar - g_theta - epsilon, 0.0), epsilon_norm)


def dual_ascent(
    lambdas: Sequence[float] | np.ndarray,
    g_nu: Sequence[float] | np.ndarray,
    g_theta: Sequence[float] | np.ndarray,
    epsilon_norm: float,
    social_welfare: float,
    step: float,
    raw_epsilon: bool = False,
) -> DualState:
    """Projected ascent ``lambda_i <- max(lambda_i + step * (G_i(nu_i) - G_i(theta) - eps), 0)``."""
    lambdas = np.asarray(lambdas, dtype=float)
    g_nu = np.asarray(g_nu, dtype=float)
    g_theta = np.asarray(g_theta, dtype=float)
    _check_returns(g_nu, g_theta, social_welfare)
    epsilon = _epsilon_raw(epsilon_norm, social_welfare, raw_epsilon)
    return DualState.from_lambdas(np.maximum(lambdas + step * (g_nu - g_theta - epsilon), 0.0), epsilon_norm)


def primal_update(
    theta: PolicyParams,
    nu_bar: PolicyParams,
    bundle: GradientBundle,
    alpha1: float,
    alpha2: float,
) -> tuple[PolicyParams, PolicyParams]:
    """One descent step ``theta - alpha1 * delta_theta`` and ``nu - alpha2 * delta_nu``.

    Raises
    ------
    GradientError
        If a direction has the wrong shape or a non-finite entry.
    """
    for name, params, delta in (("theta", theta, bundle.delta_theta), ("nu", nu_bar, bundle.delta_nu)):
        if delta.shape != params.values.shape:
            raise GradientError(f"delta_{name} has shape {delta.shape}, parameters {params.values.shape}")
        if not np.all(np.isfinite(delta)):
            bad = np.flatnonzero(~np.isfinite(delta)).tolist()
            raise GradientError(f"delta_{name} has non-finite entries at {bad}")
    return (
        theta.with_values(theta.values - alpha1 * bundle.delta_theta),
        nu_bar.with_values(nu_bar.values - alpha2 * bundle.delta_nu),
    )


def train_unified_solution(
    theta: PolicyParams,
    kappa: Sequence[float] | np.ndarray,
    env: MarketConfig,
    cfg: TrainConfig,
    rng: np.random.Generator,
    warm_start: PolicyParams | None = None,
) -> tuple[PolicyParams, float]:
    """Ascend ``G_w(x; theta)`` from ``warm_start`` for ``unified_train_iters`` steps.

    Returns the trained unified solution and its weighted return estimated on a fresh batch.
    """
    x = warm_start if warm_start is not None else theta

    def sample(candidate: PolicyParams, stream: np.random.Generator) -> TrajectoryBatch:
        return rollout_weighted(candidate, theta, kappa, env, cfg.episodes_per_estimate, stream)

    x = ascend_focal_policy(x, sample, cfg.unified_train_iters, cfg.unified_lr, rng, baseline=cfg.baseline)
    g_w_star = sample(x, rng).estimates().g_weighted
    return x, float(g_w_star)


def focal_returns(
    rho: PolicyParams, theta: PolicyParams, env: MarketConfig, episodes: int, rng: np.random.Generator
) -> np.ndarray:
    """``G_i(rho; theta)`` for every agent from one focal batch per agent."""
    return np.array(
        [rollout_focal(rho, theta, i, env, episodes, rng).estimates().g_focal[i] for i in range(env.n_agents)]
    )


def seed_rng(env: MarketConfig, cfg: TrainConfig) -> np.random.Generator:
    return np.random.default_rng([env.seed, cfg.seed])


def initial_policy(env: MarketConfig, cfg: TrainConfig, rng: np.random.Generator) -> PolicyParams:
    arch = PolicyArch.for_market(env.n_agents, env.n_actions, cfg.embed_dim)
    return PolicyParams.initialize(arch, rng, scale=cfg.init_scale)


class ConvergenceMonitor:
    """Tracks relative changes of the monitored series over a sliding window."""

    def __init__(self, window: int, tol: float):
        self.window = window
        self.tol = tol
        self._previous: np.ndarray | None = None
        self._streak = 0

    def update(self, *values: float) -> bool:
        current = np.asarray(values, dtype=float)
        if self._previous is not None:
            scale = np.maximum(np.abs(self._previous), 1e-8)
            small = bool(np.all(np.abs(current - self._previous) / scale < self.tol))
            self._streak = self._streak + 1 if small else 0
        self._previous = current
        return self._streak >= self.window


def elapsed_ms(start: float, cfg: TrainConfig) -> float:
    return 0.0 if cfg.deterministic else (time.perf_counter() - start) * 1e3


def bpg_train(
    env: MarketConfig,
    cfg: TrainConfig,
    on_iteration: IterationCallback | None = None,
) -> TrainResult:
    """Train the shared policy under the epsilon-NE constraint.

    Parameters
    ----------
    env
        Market to train on.
    cfg
        Hyper-parameters. ``cfg.epsilon_norm`` is the tolerance of this run.
    on_iteration
        Called with every :class:`IterationRecord` as soon as it is produced.

    Returns
    -------
    TrainResult
        Final ``theta``, ``nu``, ``x*``, dual state and one record per outer iteration.
    """
    rng = seed_rng(env, cfg)
    theta = initial_policy(env, cfg, rng)
    nu = theta
    x_star = theta
    dual = DualState.initial(env.n_agents, cfg.epsilon_norm)
    monitor = ConvergenceMonitor(cfg.convergence_window, cfg.convergence_tol)
    history: list[IterationRecord] = []
    logger.info("Training BPG on {} agents with epsilon={}", env.n_agents, cfg.epsilon_norm)

    for it in range(cfg.max_outer_iters):
        start = time.perf_counter()
        warm = theta if cfg.cold_start_unified else x_star
        x_star, g_w_star = train_unified_solution(theta, dual.kappas, env, cfg, rng, warm_start=warm)

        shared = rollout_shared(theta, env, cfg.episodes_per_estimate, rng)
        estimates = shared.estimates()
        g_xstar = focal_returns(x_star, theta, env, cfg.episodes_per_estimate, rng)
        dual = dual_update(
            g_xstar, estimates.g_shared, cfg.epsilon_norm, estimates.social_welfare, cfg.raw_epsilon
        )

        l1 = grad_L1(shared, dual.lambdas, theta, baseline=cfg.baseline)
        zeros = np.zeros_like(l1)
        ls, lg_prime, lw_star = zeros, zeros, zeros
        if dual.degenerate:
            logger.debug("iter {}: every multiplier is zero, kappa falls back to uniform", it)
        else:
            nu_batch = rollout_weighted(nu, theta, dual.kappas, env, cfg.episodes_per_estimate, rng)
            ls = grad_Ls(nu_batch, dual.lambda_bar, theta, baseline=cfg.baseline)
            lg_prime = grad_Lg_prime(nu_batch, dual.lambda_bar, nu, baseline=cfg.baseline)
            x_batch = rollout_weighted(x_star, theta, dual.kappas, env, cfg.episodes_per_estimate, rng)
            lw_star = grad_Lw_star(x_batch, theta, baseline=cfg.baseline)
        bundle = build_bundle(
            l1, ls, lg_prime, lw_star, cfg.xi, dual.lambda_bar, cfg.clamp_competitive_factor
        )
        theta, nu = primal_update(theta, nu, bundle, cfg.alpha1, cfg.alpha2)

        record = IterationRecord(
            iter=it,
            sw=estimates.social_welfare,
            lambda_bar=dual.lambda_bar,
            lambdas=dual.lambdas.tolist(),
            g_theta=estimates.g_shared.tolist(),
            g_xstar=g_xstar.tolist(),
            grad_norm_theta=bundle.norm_theta,
            grad_norm_nu=bundle.norm_nu,
            wall_ms=elapsed_ms(start, cfg),
        )
        history.append(record)
        if on_iteration is not None:
            on_iteration(record)
        logger.debug(
            "iter {}: sw={:.4f} lambda_bar={:.4f} G_w*={:.4f} |dtheta|={:.4g}",
            it,
            record.sw,
            record.lambda_bar,
            g_w_star,
            record.grad_norm_theta,
        )
        if monitor.update(record.sw, record.lambda_bar):
            logger.info("Converged after {} iterations", it + 1)
            break

    return TrainResult(theta=theta, history=history, nu=nu, x_star=x_star, dual=dual)


def unified_solution_ratios(
    x_star: PolicyParams,
    theta: PolicyParams,
    env: MarketConfig,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> UnifiedRatioReport:
    """Return of ``x*`` for every agent relative to a trained best response."""
    unified = focal_returns(x_star, theta, env, cfg.episodes_per_return, rng)
    best = np.array([train_best_response(i, theta, env, cfg, rng)[1] for i in range(env.n_agents)])
    ratios = np.divide(unified, best, out=np.ones_like(unified), where=best > 0)
    return UnifiedRatioReport(
        unified_returns=unified.tolist(), best_response_returns=best.tolist(), ratios=ratios.tolist()
    )
