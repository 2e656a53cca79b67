"""Ablation and comparison trainers.

All trainers share the seeding, the policy initialization and the :class:`IterationRecord` schema of
:func:`nashbid.bpg.bpg_train` so their outputs can be reported side by side.
"""

import time
from collections.abc import Sequence

import numpy as np
from loguru import logger

from .bpg import (
    ConvergenceMonitor,
    DualState,
    IterationCallback,
    TrainResult,
    dual_ascent,
    elapsed_ms,
    initial_policy,
    primal_update,
    seed_rng,
)
from .enums import BaselineKind, RolloutMode
from .exploitability import ascend_focal_policy, deviation_sampler
from .gradients import build_bundle, grad_L1, grad_Lw_star
from .models.market import MarketConfig
from .models.records import IterationRecord
from .models.train import TrainConfig
from .policy import PolicyParams
from .rollout import TrajectoryBatch, rollout_focal, rollout_policies, rollout_shared


def _emit(
    record: IterationRecord, history: list[IterationRecord], on_iteration: IterationCallback | None
) -> None:
    history.append(record)
    if on_iteration is not None:
        on_iteration(record)
    logger.debug("iter {}: sw={:.4f} lambda_bar={:.4f}", record.iter, record.sw, record.lambda_bar)


def bpg_zero_direction(
    shared: TrajectoryBatch,
    focal_batches: Sequence[TrajectoryBatch],
    lambdas: np.ndarray,
    theta: PolicyParams,
    baseline: bool = True,
) -> np.ndarray:
    """Descent direction ``-L1(theta) + sum_i lambda_i grad_theta G_i(nu_i; theta)``.

    ``focal_batches[i]`` holds episodes where agent ``i`` plays its approximate best response.
    """
    direction = -grad_L1(shared, lambdas, theta, baseline=baseline)
    for i, weight in enumerate(lambdas):
        if weight > 0:
            direction = direction + weight * grad_Lw_star(focal_batches[i], theta, baseline=baseline)
    return direction


def train_fully_cooperative(
    env: MarketConfig, cfg: TrainConfig, on_iteration: IterationCallback | None = None
) -> TrainResult:
    """Plain social-welfare ascent on the shared policy."""
    rng = seed_rng(env, cfg)
    theta = initial_policy(env, cfg, rng)
    monitor = ConvergenceMonitor(cfg.convergence_window, cfg.convergence_tol)
    lambdas = np.zeros(env.n_agents)
    history: list[IterationRecord] = []
    logger.info("Training the fully cooperative baseline on {} agents", env.n_agents)

    for it in range(cfg.max_outer_iters):
        start = time.perf_counter()
        shared = rollout_shared(theta, env, cfg.episodes_per_estimate, rng)
        estimates = shared.estimates()
        l1 = grad_L1(shared, lambdas, theta, baseline=cfg.baseline)
        zeros = np.zeros_like(l1)
        bundle = build_bundle(l1, zeros, zeros, zeros, cfg.xi, 0.0)
        theta, _ = primal_update(theta, theta, bundle, cfg.alpha1, cfg.alpha2)
        record = IterationRecord(
            iter=it,
            sw=estimates.social_welfare,
            lambda_bar=0.0,
            lambdas=lambdas.tolist(),
            g_theta=estimates.g_shared.tolist(),
            g_xstar=[],
            grad_norm_theta=bundle.norm_theta,
            grad_norm_nu=0.0,
            wall_ms=elapsed_ms(start, cfg),
        )
        _emit(record, history, on_iteration)
        if monitor.update(record.sw):
            break
    return TrainResult(theta=theta, history=history)


def train_bpg_zero(
    env: MarketConfig, cfg: TrainConfig, on_iteration: IterationCallback | None = None
) -> TrainResult:
    """Constrained training without the unified optimizer.

    Each outer iteration refines a per-agent best response for ``bpg_zero_br_iters`` steps (warm started
    from the previous iteration), moves the multipliers by projected dual ascent and takes one primal step
    whose response term is treated as zero.
    """
    rng = seed_rng(env, cfg)
    theta = initial_policy(env, cfg, rng)
    responses = [theta] * env.n_agents
    dual = DualState.initial(env.n_agents, cfg.epsilon_norm)
    monitor = ConvergenceMonitor(cfg.convergence_window, cfg.convergence_tol)
    history: list[IterationRecord] = []
    logger.info("Training BPG_zero on {} agents with epsilon={}", env.n_agents, cfg.epsilon_norm)

    for it in range(cfg.max_outer_iters):
        start = time.perf_counter()
        shared = rollout_shared(theta, env, cfg.episodes_per_estimate, rng)
        estimates = shared.estimates()
        profile = [theta] * env.n_agents
        focal_batches, g_nu = [], np.zeros(env.n_agents)
        for i in range(env.n_agents):
            sample = deviation_sampler(profile, i, env, cfg.br_episodes)
            responses[i] = ascend_focal_policy(
                responses[i], sample, cfg.bpg_zero_br_iters, cfg.br_lr, rng, baseline=cfg.baseline
            )
            batch = rollout_focal(responses[i], theta, i, env, cfg.episodes_per_estimate, rng)
            focal_batches.append(batch)
            g_nu[i] = batch.estimates().g_focal[i]

        dual = dual_ascent(
            dual.lambdas,
            g_nu,
            estimates.g_shared,
            cfg.epsilon_norm,
            estimates.social_welfare,
            cfg.dual_step,
            cfg.raw_epsilon,
        )
        direction = bpg_zero_direction(shared, focal_batches, dual.lambdas, theta, baseline=cfg.baseline)
        zeros = np.zeros_like(direction)
        # with lambda_bar=0 assemble returns (-l1, 0)
        bundle = build_bundle(-direction, zeros, zeros, zeros, cfg.xi, 0.0)
        theta, _ = primal_update(theta, theta, bundle, cfg.alpha1, cfg.alpha2)
        record = IterationRecord(
            iter=it,
            sw=estimates.social_welfare,
            lambda_bar=dual.lambda_bar,
            lambdas=dual.lambdas.tolist(),
            g_theta=estimates.g_shared.tolist(),
            g_xstar=g_nu.tolist(),
            grad_norm_theta=bundle.norm_theta,
            grad_norm_nu=0.0,
            wall_ms=elapsed_ms(start, cfg),
        )
        _emit(record, history, on_iteration)
        if monitor.update(record.sw, record.lambda_bar):
            break
    return TrainResult(theta=theta, history=history, dual=dual, responses=responses)


def train_independent(
    env: MarketConfig, cfg: TrainConfig, on_iteration: IterationCallback | None = None
) -> TrainResult:
    """Round-robin best-response iteration with one policy per agent.

    Every outer iteration gives each agent in turn ``bpg_zero_br_iters`` ascent steps against the current
    policies of the others.
    """
    rng = seed_rng(env, cfg)
    policies = [initial_policy(env, cfg, rng)] * env.n_agents
    monitor = ConvergenceMonitor(cfg.convergence_window, cfg.convergence_tol)
    history: list[IterationRecord] = []
    logger.info("Training independent learners on {} agents", env.n_agents)

    for it in range(cfg.max_outer_iters):
        start = time.perf_counter()
        for i in range(env.n_agents):
            sample = deviation_sampler(policies, i, env, cfg.br_episodes)
            policies[i] = ascend_focal_policy(
                policies[i], sample, cfg.bpg_zero_br_iters, cfg.br_lr, rng, baseline=cfg.baseline
            )
        joint = rollout_policies(policies, env, cfg.episodes_per_estimate, rng, mode=RolloutMode.MIXED)
        estimates = joint.estimates()
        record = IterationRecord(
            iter=it,
            sw=estimates.social_welfare,
            lambda_bar=0.0,
            lambdas=[0.0] * env.n_agents,
            g_theta=estimates.g_shared.tolist(),
            g_xstar=[],
            grad_norm_theta=0.0,
            grad_norm_nu=0.0,
            wall_ms=elapsed_ms(start, cfg),
        )
        _emit(record, history, on_iteration)
        if monitor.update(record.sw):
            break
    return TrainResult(theta=policies[0], history=history, agent_policies=list(policies))


TRAINERS = {
    BaselineKind.BPG_ZERO: train_bpg_zero,
    BaselineKind.FULLY_COOPERATIVE: train_fully_cooperative,
    BaselineKind.INDEPENDENT: train_independent,
}
