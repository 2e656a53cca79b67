"""Training hyper-parameters."""

from typing import Annotated

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
)


class TrainConfig(BaseModel):
    """Hyper-parameters shared by the bi-level trainer, the baselines and best-response training."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    xi: Annotated[PositiveFloat, Field(description="Gap penalty weight of the single-level problem.")] = 1.0
    alpha1: Annotated[PositiveFloat, Field(description="Primal step size for theta.")] = 0.05
    alpha2: Annotated[PositiveFloat, Field(description="Primal step size for the unified optimizer.")] = 0.05
    epsilon_norm: Annotated[
        float, Field(ge=0.0, le=1.0, description="Nash tolerance as a fraction of social welfare.")
    ] = 0.08
    raw_epsilon: Annotated[bool, Field(description="Use epsilon_norm as an absolute tolerance.")] = False
    unified_train_iters: Annotated[NonNegativeInt, Field(description="Ascent steps per x* refresh.")] = 20
    unified_lr: Annotated[PositiveFloat, Field(description="Step size of the unified solution.")] = 0.1
    cold_start_unified: Annotated[bool, Field(description="Re-initialise x* every outer iteration.")] = False
    episodes_per_estimate: Annotated[PositiveInt, Field(description="Episodes per gradient estimate.")] = 256
    episodes_per_return: Annotated[PositiveInt, Field(description="Episodes per return evaluation.")] = 1024
    max_outer_iters: Annotated[NonNegativeInt, Field(description="Hard cap on outer iterations.")] = 100
    convergence_window: Annotated[PositiveInt, Field(description="Iterations the criterion must hold.")] = 10
    convergence_tol: Annotated[PositiveFloat, Field(description="Relative change tolerance.")] = 1e-3
    br_iters: Annotated[NonNegativeInt, Field(description="Best-response ascent steps.")] = 2000
    br_episodes: Annotated[PositiveInt, Field(description="Episodes per best-response step.")] = 64
    br_lr: Annotated[PositiveFloat, Field(description="Best-response step size.")] = 0.1
    bpg_zero_br_iters: Annotated[
        NonNegativeInt, Field(description="Per-agent ascent steps per iteration of bpg_zero and independent.")
    ] = 200
    dual_step: Annotated[PositiveFloat, Field(description="Dual ascent step of BPG_zero.")] = 1.0
    baseline: Annotated[bool, Field(description="Subtract the batch-mean reward-to-go baseline.")] = True
    clamp_competitive_factor: Annotated[bool, Field(description="Clamp (1 - xi/lambda_bar) at 0.")] = False
    embed_dim: Annotated[PositiveInt, Field(description="Agent embedding width.")] = 2
    init_scale: Annotated[NonNegativeFloat, Field(description="Half-width of the uniform init.")] = 0.1
    seed: int = 0
    deterministic: Annotated[bool, Field(description="Single process, wall-clock fields zeroed.")] = False
