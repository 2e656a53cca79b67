"""Market configuration models."""

from collections.abc import Sequence
from typing import Annotated

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveFloat,
    PositiveInt,
    field_validator,
    model_validator,
)

DEFAULT_BUDGET = 5.0
DEFAULT_BID_LEVELS = (0.0, 0.5, 1.0, 1.5, 2.0)


def _check_distribution(atoms: list[float] | None, probs: list[float] | None, name: str) -> None:
    if atoms is None:
        if probs is not None:
            raise ValueError(f"{name}_probs given without {name}_atoms")
        return
    if len(atoms) == 0:
        raise ValueError(f"{name}_atoms must not be empty")
    if probs is None:
        return
    if len(probs) != len(atoms):
        raise ValueError(f"{name}_probs must have the same length as {name}_atoms")
    if not np.isclose(sum(probs), 1.0, atol=1e-12):
        raise ValueError(f"{name}_probs must sum to 1")


class ValueModel(BaseModel):
    """Impression value generator.

    The value of an impression for agent ``i`` is ``base_i * u`` where ``base_i`` is drawn once per
    episode (times the optional fixed ``agent_scales[i]``) and ``u`` once per impression. Either
    distribution is uniform on ``[low, high]`` unless discrete atoms are given.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    base_low: Annotated[NonNegativeFloat, Field(description="Lower end of the uniform base draw.")] = 0.5
    base_high: Annotated[NonNegativeFloat, Field(description="Upper end of the uniform base draw.")] = 2.0
    base_atoms: Annotated[list[NonNegativeFloat] | None, Field(description="Discrete base support.")] = None
    base_probs: Annotated[list[NonNegativeFloat] | None, Field(description="Base atom weights.")] = None
    noise_low: Annotated[NonNegativeFloat, Field(description="Lower end of the uniform u draw.")] = 0.5
    noise_high: Annotated[NonNegativeFloat, Field(description="Upper end of the uniform u draw.")] = 1.5
    noise_atoms: Annotated[list[NonNegativeFloat] | None, Field(description="Discrete u support.")] = None
    noise_probs: Annotated[list[NonNegativeFloat] | None, Field(description="u atom weights.")] = None
    shared_noise: Annotated[bool, Field(description="Draw one u per impression for all agents.")] = False
    agent_scales: Annotated[
        list[PositiveFloat] | None, Field(description="Fixed per-agent multipliers of the base value.")
    ] = None

    @model_validator(mode="after")
    def _check_supports(self) -> "ValueModel":
        if self.base_low > self.base_high:
            raise ValueError("base_low must not exceed base_high")
        if self.noise_low > self.noise_high:
            raise ValueError("noise_low must not exceed noise_high")
        _check_distribution(self.base_atoms, self.base_probs, "base")
        _check_distribution(self.noise_atoms, self.noise_probs, "noise")
        return self

    @property
    def is_discrete(self) -> bool:
        """True when both the base and the noise draws have finite support."""
        return self.base_atoms is not None and self.noise_atoms is not None

    def base_distribution(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(atoms, probs)`` of the discrete base draw."""
        assert self.base_atoms is not None
        atoms = np.asarray(self.base_atoms, dtype=float)
        probs = (
            np.asarray(self.base_probs, dtype=float)
            if self.base_probs is not None
            else np.full(len(atoms), 1.0 / len(atoms))
        )
        return atoms, probs

    def noise_distribution(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(atoms, probs)`` of the discrete noise draw."""
        assert self.noise_atoms is not None
        atoms = np.asarray(self.noise_atoms, dtype=float)
        probs = (
            np.asarray(self.noise_probs, dtype=float)
            if self.noise_probs is not None
            else np.full(len(atoms), 1.0 / len(atoms))
        )
        return atoms, probs

    def scales(self, n_agents: int) -> np.ndarray:
        if self.agent_scales is None:
            return np.ones(n_agents)
        return np.asarray(self.agent_scales, dtype=float)


class MarketConfig(BaseModel):
    """Auction game played by ``n_agents`` budget-constrained bidders over ``horizon`` steps."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_agents: Annotated[PositiveInt, Field(description="Number of advertisers N.")] = 10
    horizon: Annotated[PositiveInt, Field(description="Time steps T per episode.")] = 4
    impressions_per_step: Annotated[PositiveInt, Field(description="Impressions M per time step.")] = 10
    budgets: Annotated[list[NonNegativeFloat], Field(description="Budget B_i of every agent.")]
    value_model: ValueModel = ValueModel()
    reserve_price: Annotated[NonNegativeFloat, Field(description="Minimum winning bid.")] = 0.05
    bid_levels: Annotated[list[NonNegativeFloat], Field(description="Bid multipliers (action set).")] = list(
        DEFAULT_BID_LEVELS
    )
    seed: int = 0

    @model_validator(mode="before")
    @classmethod
    def _fill_budgets(cls, data):
        if isinstance(data, dict) and data.get("budgets") is None:
            n_agents = data.get("n_agents", cls.model_fields["n_agents"].default)
            data = {**data, "budgets": [DEFAULT_BUDGET] * int(n_agents)}
        return data

    @field_validator("bid_levels")
    @classmethod
    def _check_bid_levels(cls, bid_levels: list[float]) -> list[float]:
        if len(bid_levels) < 2:
            raise ValueError("at least two bid levels are required")
        if any(b <= a for a, b in zip(bid_levels, bid_levels[1:])):
            raise ValueError("bid levels must be strictly increasing")
        return bid_levels

    @model_validator(mode="after")
    def _check_lengths(self) -> "MarketConfig":
        if len(self.budgets) != self.n_agents:
            raise ValueError(f"budgets has {len(self.budgets)} entries for {self.n_agents} agents")
        scales = self.value_model.agent_scales
        if scales is not None and len(scales) != self.n_agents:
            raise ValueError(f"value_model.agent_scales has {len(scales)} entries for {self.n_agents} agents")
        return self

    @property
    def n_actions(self) -> int:
        return len(self.bid_levels)

    @property
    def budget_scale(self) -> float:
        """Normaliser of the budget context feature."""
        largest = max(self.budgets)
        return largest if largest > 0 else 1.0

    def budget_array(self) -> np.ndarray:
        return np.asarray(self.budgets, dtype=float)

    def level_array(self) -> np.ndarray:
        return np.asarray(self.bid_levels, dtype=float)

    def permuted(self, perm: Sequence[int]) -> "MarketConfig":
        """Relabel agents so that agent ``i`` becomes agent ``perm[i]``."""
        perm = list(perm)
        if sorted(perm) != list(range(self.n_agents)):
            raise ValueError(f"{perm} is not a permutation of {self.n_agents} agents")
        budgets = [0.0] * self.n_agents
        for i, j in enumerate(perm):
            budgets[j] = self.budgets[i]
        value_model = self.value_model
        if value_model.agent_scales is not None:
            scales = [0.0] * self.n_agents
            for i, j in enumerate(perm):
                scales[j] = value_model.agent_scales[i]
            value_model = value_model.model_copy(update={"agent_scales": scales})
        return self.model_copy(update={"budgets": budgets, "value_model": value_model})
