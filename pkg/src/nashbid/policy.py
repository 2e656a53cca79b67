"""Shared linear-softmax bidding policy.

A policy maps the local features of an agent, concatenated with a learned embedding of the agent index,
to ``n_actions`` logits. The same parameter layout is used for the shared policy, the unified optimizer,
the unified solution and every best response, so their returns are directly comparable.

Parameter layout (flat, row-major)::

    values = [W (n_actions x (feature_dim + embed_dim)), embeddings (n_agents x embed_dim)]
"""

import struct
from collections.abc import Sequence
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Protocol

import numpy as np

from .exceptions import PolicyError
from .market import CONTEXT_DIM, AgentLocalState

CHECKPOINT_MAGIC = b"NCBP"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sI4I")
FEATURE_DIM = 2 + CONTEXT_DIM


@dataclass(frozen=True, slots=True)
class PolicyArch:
    feature_dim: int
    n_actions: int
    n_agents: int
    embed_dim: int

    @property
    def weight_shape(self) -> tuple[int, int]:
        return (self.n_actions, self.feature_dim + self.embed_dim)

    @property
    def embedding_shape(self) -> tuple[int, int]:
        return (self.n_agents, self.embed_dim)

    @property
    def size(self) -> int:
        rows, cols = self.weight_shape
        return rows * cols + self.n_agents * self.embed_dim

    @classmethod
    def for_market(cls, n_agents: int, n_actions: int, embed_dim: int) -> "PolicyArch":
        return cls(feature_dim=FEATURE_DIM, n_actions=n_actions, n_agents=n_agents, embed_dim=embed_dim)


@dataclass(frozen=True, slots=True)
class ActionDistribution:
    probs: np.ndarray

    def sample(self, rng: np.random.Generator) -> int:
        return int(sample_from_probs(self.probs[None, :], rng.random(1))[0])


class Policy(Protocol):
    """Anything that yields action probabilities for a batch of local features."""

    def action_probs(self, feats: np.ndarray, agents: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, slots=True, eq=False)
class PolicyParams:
    """Flat parameter vector with its architecture descriptor."""

    arch: PolicyArch
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.arch.size,):
            raise PolicyError(f"Parameter vector of shape {values.shape} does not match {self.arch}")
        if not np.all(np.isfinite(values)):
            raise PolicyError("Policy parameters must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, arch: PolicyArch) -> "PolicyParams":
        return cls(arch, np.zeros(arch.size))

    @classmethod
    def initialize(cls, arch: PolicyArch, rng: np.random.Generator, scale: float = 0.1) -> "PolicyParams":
        """Draw every weight and embedding entry from ``Uniform(-scale, scale)``."""
        return cls(arch, rng.uniform(-scale, scale, size=arch.size))

    @property
    def weights(self) -> np.ndarray:
        rows, cols = self.arch.weight_shape
        return self.values[: rows * cols].reshape(rows, cols)

    @property
    def embeddings(self) -> np.ndarray:
        rows, cols = self.arch.weight_shape
        return self.values[rows * cols :].reshape(self.arch.embedding_shape)

    def with_values(self, values: np.ndarray) -> "PolicyParams":
        return PolicyParams(self.arch, values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return self.arch == other.arch and np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash((self.arch, self.values.tobytes()))

    def logits(self, feats: np.ndarray, agents: np.ndarray) -> np.ndarray:
        inputs = np.concatenate([feats, self.embeddings[agents]], axis=1)
        return inputs @ self.weights.T

    def action_probs(self, feats: np.ndarray, agents: np.ndarray) -> np.ndarray:
        """Softmax probabilities for a batch of ``(features, agent)`` rows."""
        return softmax(self.logits(np.atleast_2d(feats), np.atleast_1d(agents)))

    def to_bytes(self) -> bytes:
        arch = self.arch
        header = _HEADER.pack(
            CHECKPOINT_MAGIC,
            CHECKPOINT_VERSION,
            arch.feature_dim,
            arch.n_actions,
            arch.n_agents,
            arch.embed_dim,
        )
        return header + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, payload: bytes) -> "PolicyParams":
        if len(payload) < _HEADER.size:
            raise PolicyError("Checkpoint is truncated")
        magic, version, *dims = _HEADER.unpack_from(payload)
        if magic != CHECKPOINT_MAGIC:
            raise PolicyError(f"Bad checkpoint magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise PolicyError(f"Unsupported checkpoint version {version}")
        arch = PolicyArch(*dims)
        body = payload[_HEADER.size :]
        if len(body) != 8 * arch.size:
            raise PolicyError(f"Checkpoint holds {len(body)} bytes of values, expected {8 * arch.size}")
        return cls(arch, np.frombuffer(body, dtype="<f8").astype(np.float64))

    def save(self, fpath: PathLike | str) -> Path:
        fpath = Path(fpath)
        fpath.write_bytes(self.to_bytes())
        return fpath

    @classmethod
    def load(cls, fpath: PathLike | str) -> "PolicyParams":
        fpath = Path(fpath)
        if not fpath.exists():
            raise PolicyError(f"Checkpoint {fpath} does not exist")
        return cls.from_bytes(fpath.read_bytes())


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def sample_from_probs(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    return np.minimum((uniforms[:, None] > cdf).sum(axis=1), probs.shape[1] - 1)


def features(s: AgentLocalState) -> np.ndarray:
    """Feature vector ``[step / T, budget ratio, context...]`` of a local state."""
    ratio = s.budget_remaining / s.budget if s.budget > 0 else 0.0
    return np.array([s.step / s.horizon, min(max(ratio, 0.0), 1.0), *s.context])


def feature_matrix(states: Sequence[AgentLocalState]) -> np.ndarray:
    return np.stack([features(s) for s in states])


def distribution(p: PolicyParams, s: AgentLocalState) -> ActionDistribution:
    """Action distribution of agent ``s.agent_index`` in local state ``s``."""
    if s.agent_index >= p.arch.n_agents:
        raise PolicyError(f"Agent {s.agent_index} outside a policy built for {p.arch.n_agents} agents")
    probs = p.action_probs(features(s)[None, :], np.array([s.agent_index]))[0]
    return ActionDistribution(probs)


def sample_action(p: PolicyParams, s: AgentLocalState, rng: np.random.Generator) -> int:
    return distribution(p, s).sample(rng)


def sample_actions(
    policy: Policy, feats: np.ndarray, agents: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized sampling, one uniform draw per row."""
    probs = policy.action_probs(feats, agents)
    return sample_from_probs(probs, rng.random(probs.shape[0]))


def weighted_score(
    p: PolicyParams,
    feats: np.ndarray,
    agents: np.ndarray,
    actions: np.ndarray,
    weights: np.ndarray,
) -> np.ndarray:
    """Return ``sum_b weights[b] * grad log pi(actions[b] | feats[b], agents[b])``."""
    feats = np.atleast_2d(feats)
    agents = np.asarray(agents, dtype=np.int64)
    if agents.size == 0:
        return np.zeros(p.arch.size)
    inputs = np.concatenate([feats, p.embeddings[agents]], axis=1)
    probs = softmax(inputs @ p.weights.T)
    dlogits = -probs
    dlogits[np.arange(agents.size), actions] += 1.0
    dlogits *= np.asarray(weights, dtype=float)[:, None]

    grad_w = dlogits.T @ inputs
    grad_emb = np.zeros(p.arch.embedding_shape)
    np.add.at(grad_emb, agents, dlogits @ p.weights[:, p.arch.feature_dim :])
    return np.concatenate([grad_w.ravel(), grad_emb.ravel()])


def entry_scores(p: PolicyParams, feats: np.ndarray, agents: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Row ``b`` is ``grad log pi(actions[b] | feats[b], agents[b])``, shape ``(rows, p.arch.size)``."""
    feats = np.atleast_2d(feats)
    agents = np.asarray(agents, dtype=np.int64)
    rows = agents.size
    inputs = np.concatenate([feats, p.embeddings[agents]], axis=1)
    dlogits = -softmax(inputs @ p.weights.T)
    dlogits[np.arange(rows), actions] += 1.0
    grad_w = (dlogits[:, :, None] * inputs[:, None, :]).reshape(rows, -1)
    grad_emb = np.zeros((rows, *p.arch.embedding_shape))
    grad_emb[np.arange(rows), agents] = dlogits @ p.weights[:, p.arch.feature_dim :]
    return np.concatenate([grad_w, grad_emb.reshape(rows, -1)], axis=1)


def log_prob_grad(p: PolicyParams, s: AgentLocalState, a: int) -> np.ndarray:
    """Analytic gradient of ``ln pi_p(a | s, i)`` with respect to every parameter."""
    if not 0 <= a < p.arch.n_actions:
        raise PolicyError(f"Action {a} outside [0, {p.arch.n_actions})")
    return weighted_score(p, features(s)[None, :], np.array([s.agent_index]), np.array([a]), np.ones(1))


def log_prob(p: PolicyParams, s: AgentLocalState, a: int) -> float:
    logits = p.logits(features(s)[None, :], np.array([s.agent_index]))[0]
    shifted = logits - logits.max()
    return float(shifted[a] - np.log(np.exp(shifted).sum()))


def permute_agents(p: PolicyParams, perm: Sequence[int]) -> PolicyParams:
    """Move the embedding row of agent ``i`` to ``perm[i]``."""
    embeddings = np.empty_like(p.embeddings)
    embeddings[list(perm)] = p.embeddings
    return p.with_values(np.concatenate([p.weights.ravel(), embeddings.ravel()]))
