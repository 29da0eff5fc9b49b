"""Scripted reference policies and the in-process learner.

The learner is a linear Bernoulli policy over the observation bits
trained with REINFORCE plus a mean-return baseline and an entropy
bonus.  Because the consequences of refusing on-guard duty (staying
recommended, eventually being blacklisted) only materialize in later
negotiations, trajectories span blocks of consecutive episodes and the
discount applies across episodes within a block; the per-episode
rewards themselves are summed undiscounted (episodes are at most a
few steps long).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import CheckpointError, TrainingDivergedError
from .types import AgentAction, Mode, Observation

CHECKPOINT_VERSION = 1


# -- scripted policies ----------------------------------------------------


def round_robin_designation(episode_index: int, n_agents: int) -> int:
    """Shared rotation schedule used when no recommendation exists."""
    return episode_index % n_agents


def cooperate_act(n_agents: int, agent_id: int, designated: int) -> AgentAction:
    """Play the cooperative line: the designated agent volunteers for
    everyone, the others demand exactly the designated agent."""
    if agent_id == designated:
        return AgentAction.make(n_agents, offers=[j for j in range(n_agents) if j != agent_id])
    return AgentAction.make(n_agents, demands=[designated])


def defect_act(n_agents: int) -> AgentAction:
    """Do nothing: no offers, no demands."""
    return AgentAction.zero(n_agents)


def random_act(
    n_agents: int, agent_id: int, rng: np.random.Generator, p: float = 0.5
) -> AgentAction:
    """Sample every non-self bit independently with probability p."""
    offers = (rng.random(n_agents) < p).astype(int)
    demands = (rng.random(n_agents) < p).astype(int)
    offers[agent_id] = 0
    demands[agent_id] = 0
    return AgentAction(offers=tuple(int(b) for b in offers), demands=tuple(int(b) for b in demands))


class Policy:
    """Minimal policy interface used by the harness."""

    def begin_episode(self, episode_index: int) -> None:
        pass

    def act(self, observation: Observation, agent_id: int) -> AgentAction:
        raise NotImplementedError


class CooperatePolicy(Policy):
    """Follows the service's recommendation when one is visible,
    otherwise falls back to the shared round-robin schedule."""

    def __init__(self, n_agents: int):
        self.n_agents = n_agents
        self._fallback = 0

    def begin_episode(self, episode_index: int) -> None:
        self._fallback = round_robin_designation(episode_index, self.n_agents)

    def act(self, observation: Observation, agent_id: int) -> AgentAction:
        onehot = observation.recommended_id_onehot
        designated = onehot.index(1) if 1 in onehot else self._fallback
        return cooperate_act(self.n_agents, agent_id, designated)


class DefectPolicy(Policy):
    def __init__(self, n_agents: int):
        self.n_agents = n_agents

    def act(self, observation: Observation, agent_id: int) -> AgentAction:
        return defect_act(self.n_agents)


class RandomPolicy(Policy):
    def __init__(self, n_agents: int, rng: np.random.Generator, p: float = 0.5):
        self.n_agents = n_agents
        self.rng = rng
        self.p = p

    def act(self, observation: Observation, agent_id: int) -> AgentAction:
        return random_act(self.n_agents, agent_id, self.rng, self.p)


# -- learner ---------------------------------------------------------------


@dataclass
class LearnerParams:
    """Linear policy parameters plus training hyperparameters.

    ``weights`` has shape (2N, 3N+2): one logit per action bit (offers
    then demands) from the flat observation vector.  Self-bits are
    masked to probability zero no matter what the parameters say.

    ``temperature`` scales the sampling distribution (logits / tau).
    Training anneals it toward a small value so the optimized policy
    approaches the deterministic one that evaluation measures; greedy
    action selection ignores it.
    """

    n_agents: int
    weights: np.ndarray
    bias: np.ndarray
    learning_rate: float = 0.2
    entropy_bonus: float = 0.01
    gamma: float = 0.99
    batch_episodes: int = 128
    block_episodes: int = 16
    temperature: float = 1.0

    @classmethod
    def zeros(cls, n_agents: int, **hyper) -> "LearnerParams":
        n_bits = 2 * n_agents
        n_features = Observation.vector_length(n_agents)
        return cls(
            n_agents=n_agents,
            weights=np.zeros((n_bits, n_features)),
            bias=np.zeros(n_bits),
            **hyper,
        )

    def copy(self) -> "LearnerParams":
        return replace(self, weights=self.weights.copy(), bias=self.bias.copy())


def action_mask(n_agents: int, agent_id: int) -> np.ndarray:
    """Boolean mask of usable action bits (self offer/demand are off)."""
    mask = np.ones(2 * n_agents, dtype=bool)
    mask[agent_id] = False
    mask[n_agents + agent_id] = False
    return mask


def bit_probabilities(
    weights: np.ndarray,
    bias: np.ndarray,
    features: np.ndarray,
    mask: np.ndarray,
    temperature: float = 1.0,
) -> np.ndarray:
    """Per-bit Bernoulli probabilities; masked bits are exactly zero."""
    logits = (weights @ features + bias) / temperature
    if not np.all(np.isfinite(logits)):
        raise CheckpointError("non-finite logits; checkpoint or parameters are corrupt")
    probs = 1.0 / (1.0 + np.exp(-logits))
    probs[~mask] = 0.0
    return probs


def learner_act(
    params: LearnerParams,
    observation: Observation,
    agent_id: int,
    rng: Optional[np.random.Generator] = None,
    greedy: bool = False,
) -> AgentAction:
    """Sample (or take greedily) an action from the linear policy.

    Greedy mode sets a bit iff its probability strictly exceeds 1/2,
    so freshly initialized (all-zero) parameters act as defectors.
    """
    mask = action_mask(params.n_agents, agent_id)
    if greedy:
        probs = bit_probabilities(
            params.weights, params.bias, observation.to_vector(), mask
        )
        bits = (probs > 0.5).astype(int)
    else:
        probs = bit_probabilities(
            params.weights, params.bias, observation.to_vector(), mask, params.temperature
        )
        if rng is None:
            raise ValueError("sampling requires an rng; pass greedy=True for deterministic use")
        bits = (rng.random(probs.shape) < probs).astype(int)
    n = params.n_agents
    return AgentAction(
        offers=tuple(int(b) for b in bits[:n]),
        demands=tuple(int(b) for b in bits[n:]),
    )


class LearnerPolicy(Policy):
    def __init__(
        self,
        params: LearnerParams,
        rng: Optional[np.random.Generator] = None,
        greedy: bool = True,
    ):
        self.params = params
        self.rng = rng
        self.greedy = greedy

    def act(self, observation: Observation, agent_id: int) -> AgentAction:
        return learner_act(self.params, observation, agent_id, rng=self.rng, greedy=self.greedy)


# -- trajectories and the policy-gradient update ----------------------------


@dataclass
class EpisodeTrace:
    """One agent's record of one episode inside a block.

    ``features``/``bits`` hold the acting steps (empty while excluded);
    ``rewards`` aligns with them.  ``total_return`` is the episode's
    full undiscounted return including terminal and exclusion rewards.
    """

    features: list[np.ndarray] = field(default_factory=list)
    bits: list[np.ndarray] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    total_return: float = 0.0


Block = Sequence[EpisodeTrace]


def _forward_values(block: Block, gamma: float) -> list[float]:
    """Discounted-across-episodes value of each episode suffix."""
    values = [0.0] * len(block)
    tail = 0.0
    for e in range(len(block) - 1, -1, -1):
        tail = block[e].total_return + gamma * tail
        values[e] = tail
    return values


def _returns_to_go(block: Block, gamma: float) -> list[list[float]]:
    """G(e, t): rewards from step t to the episode end plus the
    discounted returns of all later episodes in the block."""
    forward = _forward_values(block, gamma)
    out = []
    for e, episode in enumerate(block):
        future = gamma * forward[e + 1] if e + 1 < len(block) else 0.0
        tail = 0.0
        tails = [0.0] * len(episode.rewards)
        for t in range(len(episode.rewards) - 1, -1, -1):
            tail += episode.rewards[t]
            tails[t] = tail + future
        out.append(tails)
    return out


def reinforce_gradient(
    params: LearnerParams,
    agent_id: int,
    blocks: Sequence[Block],
    weights: Optional[Sequence[float]] = None,
    use_baseline: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Policy gradient of the discounted-return objective.

    Returns (dW, db), the ascent direction averaged over blocks.
    ``weights`` re-weights whole blocks (defaults to uniform; exact
    enumeration tests weight each block by its probability).  The
    baseline is the across-block mean return-to-go at each (episode,
    step) position; positions seen in a single block contribute no
    gradient, which only discards signal, never biases it.
    """
    mask = action_mask(params.n_agents, agent_id)
    if weights is None:
        weights = [1.0 / len(blocks)] * len(blocks)
    g_values = [_returns_to_go(block, params.gamma) for block in blocks]

    baseline: dict[tuple[int, int], float] = {}
    if use_baseline:
        sums: dict[tuple[int, int], list[float]] = {}
        for per_block in g_values:
            for e, tails in enumerate(per_block):
                for t, g in enumerate(tails):
                    sums.setdefault((e, t), []).append(g)
        baseline = {pos: sum(vals) / len(vals) for pos, vals in sums.items()}

    tau = params.temperature
    grad_w = np.zeros_like(params.weights)
    grad_b = np.zeros_like(params.bias)
    for block, per_block, block_weight in zip(blocks, g_values, weights):
        for e, episode in enumerate(block):
            for t in range(len(episode.rewards)):
                advantage = per_block[e][t]
                if use_baseline:
                    advantage -= baseline[(e, t)]
                if advantage == 0.0:
                    continue
                x = episode.features[t]
                a = episode.bits[t]
                probs = bit_probabilities(params.weights, params.bias, x, mask, tau)
                dz = (a - probs) * mask / tau
                grad_w += block_weight * advantage * np.outer(dz, x)
                grad_b += block_weight * advantage * dz
    return grad_w, grad_b


def entropy_gradient(
    params: LearnerParams, agent_id: int, blocks: Sequence[Block]
) -> tuple[np.ndarray, np.ndarray]:
    """Ascent direction on the summed Bernoulli entropies of all
    visited states, averaged over blocks."""
    mask = action_mask(params.n_agents, agent_id)
    tau = params.temperature
    grad_w = np.zeros_like(params.weights)
    grad_b = np.zeros_like(params.bias)
    for block in blocks:
        for episode in block:
            for x in episode.features:
                scaled = (params.weights @ x + params.bias) / tau
                probs = 1.0 / (1.0 + np.exp(-scaled))
                dz = -scaled * probs * (1.0 - probs) * mask / tau
                grad_w += np.outer(dz, x) / len(blocks)
                grad_b += dz / len(blocks)
    return grad_w, grad_b


def learner_update(
    params: LearnerParams, agent_id: int, blocks: Sequence[Block]
) -> tuple[LearnerParams, dict]:
    """One gradient-ascent step on the batch of trajectory blocks.

    Returns the updated parameters and diagnostics (mean undiscounted
    episode return and gradient norm).  Trajectory order within the
    batch does not affect the result.
    """
    if not blocks:
        raise ValueError("empty batch")
    grad_w, grad_b = reinforce_gradient(params, agent_id, blocks)
    if params.entropy_bonus:
        ent_w, ent_b = entropy_gradient(params, agent_id, blocks)
        grad_w = grad_w + params.entropy_bonus * ent_w
        grad_b = grad_b + params.entropy_bonus * ent_b

    new_w = params.weights + params.learning_rate * grad_w
    new_b = params.bias + params.learning_rate * grad_b
    if not (np.all(np.isfinite(new_w)) and np.all(np.isfinite(new_b))):
        raise TrainingDivergedError(f"non-finite parameters for agent {agent_id}")

    episode_returns = [ep.total_return for block in blocks for ep in block]
    diagnostics = {
        "mean_return": sum(episode_returns) / len(episode_returns) if episode_returns else 0.0,
        "grad_norm": float(np.sqrt(np.sum(grad_w**2) + np.sum(grad_b**2))),
    }
    updated = replace(params, weights=new_w, bias=new_b)
    return updated, diagnostics


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(path, mode: Mode, params_list: Sequence[LearnerParams]) -> None:
    """Write a versioned JSON checkpoint of all agents' parameters."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "n_agents": params_list[0].n_agents,
        "mode": Mode.parse(mode).value,
        "per_agent": [
            {"weights": p.weights.tolist(), "bias": p.bias.tolist()} for p in params_list
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[int, Mode, list[LearnerParams]]:
    """Load a checkpoint, validating shape and finiteness."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version: {doc.get('version')!r}")
    n_agents = int(doc["n_agents"])
    mode = Mode.parse(doc["mode"])
    params_list = []
    n_bits = 2 * n_agents
    n_features = Observation.vector_length(n_agents)
    for idx, entry in enumerate(doc["per_agent"]):
        weights = np.asarray(entry["weights"], dtype=float)
        bias = np.asarray(entry["bias"], dtype=float)
        if weights.shape != (n_bits, n_features) or bias.shape != (n_bits,):
            raise CheckpointError(f"agent {idx}: parameter shape mismatch")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
            raise CheckpointError(f"agent {idx}: non-finite parameters")
        params_list.append(LearnerParams(n_agents=n_agents, weights=weights, bias=bias))
    if len(params_list) != n_agents:
        raise CheckpointError("checkpoint does not cover every agent")
    return n_agents, mode, params_list
