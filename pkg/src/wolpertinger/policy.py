"""Two-stage action selection: proto-action, kNN candidates, critic re-rank.

The actor maps a state to a continuous proto-action in embedding space (it
is generally not a member of the action set). The index retrieves the k
closest discrete actions, and the critic picks the candidate with the
highest Q, ties going to the smaller action id. With k equal to the full set
size and an exact index this reduces to the classic greedy argmax over all
actions; with k = 1 it degenerates to plain nearest-neighbor lookup.

A policy bundle (actor, critic, index, action set) is read-only during
selection and safe to share across evaluation threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .action_index import ActionSet, IndexTier, NeighborResult
from .nets import Mlp, forward, init_mlp

DEFAULT_HIDDEN = (64, 64)

_CRITIC_CHUNK = 1 << 16


@dataclass(frozen=True)
class PolicyConfig:
    """Candidate-count and lookup settings.

    ``k`` is either an absolute int (>= 1) or a float fraction in (0, 1]
    of the action-set size, resolved as max(1, round(fraction * N)). With
    ``refine`` off the nearest retrieved candidate is taken regardless of Q.
    """

    k: int | float = 1
    tier: IndexTier = IndexTier.EXACT
    refine: bool = True

    def resolve_k(self, num_actions: int) -> int:
        if isinstance(self.k, bool):
            raise ValueError("k must be an int or a float, not bool")
        if isinstance(self.k, float):
            if not 0.0 < self.k <= 1.0:
                raise ValueError(f"fractional k must be in (0, 1], got {self.k}")
            return max(1, round(self.k * num_actions))
        k = int(self.k)
        if not 1 <= k <= num_actions:
            raise ValueError(f"k={k} outside [1, {num_actions}]")
        return k


@dataclass
class ExplorationConfig:
    """Epsilon-greedy jumps plus Gaussian proto-action noise.

    With probability epsilon the action is drawn uniformly from ``support``
    (the full set when None); otherwise zero-mean Gaussian noise with
    per-dimension ``noise_sigma`` is added to the proto-action before lookup.
    """

    epsilon: float = 0.0
    noise_sigma: np.ndarray | float = 0.0
    support: np.ndarray | None = None


@dataclass(frozen=True)
class PolicyDecision:
    """One action choice with its full provenance."""

    proto_action: np.ndarray
    candidates: NeighborResult
    q_values: np.ndarray
    chosen: int

    def __post_init__(self) -> None:
        if self.chosen not in self.candidates.ids:
            raise ValueError(f"chosen id {self.chosen} not among candidates")
        if self.q_values.shape != self.candidates.ids.shape:
            raise ValueError("q_values must align with candidates")


@dataclass(frozen=True)
class BatchSelection:
    """Vectorized selection result for a batch of states (used for Bellman
    targets, where candidate bookkeeping would just be overhead)."""

    ids: np.ndarray
    embeddings: np.ndarray
    q_values: np.ndarray


def make_actor(
    state_dim: int,
    actions: ActionSet,
    rng: np.random.Generator,
    hidden=DEFAULT_HIDDEN,
) -> Mlp:
    """Actor network squashed into the action-embedding bounding box."""
    lo, hi = actions.bounding_box()
    return init_mlp(
        (state_dim, *hidden, actions.dim),
        rng,
        hidden_activation="relu",
        output_activation="tanh_box",
        output_low=lo,
        output_high=hi,
    )


def make_critic(state_dim: int, action_dim: int, rng: np.random.Generator, hidden=DEFAULT_HIDDEN) -> Mlp:
    """Q network over concatenated (state, action-embedding) input."""
    return init_mlp((state_dim + action_dim, *hidden, 1), rng)


def proto_action(actor: Mlp, state) -> np.ndarray:
    """Continuous action proposal for a state; stays inside the actor's
    output box but need not coincide with any discrete action."""
    return forward(actor, state)


def critic_values(critic: Mlp, states: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
    """Q for row-aligned (state, embedding) pairs, chunked to bound memory."""
    states = np.asarray(states, dtype=np.float64)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    rows = states.shape[0]
    if rows <= _CRITIC_CHUNK:
        return forward(critic, np.concatenate([states, embeddings], axis=1))[:, 0]
    out = np.empty(rows)
    for lo in range(0, rows, _CRITIC_CHUNK):
        hi = min(lo + _CRITIC_CHUNK, rows)
        out[lo:hi] = forward(
            critic, np.concatenate([states[lo:hi], embeddings[lo:hi]], axis=1)
        )[:, 0]
    return out


def _argmax_smallest_id(q: np.ndarray, ids: np.ndarray) -> int:
    best = q.max()
    return int(ids[q == best].min())


class WolpertingerPolicy:
    def __init__(
        self,
        actor: Mlp,
        critic: Mlp,
        index,
        actions: ActionSet,
        k: int | float = 1,
        refine: bool = True,
    ) -> None:
        self.actor = actor
        self.critic = critic
        self.index = index
        self.actions = actions
        self.k = PolicyConfig(k=k).resolve_k(len(actions))
        self.refine = refine

    def proto_action(self, state) -> np.ndarray:
        return proto_action(self.actor, state)

    def _decide(self, state: np.ndarray, proto: np.ndarray) -> PolicyDecision:
        nbrs = self.index.query(proto, self.k)
        embs = self.actions.vectors[nbrs.ids]
        states = np.broadcast_to(state, (len(nbrs), state.shape[0]))
        q = critic_values(self.critic, states, embs)
        if self.refine:
            chosen = _argmax_smallest_id(q, nbrs.ids)
            assert q[nbrs.ids == chosen][0] == q.max()
        else:
            chosen = int(nbrs.ids[0])
        return PolicyDecision(proto_action=proto, candidates=nbrs, q_values=q, chosen=chosen)

    def select_action(self, state) -> PolicyDecision:
        state = np.asarray(state, dtype=np.float64)
        return self._decide(state, forward(self.actor, state))

    def select_action_explore(
        self, state, explore: ExplorationConfig, rng: np.random.Generator
    ) -> PolicyDecision:
        state = np.asarray(state, dtype=np.float64)
        proto = forward(self.actor, state)
        if explore.epsilon > 0.0 and rng.random() < explore.epsilon:
            support = explore.support
            if support is None:
                aid = int(rng.integers(len(self.actions)))
            else:
                support = np.asarray(support)
                if support.size == 0:
                    raise ValueError("empty exploration support")
                aid = int(support[rng.integers(support.size)])
            diff = self.actions.vectors[aid] - proto
            nbrs = NeighborResult(np.array([aid]), np.array([float(diff @ diff)]))
            q = critic_values(self.critic, state[None, :], self.actions.vectors[aid][None, :])
            return PolicyDecision(proto_action=proto, candidates=nbrs, q_values=q, chosen=aid)
        sigma = np.asarray(explore.noise_sigma, dtype=np.float64)
        if np.any(sigma > 0.0):
            proto = proto + rng.normal(size=proto.shape) * sigma
        return self._decide(state, proto)

    def select_batch(self, states: np.ndarray) -> BatchSelection:
        """Greedy selection for a batch of states at once."""
        states = np.asarray(states, dtype=np.float64)
        protos = forward(self.actor, states)
        ids, _ = self.index.query_batch(protos, self.k)
        nb, k = ids.shape
        flat_ids = ids.reshape(-1)
        embs = self.actions.vectors[flat_ids]
        rep_states = np.repeat(states, k, axis=0)
        q = critic_values(self.critic, rep_states, embs).reshape(nb, k)
        if self.refine:
            best = q.max(axis=1, keepdims=True)
            masked = np.where(q == best, ids, np.iinfo(np.int64).max)
            chosen = masked.min(axis=1)
            q_chosen = best[:, 0]
        else:
            chosen = ids[:, 0]
            q_chosen = q[:, 0]
        return BatchSelection(
            ids=chosen,
            embeddings=self.actions.vectors[chosen],
            q_values=q_chosen,
        )


def noise_sigma_for(actions: ActionSet, fraction: float) -> np.ndarray:
    """Per-dimension exploration noise: fraction of the embedding-box extent."""
    lo, hi = actions.bounding_box()
    return fraction * (hi - lo)
