"""Simulated item-to-item recommendation MDP.

The state is the item the user is currently consuming (observed as its
embedding). Recommending item j from item i is accepted with probability
W[i, j]; on acceptance the user moves to j, the agent collects j's reward,
and the session ends with probability 0.1. On rejection the user jumps to a
uniformly random item, the agent collects nothing, and the session ends with
probability 0.2.

W is stored sparsely (per-row id/probability arrays); rows are substochastic.
The simulator also exposes, per state, the top items of its W row as the
likely-good subset for guided exploration.
"""

from __future__ import annotations

import struct

import numpy as np

from ..action_index import ActionSet
from .base import Environment, EnvStep

ACCEPT_END_PROB = 0.1
REJECT_END_PROB = 0.2

_SIM_MAGIC = b"WREC"
_SIM_VERSION = 1


class RecommenderSim(Environment):
    def __init__(
        self,
        embeddings: np.ndarray,
        accept_cols: list[np.ndarray],
        accept_probs: list[np.ndarray],
        rewards: np.ndarray,
        seed: int = 0,
        accept_end_prob: float = ACCEPT_END_PROB,
        reject_end_prob: float = REJECT_END_PROB,
        guided_size: int = 10,
    ) -> None:
        emb = np.asarray(embeddings, dtype=np.float64)
        rew = np.asarray(rewards, dtype=np.float64)
        n = emb.shape[0]
        if emb.ndim != 2 or n < 2:
            raise ValueError("need at least 2 items with 2-D embeddings")
        if rew.shape != (n,) or not np.all(np.isfinite(rew)) or not np.all(np.isfinite(emb)):
            raise ValueError("rewards/embeddings must be finite and shape-matched")
        if len(accept_cols) != n or len(accept_probs) != n:
            raise ValueError("sparse acceptance rows must match the item count")
        self.embeddings = emb
        self.rewards = rew
        self._cols = [np.asarray(c, dtype=np.int64) for c in accept_cols]
        self._probs = [np.asarray(p, dtype=np.float64) for p in accept_probs]
        for i, (cols, probs) in enumerate(zip(self._cols, self._probs)):
            if cols.shape != probs.shape:
                raise ValueError(f"row {i}: ragged sparse row")
            if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
                raise ValueError(f"row {i}: acceptance probabilities outside [0, 1]")
            order = np.argsort(cols, kind="stable")
            self._cols[i] = cols[order]
            self._probs[i] = probs[order]
        self.accept_end_prob = accept_end_prob
        self.reject_end_prob = reject_end_prob
        self._rng = np.random.default_rng(np.random.SeedSequence(seed))
        self._current = 0
        self._done = True
        self._guided = self._build_guided(guided_size)
        self._actions: ActionSet | None = None

    def _build_guided(self, size: int) -> list[np.ndarray]:
        out = []
        for cols, probs in zip(self._cols, self._probs):
            if probs.size == 0:
                out.append(np.arange(len(self), dtype=np.int64))
                continue
            order = np.lexsort((cols, -probs))[:size]
            out.append(np.sort(cols[order]))
        return out

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @property
    def num_items(self) -> int:
        return len(self)

    @property
    def observation_dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def action_set(self) -> ActionSet:
        if self._actions is None:
            self._actions = ActionSet(self.embeddings)
        return self._actions

    def accept_prob(self, item: int, recommended: int) -> float:
        cols = self._cols[item]
        j = int(np.searchsorted(cols, recommended))
        if j < cols.size and cols[j] == recommended:
            return float(self._probs[item][j])
        return 0.0

    def exploration_support(self) -> np.ndarray:
        return self._guided[self._current]

    def reset(self) -> np.ndarray:
        self._current = int(self._rng.integers(len(self)))
        self._done = False
        return self.embeddings[self._current].copy()

    def step(self, action_id: int) -> EnvStep:
        if self._done:
            raise RuntimeError("session is over; call reset()")
        rec = int(action_id)
        if not 0 <= rec < len(self):
            raise ValueError(f"invalid item id {rec}")
        # draw order is fixed for determinism: accept, then jump (on reject),
        # then session end
        accepted = self._rng.random() < self.accept_prob(self._current, rec)
        if accepted:
            self._current = rec
            reward = float(self.rewards[rec])
            end_prob = self.accept_end_prob
        else:
            self._current = int(self._rng.integers(len(self)))
            reward = 0.0
            end_prob = self.reject_end_prob
        self._done = bool(self._rng.random() < end_prob)
        return EnvStep(
            observation=self.embeddings[self._current].copy(),
            reward=reward,
            terminal=self._done,
        )

    def save(self, path) -> None:
        """Binary format: magic/version/N/d header, embeddings, rewards, then
        the acceptance matrix as (row, col, prob) triplets."""
        triplets = [
            (i, int(c), float(p))
            for i in range(len(self))
            for c, p in zip(self._cols[i], self._probs[i])
        ]
        with open(path, "wb") as fh:
            fh.write(_SIM_MAGIC)
            fh.write(struct.pack("<IIIQ", _SIM_VERSION, len(self), self.observation_dim, len(triplets)))
            fh.write(struct.pack("<dd", self.accept_end_prob, self.reject_end_prob))
            fh.write(np.ascontiguousarray(self.embeddings, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.rewards, dtype="<f8").tobytes())
            for i, c, p in triplets:
                fh.write(struct.pack("<IId", i, c, p))

    @classmethod
    def load(cls, path, seed: int = 0) -> "RecommenderSim":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != _SIM_MAGIC:
            raise ValueError(f"{path}: bad magic {blob[:4]!r}")
        version, n, d, nnz = struct.unpack_from("<IIIQ", blob, 4)
        if version != _SIM_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        off = 4 + struct.calcsize("<IIIQ")
        accept_end, reject_end = struct.unpack_from("<dd", blob, off)
        off += 16
        emb = np.frombuffer(blob, dtype="<f8", count=n * d, offset=off).reshape(n, d).copy()
        off += 8 * n * d
        rew = np.frombuffer(blob, dtype="<f8", count=n, offset=off).copy()
        off += 8 * n
        cols: list[list[int]] = [[] for _ in range(n)]
        probs: list[list[float]] = [[] for _ in range(n)]
        for _ in range(nnz):
            i, c, p = struct.unpack_from("<IId", blob, off)
            off += struct.calcsize("<IId")
            cols[i].append(c)
            probs[i].append(p)
        return cls(
            emb,
            [np.asarray(c, dtype=np.int64) for c in cols],
            [np.asarray(p, dtype=np.float64) for p in probs],
            rew,
            seed=seed,
            accept_end_prob=accept_end,
            reject_end_prob=reject_end,
        )


def synth_recommender(
    num_items: int,
    embed_dim: int = 20,
    sparsity: float = 0.2,
    seed: int = 0,
    num_clusters: int | None = None,
    temperature: float = 0.02,
    peak_accept: float = 0.7,
    env_seed: int | None = None,
) -> RecommenderSim:
    """Generate a synthetic simulator with clustered low-rank structure.

    Item embeddings sit around random cluster centers; acceptance
    probabilities come from a per-row softmax over embedding dot products,
    truncated to the top round(sparsity * N) items and rescaled so the best
    recommendation is accepted with probability up to ``peak_accept`` while
    every row stays substochastic. Deterministic per seed.
    """
    if num_items < 2:
        raise ValueError("need at least 2 items")
    if not 0.0 < sparsity <= 1.0:
        raise ValueError("sparsity must be in (0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if num_clusters is None:
        num_clusters = max(2, num_items // 16)
    centers = rng.normal(0.0, 1.0, size=(num_clusters, embed_dim))
    member = rng.integers(num_clusters, size=num_items)
    emb = centers[member] + 0.3 * rng.normal(0.0, 1.0, size=(num_items, embed_dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    rewards = rng.uniform(0.0, 1.0, size=num_items)

    top_q = max(1, round(sparsity * num_items))
    cols: list[np.ndarray] = []
    probs: list[np.ndarray] = []
    chunk = max(1, (1 << 22) // num_items)
    for lo in range(0, num_items, chunk):
        hi = min(lo + chunk, num_items)
        aff = emb[lo:hi] @ emb.T / temperature
        # a user never "accepts" the item they are already consuming
        aff[np.arange(hi - lo), np.arange(lo, hi)] = -np.inf
        aff -= aff.max(axis=1, keepdims=True)
        soft = np.exp(aff)
        soft /= soft.sum(axis=1, keepdims=True)
        for r in range(hi - lo):
            row = soft[r]
            keep = np.lexsort((np.arange(num_items), -row))[:top_q]
            keep.sort()
            p = row[keep]
            p = p * min(peak_accept / p.max(), 1.0 / p.sum())
            cols.append(keep.astype(np.int64))
            probs.append(p)
    return RecommenderSim(
        emb, cols, probs, rewards, seed=seed if env_seed is None else env_seed
    )
