"""Discrete action embeddings and k-nearest-neighbor lookup over them.

An ActionSet maps dense integer ids to n-dimensional embedding vectors. The
index answers squared-L2 kNN queries either exactly (brute-force scan) or
approximately via two classic structures with fixed accuracy tiers:

* ``slow``   -- hierarchical k-means tree (branching 16), best-bin-first.
* ``medium`` -- randomized k-d trees, 39 candidate points checked at leaves.
* ``fast``   -- a single randomized k-d tree, 1 leaf bucket checked.

All tie-breaking is by smaller action id, everywhere, so results are
deterministic for a fixed build seed. Indexes are immutable after build and
safe to query from multiple threads.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass
from enum import Enum

import numpy as np


class ActionSet:
    """Dense ids 0..N-1 mapped to finite n-dimensional embedding vectors."""

    def __init__(self, vectors) -> None:
        v = np.ascontiguousarray(np.asarray(vectors, dtype=np.float64))
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("action embeddings must be finite")
        self.vectors = v

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def vector(self, action_id: int) -> np.ndarray:
        if not 0 <= action_id < len(self):
            raise KeyError(f"action id {action_id} out of range [0, {len(self)})")
        return self.vectors[action_id]

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-dimension (low, high) envelope of the embeddings."""
        return self.vectors.min(axis=0), self.vectors.max(axis=0)

    @classmethod
    def from_csv(cls, path) -> "ActionSet":
        """Load "id,x0,x1,..." rows; ids must be a dense 0..N-1 set."""
        ids, rows = [], []
        with open(path, newline="") as fh:
            for rec in csv.reader(fh):
                if not rec:
                    continue
                ids.append(int(rec[0]))
                rows.append([float(x) for x in rec[1:]])
        if not rows:
            raise ValueError(f"{path}: no action rows")
        n = len(rows[0])
        if any(len(r) != n for r in rows):
            raise ValueError(f"{path}: inconsistent embedding widths")
        order = np.asarray(ids)
        if sorted(ids) != list(range(len(ids))):
            raise ValueError(f"{path}: action ids are not dense 0..{len(ids) - 1}")
        out = np.empty((len(rows), n), dtype=np.float64)
        out[order] = np.asarray(rows, dtype=np.float64)
        return cls(out)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for i, row in enumerate(self.vectors):
                w.writerow([i] + [repr(float(x)) for x in row])


class IndexTier(str, Enum):
    EXACT = "exact"
    SLOW = "slow"
    MEDIUM = "medium"
    FAST = "fast"


@dataclass(frozen=True)
class IndexConfig:
    """Per-tier lookup parameters.

    ``checks`` counts candidate points examined at leaf buckets for the k-d
    tiers; ``kmeans_checks`` is the analogous budget for the k-means tree
    (None picks half the dataset, generous enough for a high-recall "slow"
    tier). Budgets are floors: a query always gathers at least k candidates
    when the set has that many.
    """

    tier: IndexTier
    branching: int = 16
    kmeans_checks: int | None = None
    num_trees: int = 4
    checks: int = 39
    leaf_size: int = 16

    def __post_init__(self) -> None:
        if self.branching < 2:
            raise ValueError("branching must be >= 2")
        if self.checks < 1 or (self.kmeans_checks is not None and self.kmeans_checks < 1):
            raise ValueError("leaf checks must be >= 1")
        if self.num_trees < 1 or self.leaf_size < 1:
            raise ValueError("num_trees and leaf_size must be >= 1")

    @staticmethod
    def exact() -> "IndexConfig":
        return IndexConfig(tier=IndexTier.EXACT)

    @staticmethod
    def slow() -> "IndexConfig":
        return IndexConfig(tier=IndexTier.SLOW, branching=16)

    @staticmethod
    def medium() -> "IndexConfig":
        return IndexConfig(tier=IndexTier.MEDIUM, num_trees=4, checks=39)

    @staticmethod
    def fast() -> "IndexConfig":
        return IndexConfig(tier=IndexTier.FAST, num_trees=1, checks=1)

    @staticmethod
    def for_tier(tier: "IndexTier | str") -> "IndexConfig":
        tier = IndexTier(tier)
        return {
            IndexTier.EXACT: IndexConfig.exact,
            IndexTier.SLOW: IndexConfig.slow,
            IndexTier.MEDIUM: IndexConfig.medium,
            IndexTier.FAST: IndexConfig.fast,
        }[tier]()


@dataclass(frozen=True)
class NeighborResult:
    """Candidate actions ordered by ascending squared L2 distance."""

    ids: np.ndarray
    distances: np.ndarray

    def __post_init__(self) -> None:
        ids = np.asarray(self.ids, dtype=np.int64)
        d2 = np.asarray(self.distances, dtype=np.float64)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "distances", d2)
        if ids.shape != d2.shape or ids.ndim != 1 or ids.size == 0:
            raise ValueError("ids and distances must be matching non-empty 1-D arrays")
        if np.any(np.diff(d2) < 0):
            raise ValueError("distances must be non-decreasing")
        if np.unique(ids).size != ids.size:
            raise ValueError("duplicate action ids in neighbor result")

    def __len__(self) -> int:
        return int(self.ids.size)


def _k_smallest(d2: np.ndarray, ids: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Smallest k by (distance, id); full deterministic tie-breaking."""
    if k >= d2.size:
        order = np.lexsort((ids, d2))
        return ids[order], d2[order]
    part = np.argpartition(d2, k - 1)[:k]
    thresh = d2[part].max()
    cand = np.flatnonzero(d2 <= thresh)
    order = np.lexsort((ids[cand], d2[cand]))[:k]
    sel = cand[order]
    return ids[sel], d2[sel]


def _check_proto(proto, dim: int) -> np.ndarray:
    p = np.asarray(proto, dtype=np.float64)
    if p.shape != (dim,):
        raise ValueError(f"query point has shape {p.shape}, expected ({dim},)")
    return p


_SCAN_CHUNK = 1 << 18


class ExactIndex:
    """Thin wrapper over a brute-force squared-L2 scan."""

    tier = IndexTier.EXACT

    def __init__(self, actions: ActionSet) -> None:
        self.actions = actions
        self._v = actions.vectors
        self._sq = np.einsum("ij,ij->i", self._v, self._v)

    def query(self, proto, k: int) -> NeighborResult:
        p = _check_proto(proto, self.actions.dim)
        if k < 1:
            raise ValueError("k must be >= 1")
        k = min(k, len(self.actions))
        n = self._v.shape[0]
        if n <= _SCAN_CHUNK:
            diff = self._v - p
            d2 = np.einsum("ij,ij->i", diff, diff)
            ids, dists = _k_smallest(d2, np.arange(n, dtype=np.int64), k)
            return NeighborResult(ids, dists)
        best_ids = np.empty(0, dtype=np.int64)
        best_d2 = np.empty(0, dtype=np.float64)
        for lo in range(0, n, _SCAN_CHUNK):
            hi = min(lo + _SCAN_CHUNK, n)
            diff = self._v[lo:hi] - p
            d2 = np.einsum("ij,ij->i", diff, diff)
            ids = np.concatenate([best_ids, np.arange(lo, hi, dtype=np.int64)])
            d2 = np.concatenate([best_d2, d2])
            best_ids, best_d2 = _k_smallest(d2, ids, k)
        return NeighborResult(best_ids, best_d2)

    def query_batch(self, protos: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized top-k for a batch of query rows.

        Uses the expanded |v|^2 - 2 v.p + |p|^2 form (clamped at zero), which
        trades the single-query path's last-ulp distance exactness for speed.
        """
        protos = np.asarray(protos, dtype=np.float64)
        if protos.ndim != 2 or protos.shape[1] != self.actions.dim:
            raise ValueError(f"query batch has shape {protos.shape}, expected (B, {self.actions.dim})")
        if k < 1:
            raise ValueError("k must be >= 1")
        k = min(k, len(self.actions))
        nb = protos.shape[0]
        psq = np.einsum("ij,ij->i", protos, protos)
        out_ids = np.empty((nb, k), dtype=np.int64)
        out_d2 = np.empty((nb, k), dtype=np.float64)
        n = self._v.shape[0]
        chunk = max(k, _SCAN_CHUNK // max(1, nb))
        run_ids = run_d2 = None
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            d2 = self._sq[lo:hi][None, :] - 2.0 * (protos @ self._v[lo:hi].T)
            d2 += psq[:, None]
            np.maximum(d2, 0.0, out=d2)
            ids = np.broadcast_to(np.arange(lo, hi, dtype=np.int64), d2.shape)
            if run_ids is not None:
                d2 = np.concatenate([run_d2, d2], axis=1)
                ids = np.concatenate([run_ids, ids], axis=1)
            if hi < n:
                run_ids = np.empty((nb, min(k, d2.shape[1])), dtype=np.int64)
                run_d2 = np.empty_like(run_ids, dtype=np.float64)
                for b in range(nb):
                    run_ids[b], run_d2[b] = _k_smallest(d2[b], np.ascontiguousarray(ids[b]), k)
            else:
                for b in range(nb):
                    out_ids[b], out_d2[b] = _k_smallest(d2[b], np.ascontiguousarray(ids[b]), k)
        return out_ids, out_d2


class _KdNode:
    __slots__ = ("split_dim", "split_val", "left", "right", "indices")

    def __init__(self, split_dim=-1, split_val=0.0, left=None, right=None, indices=None):
        self.split_dim = split_dim
        self.split_val = split_val
        self.left = left
        self.right = right
        self.indices = indices  # leaf bucket, None for internal nodes


_KD_TOP_VARIANCE = 5


class KdForestIndex:
    """Randomized k-d trees with a best-bin-first, budgeted search.

    Each internal node splits on a random choice among the top-variance
    dimensions at the mean value. The search walks all trees through one
    shared priority queue and stops once ``checks`` candidate points have
    been examined (and at least k candidates gathered).
    """

    def __init__(self, actions: ActionSet, config: IndexConfig, seed: int = 0) -> None:
        self.actions = actions
        self.config = config
        self.tier = config.tier
        self._v = actions.vectors
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self._roots = [
            self._build(np.arange(len(actions), dtype=np.int64), rng)
            for _ in range(config.num_trees)
        ]

    def _build(self, indices: np.ndarray, rng: np.random.Generator) -> _KdNode:
        if indices.size <= self.config.leaf_size:
            return _KdNode(indices=indices)
        pts = self._v[indices]
        var = pts.var(axis=0)
        usable = np.flatnonzero(var > 0.0)
        if usable.size == 0:
            return _KdNode(indices=indices)  # all points identical
        top = usable[np.argsort(var[usable], kind="stable")[::-1][:_KD_TOP_VARIANCE]]
        dim = int(top[rng.integers(top.size)])
        vals = pts[:, dim]
        split = float(vals.mean())
        mask = vals < split
        if not mask.any() or mask.all():
            return _KdNode(indices=indices)
        return _KdNode(
            split_dim=dim,
            split_val=split,
            left=self._build(indices[mask], rng),
            right=self._build(indices[~mask], rng),
        )

    def query(self, proto, k: int) -> NeighborResult:
        p = _check_proto(proto, self.actions.dim)
        if k < 1:
            raise ValueError("k must be >= 1")
        k = min(k, len(self.actions))
        budget = max(self.config.checks, k)
        ids, d2 = self._search(p, k, budget)
        return NeighborResult(ids, d2)

    def _search(self, p: np.ndarray, k: int, budget: int) -> tuple[np.ndarray, np.ndarray]:
        heap: list[tuple[float, int, _KdNode]] = []
        counter = 0
        for root in self._roots:
            heap.append((0.0, counter, root))
            counter += 1
        heapq.heapify(heap)
        seen: set[int] = set()
        cand_ids: list[np.ndarray] = []
        cand_d2: list[np.ndarray] = []
        checked = 0
        while heap and (checked < budget or len(seen) < k):
            bound, _, node = heapq.heappop(heap)
            while node.indices is None:
                delta = p[node.split_dim] - node.split_val
                if delta < 0.0:
                    near, far = node.left, node.right
                else:
                    near, far = node.right, node.left
                heapq.heappush(heap, (bound + delta * delta, counter, far))
                counter += 1
                node = near
            fresh = [i for i in node.indices.tolist() if i not in seen]
            checked += len(node.indices)
            if fresh:
                seen.update(fresh)
                idx = np.asarray(fresh, dtype=np.int64)
                diff = self._v[idx] - p
                cand_ids.append(idx)
                cand_d2.append(np.einsum("ij,ij->i", diff, diff))
        ids = np.concatenate(cand_ids)
        d2 = np.concatenate(cand_d2)
        return _k_smallest(d2, ids, min(k, ids.size))

    def query_batch(self, protos: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        return _query_batch_by_row(self, protos, k)


class _KMeansNode:
    __slots__ = ("centers", "children", "indices")

    def __init__(self, centers=None, children=None, indices=None):
        self.centers = centers
        self.children = children
        self.indices = indices


_KMEANS_ITERS = 8


class KMeansTreeIndex:
    """Hierarchical k-means tree with best-bin-first descent.

    Interior nodes hold ``branching`` centroids; the search expands nodes in
    order of centroid distance until the point budget is exhausted. A budget
    covering the whole set degenerates to the exact scan and is answered by
    one (the results are identical, the scan is just faster).
    """

    def __init__(self, actions: ActionSet, config: IndexConfig, seed: int = 0) -> None:
        self.actions = actions
        self.config = config
        self.tier = config.tier
        self._v = actions.vectors
        n = len(actions)
        self.checks = config.kmeans_checks if config.kmeans_checks is not None else max(1024, n // 2)
        self._exact = ExactIndex(actions) if self.checks >= n else None
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self._root = self._build(np.arange(n, dtype=np.int64), rng)

    def _build(self, indices: np.ndarray, rng: np.random.Generator) -> _KMeansNode:
        b = self.config.branching
        if indices.size <= max(self.config.leaf_size, b):
            return _KMeansNode(indices=indices)
        pts = self._v[indices]
        centers = pts[rng.choice(indices.size, size=b, replace=False)].copy()
        assign = None
        for _ in range(_KMEANS_ITERS):
            d2 = (
                np.einsum("ij,ij->i", pts, pts)[:, None]
                - 2.0 * (pts @ centers.T)
                + np.einsum("ij,ij->i", centers, centers)[None, :]
            )
            new_assign = d2.argmin(axis=1)
            if assign is not None and np.array_equal(new_assign, assign):
                break
            assign = new_assign
            for c in range(centers.shape[0]):
                members = assign == c
                if members.any():
                    centers[c] = pts[members].mean(axis=0)
                else:
                    # reseed an empty cluster at the point farthest from its center
                    far = int(d2.min(axis=1).argmax())
                    centers[c] = pts[far]
        groups = [indices[assign == c] for c in range(centers.shape[0])]
        kept = [(centers[c], g) for c, g in enumerate(groups) if g.size > 0]
        if len(kept) < 2:
            return _KMeansNode(indices=indices)  # degenerate: no useful split
        return _KMeansNode(
            centers=np.asarray([c for c, _ in kept]),
            children=[self._build(g, rng) for _, g in kept],
        )

    def query(self, proto, k: int) -> NeighborResult:
        p = _check_proto(proto, self.actions.dim)
        if k < 1:
            raise ValueError("k must be >= 1")
        k = min(k, len(self.actions))
        if self._exact is not None:
            return self._exact.query(p, k)
        budget = max(self.checks, k)
        heap: list[tuple[float, int, _KMeansNode]] = [(0.0, 0, self._root)]
        counter = 1
        cand_ids: list[np.ndarray] = []
        cand_d2: list[np.ndarray] = []
        checked = 0
        while heap and checked < budget:
            _, _, node = heapq.heappop(heap)
            while node.indices is None:
                diff = node.centers - p
                dc = np.einsum("ij,ij->i", diff, diff)
                near = int(dc.argmin())
                for c, child in enumerate(node.children):
                    if c != near:
                        heapq.heappush(heap, (float(dc[c]), counter, child))
                        counter += 1
                node = node.children[near]
            idx = node.indices
            diff = self._v[idx] - p
            cand_ids.append(idx)
            cand_d2.append(np.einsum("ij,ij->i", diff, diff))
            checked += idx.size
        ids = np.concatenate(cand_ids)
        d2 = np.concatenate(cand_d2)
        ids, d2 = _k_smallest(d2, ids, min(k, ids.size))
        return NeighborResult(ids, d2)

    def query_batch(self, protos: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        if self._exact is not None:
            return self._exact.query_batch(protos, k)
        return _query_batch_by_row(self, protos, k)


def _query_batch_by_row(index, protos: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-by-row batch fallback; pads with the last candidate when an
    approximate query returns fewer than k (only possible when |A| < k)."""
    protos = np.asarray(protos, dtype=np.float64)
    if protos.ndim != 2:
        raise ValueError("query batch must be 2-D")
    k = min(k, len(index.actions))
    out_ids = np.empty((protos.shape[0], k), dtype=np.int64)
    out_d2 = np.empty((protos.shape[0], k), dtype=np.float64)
    for b in range(protos.shape[0]):
        res = index.query(protos[b], k)
        m = len(res)
        out_ids[b, :m] = res.ids
        out_d2[b, :m] = res.distances
        if m < k:
            out_ids[b, m:] = res.ids[-1]
            out_d2[b, m:] = res.distances[-1]
    return out_ids, out_d2


def build(actions: ActionSet, config: IndexConfig, seed: int = 0):
    """Construct the index for a tier; deterministic for a fixed seed."""
    if len(actions) < 1:
        raise ValueError("cannot index an empty action set")
    if config.tier == IndexTier.EXACT:
        return ExactIndex(actions)
    if config.tier == IndexTier.SLOW:
        return KMeansTreeIndex(actions, config, seed)
    return KdForestIndex(actions, config, seed)


def measure_recall(index, actions: ActionSet, num_queries: int, k: int, seed: int = 0) -> float:
    """Fraction of true k-nearest neighbors (brute force) recovered by the
    index, over query points drawn uniformly from the embedding box."""
    if num_queries < 1:
        raise ValueError("num_queries must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    lo, hi = actions.bounding_box()
    truth = ExactIndex(actions)
    kk = min(k, len(actions))
    hits = 0
    for _ in range(num_queries):
        q = rng.uniform(lo, hi)
        want = truth.query(q, kk).ids
        got = index.query(q, kk).ids
        hits += np.intersect1d(want, got).size
    return hits / (num_queries * kk)
