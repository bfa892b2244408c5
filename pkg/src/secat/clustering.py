"""K-means clustering and the centroid-distance pools that grade episode
difficulty.

Lloyd iterations run a fixed number of times (default 10) from greedy
k-means++ seeding. Distances accumulate in float64 so pool boundaries are
stable; centroids are stored float32 like the embeddings they summarize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import ValidationError

DEFAULT_ITERS = 10
DEFAULT_POOL_FRACTION = 0.05


@dataclass
class ClusterModel:
    centroids: np.ndarray  # (k, dim) float32
    assignments: np.ndarray  # (n_rows,) int64 cluster index per row
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    row_ids: np.ndarray | None = None  # ids of the clustered rows, if known

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def members(self, cluster: int) -> np.ndarray:
        """Positions (not row ids) of the rows assigned to `cluster`."""
        return np.flatnonzero(self.assignments == cluster)


def _sq_dists(x64: np.ndarray, cents64: np.ndarray) -> np.ndarray:
    d = (
        (x64 * x64).sum(axis=1)[:, None]
        - 2.0 * (x64 @ cents64.T)
        + (cents64 * cents64).sum(axis=1)[None, :]
    )
    return np.maximum(d, 0.0)


def _kmeanspp_init(x64: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++: each new seed is the candidate that lowers the total
    potential the most. Small inputs consider every point; large ones a
    D^2-weighted sample of 256 candidates."""
    n = x64.shape[0]
    cents = np.empty((k, x64.shape[1]), dtype=np.float64)
    cents[0] = x64[rng.integers(n)]
    closest = _sq_dists(x64, cents[:1])[:, 0]
    for i in range(1, k):
        if n <= 4000:
            cand = np.arange(n)
        else:
            tot = closest.sum()
            probs = closest / tot if tot > 0 else np.full(n, 1.0 / n)
            cand = rng.choice(n, size=256, p=probs)
        best_pot, best_c = np.inf, int(cand[0])
        for lo in range(0, len(cand), 512):
            chunk = cand[lo : lo + 512]
            cand_d = _sq_dists(x64, x64[chunk])
            pots = np.minimum(closest[:, None], cand_d).sum(axis=0)
            j = int(np.argmin(pots))
            if pots[j] < best_pot:
                best_pot, best_c = float(pots[j]), int(chunk[j])
        cents[i] = x64[best_c]
        closest = np.minimum(closest, _sq_dists(x64, cents[i : i + 1])[:, 0])
    return cents


def _repair_empty(
    x64: np.ndarray, cents: np.ndarray, assign: np.ndarray, sq: np.ndarray
) -> None:
    """Seed each empty cluster with the point currently farthest from its own
    centroid (taken from a cluster that keeps >= 2 members)."""
    counts = np.bincount(assign, minlength=cents.shape[0])
    for empty in np.flatnonzero(counts == 0):
        own = sq[np.arange(len(assign)), assign]
        movable = counts[assign] >= 2
        if not movable.any():
            raise ValidationError("cannot repair empty cluster: all clusters singleton")
        cand = np.where(movable, own, -np.inf)
        far = int(np.argmax(cand))
        counts[assign[far]] -= 1
        assign[far] = empty
        counts[empty] = 1
        cents[empty] = x64[far]
        sq[:, empty] = _sq_dists(x64, cents[empty : empty + 1])[:, 0]


def kmeans(
    matrix: EmbeddingMatrix,
    k: int,
    iters: int = DEFAULT_ITERS,
    seed: int = 0,
) -> ClusterModel:
    """Fixed-iteration Lloyd k-means. The recorded inertia sequence is
    non-increasing; a final assignment pass leaves every row on its nearest
    centroid."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    if k > matrix.n_rows:
        raise ValidationError(f"k={k} exceeds n_rows={matrix.n_rows}")
    if iters < 1:
        raise ValidationError("iters must be >= 1")
    x64 = matrix.data.astype(np.float64)
    rng = np.random.default_rng(seed)
    cents = _kmeanspp_init(x64, k, rng)
    history: list[float] = []
    assign = np.zeros(matrix.n_rows, dtype=np.int64)
    for _ in range(iters):
        sq = _sq_dists(x64, cents)
        assign = sq.argmin(axis=1)
        _repair_empty(x64, cents, assign, sq)
        for c in range(k):
            mask = assign == c
            cents[c] = x64[mask].mean(axis=0)
        sq = _sq_dists(x64, cents)
        history.append(float(sq[np.arange(matrix.n_rows), assign].sum()))
    # final refresh so assignments are optimal against the last centroids
    sq = _sq_dists(x64, cents)
    assign = sq.argmin(axis=1)
    _repair_empty(x64, cents, assign, sq)
    inertia = float(sq[np.arange(matrix.n_rows), assign].sum())
    history.append(inertia)
    return ClusterModel(
        centroids=cents.astype(np.float32),
        assignments=assign,
        inertia=inertia,
        inertia_history=history,
        row_ids=matrix.row_ids,
    )


def centroid_distance_matrix(model: ClusterModel) -> np.ndarray:
    """Symmetric K x K Euclidean distances between centroids, zero diagonal."""
    c = model.centroids.astype(np.float64)
    d2 = _sq_dists(c, c)
    d = np.sqrt(d2)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


@dataclass(frozen=True)
class DifficultyPools:
    """Closest (hard) and farthest (easy) cluster pairs by centroid distance."""

    hard_pairs: tuple[tuple[int, int], ...]
    easy_pairs: tuple[tuple[int, int], ...]
    fraction: float


def _pair_band(dist: np.ndarray, pairs) -> tuple[float, float]:
    vals = [dist[i, j] for i, j in pairs]
    return (min(vals), max(vals))


def difficulty_pools(dist: np.ndarray, fraction: float = DEFAULT_POOL_FRACTION) -> DifficultyPools:
    """Split unordered centroid pairs into the most-similar and least-similar
    `fraction`; ties break toward lexicographically smaller (i, j)."""
    k = dist.shape[0]
    if k < 2:
        raise ValidationError("need at least 2 clusters for difficulty pools")
    if not (0.0 < fraction <= 0.5):
        raise ValidationError(f"fraction must be in (0, 0.5], got {fraction}")
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    m = math.ceil(fraction * len(pairs))
    by_close = sorted(pairs, key=lambda p: (dist[p[0], p[1]], p[0], p[1]))
    by_far = sorted(pairs, key=lambda p: (-dist[p[0], p[1]], p[0], p[1]))
    hard = tuple(by_close[:m])
    easy = tuple(by_far[:m])
    if set(hard) & set(easy):
        raise ValidationError("pools overlap: fraction too large for this K")
    return DifficultyPools(hard_pairs=hard, easy_pairs=easy, fraction=fraction)


def pool_band(dist: np.ndarray, pools: DifficultyPools, which: str) -> tuple[float, float]:
    """Distance band [min, max] covered by one pool (or their union)."""
    if which == "hard":
        return _pair_band(dist, pools.hard_pairs)
    if which == "easy":
        return _pair_band(dist, pools.easy_pairs)
    if which in ("varying", "union"):
        lo1, hi1 = _pair_band(dist, pools.hard_pairs)
        lo2, hi2 = _pair_band(dist, pools.easy_pairs)
        return (min(lo1, lo2), max(hi1, hi2))
    raise ValidationError(f"unknown pool {which!r}")
