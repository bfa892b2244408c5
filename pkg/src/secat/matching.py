"""Minimum-cost assignment (Kuhn-Munkres) with deterministic tie-breaking.

The solver is the O(n^3) shortest-augmenting-path formulation with dual
potentials. When several assignments share the optimal total, the result is
refined to the lexicographically smallest assignment vector: by complementary
slackness every optimal assignment uses only edges whose reduced cost is zero,
so we fix rows in order to the smallest tight column that still leaves a
perfect matching on the remaining tight graph.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def _solve_square(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest-augmenting-path assignment on a square float64 matrix.

    Returns (col_of_row, u, v) where u, v are the dual potentials."""
    n = cost.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    # p[j] = row matched to column j (0 = free); column 0 is a sentinel
    p = np.zeros(n + 1, dtype=np.int64)
    a = np.empty((n + 1, n + 1))
    a[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        way = np.zeros(n + 1, dtype=np.int64)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = a[i0, 1:] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        if p[j] > 0:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _has_perfect_matching(adj: list[np.ndarray], rows: list[int], col_used: np.ndarray) -> bool:
    """Can every row in `rows` be matched into distinct unused columns of the
    tight graph? Simple augmenting-path matching."""
    match_col = {}  # col -> row

    def try_augment(r: int, visited: set[int]) -> bool:
        for c in adj[r]:
            c = int(c)
            if col_used[c] or c in visited:
                continue
            visited.add(c)
            if c not in match_col or try_augment(match_col[c], visited):
                match_col[c] = r
                return True
        return False

    for r in rows:
        if not try_augment(r, set()):
            return False
    return True


def hungarian_match(cost: np.ndarray) -> np.ndarray:
    """Injective column assignment of K rows into M >= K columns minimizing the
    total cost; among optima, the lexicographically smallest assignment vector.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValidationError("cost matrix must be 2-D")
    k, m = cost.shape
    if m < k:
        raise ValidationError(f"infeasible: {k} rows but only {m} columns")
    if not np.isfinite(cost).all():
        raise ValidationError("cost matrix must be finite")
    # pad with zero-cost dummy rows so every column is matched
    sq = np.zeros((m, m))
    sq[:k] = cost
    col_of_row, u, v = _solve_square(sq)
    tol = 1e-9 * (1.0 + np.abs(sq).max())
    reduced = sq - u[:, None] - v[None, :]
    tight = reduced <= tol
    adj = [np.flatnonzero(tight[r]) for r in range(m)]
    col_used = np.zeros(m, dtype=bool)
    result = np.empty(k, dtype=np.int64)
    for r in range(k):
        rest = list(range(r + 1, m))
        chosen = -1
        for c in adj[r]:
            c = int(c)
            if col_used[c]:
                continue
            col_used[c] = True
            if _has_perfect_matching(adj, rest, col_used):
                chosen = c
                break
            col_used[c] = False
        if chosen < 0:  # numerically degenerate tight graph; keep solver answer
            return col_of_row[:k].copy()
        result[r] = chosen
    # tolerance slack must never buy lexicographic order at the price of cost
    if assignment_cost(cost, result) > assignment_cost(cost, col_of_row[:k]):
        return col_of_row[:k].copy()
    return result


def assignment_cost(cost: np.ndarray, cols: np.ndarray) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    return float(cost[np.arange(len(cols)), cols].sum())
