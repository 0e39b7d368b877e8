"""Rectangular min-cost assignment with forbidden pairs.

``np.inf`` entries are forbidden. Among assignments of maximal cardinality
over allowed pairs, the total cost is minimal, and among those optima the
lexicographically smallest (row, col) sequence is returned.
"""
from __future__ import annotations

import numpy as np

from . import kernels


def _tight_tolerance(cost: np.ndarray) -> float:
    scale = float(np.max(np.abs(cost))) if cost.size else 0.0
    return 8.0 * np.finfo(float).eps * max(scale, 1.0) * max(cost.shape[0], 1)


def _lexicographic_refine(cost, row_to_col, u, v):
    """Move to the lexicographically smallest perfect matching of the tight graph.

    Every optimal assignment is a perfect matching on the edges with zero
    reduced cost under any optimal dual, so the search never leaves the
    optimal set.
    """
    n = cost.shape[0]
    tight = (cost - u[:, None] - v[None, :]) <= _tight_tolerance(cost)
    match = row_to_col.copy()
    col_owner = np.empty(n, dtype=np.int64)
    col_owner[match] = np.arange(n)

    for i in range(n):
        for j in range(match[i]):
            if not tight[i, j]:
                continue
            owner = col_owner[j]
            if owner < i:
                continue
            # row `owner` must reach the column freed by row i through an
            # alternating path over rows > i
            target = match[i]
            parent = {owner: -1}
            via = {}
            queue = [owner]
            found = -1
            while queue and found < 0:
                r = queue.pop(0)
                for c in np.flatnonzero(tight[r]):
                    c = int(c)
                    if c == j:
                        continue
                    if c == target:
                        via[r] = c
                        found = r
                        break
                    nr = int(col_owner[c])
                    if nr <= i or nr in parent:
                        continue
                    parent[nr] = r
                    via[nr] = c
                    queue.append(nr)
            if found < 0:
                continue
            # unwind: each row on the path takes the column recorded in `via`
            r = found
            c = via[r]
            while r != -1:
                prev_c = match[r]
                match[r] = c
                col_owner[c] = r
                c = prev_c
                r = parent[r]
            match[i] = j
            col_owner[j] = i
            break
    return match


def solve_assignment(cost) -> list[tuple[int, int]]:
    """Return matched ``(row, col)`` pairs, sorted by row."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    n, m = cost.shape
    if n == 0 or m == 0:
        return []
    allowed = np.isfinite(cost)
    if not allowed.any():
        return []
    finite = cost[allowed]
    lo = float(finite.min())
    hi = float(finite.max())
    big = hi + (hi - lo + 1.0) * (min(n, m) + 1)
    size = max(n, m)
    square = np.full((size, size), big)
    square[:n, :m] = np.where(allowed, cost, big)

    row_to_col, u, v = kernels.hungarian(square)
    row_to_col = _lexicographic_refine(square, np.asarray(row_to_col), u, v)
    return [(i, int(row_to_col[i])) for i in range(n) if row_to_col[i] < m and allowed[i, row_to_col[i]]]


def assignment_cost(cost, pairs) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    total = 0.0
    for i, j in pairs:
        total += cost[i, j]
    return total
