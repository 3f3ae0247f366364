"""Minimum-cost rectangular assignment and the pixel-distance association cost.

The solver pads rectangular matrices to square with zero-cost entries and
runs a shortest-augmenting-path Hungarian method with dual potentials. Among
equally cheap assignments it returns the lexicographically smallest pair
set, so replays are bit-stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import ImagePoint


@dataclass(frozen=True)
class Assignment:
    """A set of (row, col) pairs, injective in both coordinates."""

    pairs: tuple[tuple[int, int], ...]
    total: float


def _jv_square(c: list[list[float]]) -> tuple[list[int], list[float], list[float]]:
    """Solve a square min-cost assignment by shortest augmenting paths.

    Returns (col_of_row, row_potentials, col_potentials). The potentials are
    dual feasible (u[i] + v[j] <= c[i][j]) with equality on matched edges,
    which certifies optimality and lets callers recover all optimal edges.
    """
    n = len(c)
    inf = math.inf
    u = [0.0] * n
    v = [0.0] * (n + 1)  # index n is the virtual start column
    match_row = [-1] * (n + 1)

    for i in range(n):
        match_row[n] = i
        j0 = n
        minv = [inf] * (n + 1)
        way = [n] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match_row[j0]
            row = c[i0]
            ui = u[i0]
            delta = inf
            j1 = -1
            for j in range(n):
                if not used[j]:
                    cur = row[j] - ui - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match_row[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_row[j0] == -1:
                break
        while j0 != n:
            j1 = way[j0]
            match_row[j0] = match_row[j1]
            j0 = j1

    col_of_row = [0] * n
    for j in range(n):
        col_of_row[match_row[j]] = j
    return col_of_row, u, v[:n]


def _can_match_all(adj: list[int], free_rows: list[int], free_cols_mask: int, size: int) -> bool:
    """True if every row in free_rows can be matched inside free_cols_mask."""
    owner = [-1] * size  # column -> row

    def try_assign(r: int, visited: int) -> tuple[bool, int]:
        cols = adj[r] & free_cols_mask & ~visited
        while cols:
            j = (cols & -cols).bit_length() - 1
            cols &= cols - 1
            visited |= 1 << j
            if owner[j] == -1:
                owner[j] = r
                return True, visited
            ok, visited = try_assign(owner[j], visited)
            if ok:
                owner[j] = r
                return True, visited
        return False, visited

    for r in free_rows:
        ok, _ = try_assign(r, 0)
        if not ok:
            return False
    return True


def _lex_min_pairs(
    padded: list[list[float]],
    n_rows: int,
    n_cols: int,
    u: list[float],
    v: list[float],
    atol: float,
) -> list[tuple[int, int]]:
    """Lexicographically smallest real pair set among all optimal matchings.

    By complementary slackness the optimal assignments are exactly the
    perfect matchings of the tight-edge graph (reduced cost zero), so each
    real row greedily takes the smallest real column that still leaves the
    rest perfectly matchable.
    """
    size = len(padded)
    adj = []
    for i in range(size):
        row = padded[i]
        ui = u[i]
        mask = 0
        for j in range(size):
            if row[j] - ui - v[j] <= atol:
                mask |= 1 << j
        adj.append(mask)

    committed: list[tuple[int, int]] = []
    free_rows = list(range(size))
    free_cols_mask = (1 << size) - 1
    for r in range(n_rows):
        free_rows.remove(r)
        chosen = -1
        cols = adj[r] & free_cols_mask
        while cols:
            j = (cols & -cols).bit_length() - 1
            cols &= cols - 1
            if j >= n_cols:
                break  # padding columns only from here on
            if _can_match_all(adj, free_rows, free_cols_mask & ~(1 << j), size):
                chosen = j
                break
        if chosen >= 0:
            committed.append((r, chosen))
            free_cols_mask &= ~(1 << chosen)
        else:
            free_rows.append(r)  # row r pairs with padding in every optimum
    return committed


def hungarian_solve(cost) -> Assignment:
    """Minimum-total-cost assignment of cardinality min(n, m).

    Rectangular inputs are padded to square with zeros; padding pairs are
    dropped from the result. Ties between optimal assignments resolve to
    the lexicographically smallest (row, col) pair set. Near-ties within a
    relative tolerance of ~1e-9 of the largest entry are treated as exact
    ties.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2:
        raise ValueError("cost matrix must be two-dimensional")
    n, m = c.shape
    if n == 0 or m == 0:
        return Assignment(pairs=(), total=0.0)
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix entries must be finite")

    size = max(n, m)
    padded = np.zeros((size, size))
    padded[:n, :m] = c
    rows = padded.tolist()

    col_of_row, u, v = _jv_square(rows)

    atol = 1e-9 * max(1.0, float(np.abs(c).max()))
    reduced = padded - np.asarray(u)[:, None] - np.asarray(v)[None, :]
    tight_counts = (reduced <= atol).sum(axis=1)
    if int(tight_counts.max(initial=0)) == 1:
        # unique optimum; the solver's own matching is already canonical
        pairs = sorted((i, col_of_row[i]) for i in range(n) if col_of_row[i] < m)
    else:
        pairs = sorted(_lex_min_pairs(rows, n, m, u, v, atol))

    total = math.fsum(c[i, j] for i, j in pairs)
    return Assignment(pairs=tuple(pairs), total=total)


def build_association_cost(
    predictions: Sequence[ImagePoint],
    detections: Sequence[ImagePoint],
    d_max: float,
    image_diag: float,
) -> np.ndarray:
    """Association cost between predicted tracklet positions and detections.

    Entries are Euclidean pixel distances below the gate ``d_max``; gated
    entries carry the image diagonal as a finite sentinel that
    :func:`gated_pairs` later dissolves.
    """
    if d_max >= image_diag:
        raise ValueError("d_max must be smaller than the image diagonal")
    n, m = len(predictions), len(detections)
    c = np.empty((n, m))
    for i, p in enumerate(predictions):
        for j, d in enumerate(detections):
            dist = math.hypot(p[0] - d[0], p[1] - d[1])
            c[i, j] = dist if dist < d_max else image_diag
    return c


def gated_pairs(
    assignment: Assignment,
    cost,
    sentinel: float,
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Split an assignment into real matches and gated-out rows/columns.

    Pairs whose cost reaches ``sentinel`` (the image diagonal for pixel
    association, the unassigned constant for identification) are dissolved
    into an unmatched row plus an unmatched column.
    """
    c = np.asarray(cost, dtype=float)
    n, m = c.shape
    matched = [(i, j) for i, j in assignment.pairs if c[i, j] < sentinel]
    matched_rows = {i for i, _ in matched}
    matched_cols = {j for _, j in matched}
    unmatched_rows = [i for i in range(n) if i not in matched_rows]
    unmatched_cols = [j for j in range(m) if j not in matched_cols]
    return matched, unmatched_rows, unmatched_cols
