"""Row shuffling: defect cost matrix and minimum-cost row assignment.

``C[i, j]`` is the L1 conductance error of placing row ``j`` of the target
matrix on crossbar row ``i``. The assignment is solved with a shortest
augmenting path Hungarian method (O(n^3)); among optimal assignments the
lexicographically smallest permutation is returned.
"""

from __future__ import annotations

import numpy as np

from .core import DefectMap, Permutation


def build_cost_matrix(G, defects: DefectMap) -> np.ndarray:
    """``C[i, j] = sum over defects (i, c) of |G[j, c] - stuck(i, c)|``."""
    G = np.asarray(G, dtype=float)
    n = G.shape[0]
    if G.shape != defects.shape:
        raise ValueError(f"matrix shape {G.shape} != defect map shape {defects.shape}")
    C = np.zeros((n, n))
    if not len(defects):
        return C
    rows, cols, vals = defects.rows, defects.cols, defects.values
    # (n_defects, n): error of every source row at each defect position
    err = np.abs(G[:, cols].T - vals[:, None])
    np.add.at(C, rows, err)
    return C


def conductance_error(G, defects: DefectMap) -> float:
    """Total ``|G - stuck|`` over the defect cells with ``G`` mapped as is."""
    G = np.asarray(G, dtype=float)
    if not len(defects):
        return 0.0
    return float(np.abs(G[defects.rows, defects.cols] - defects.values).sum())


def _hungarian(C: np.ndarray):
    """Minimum-cost perfect matching; returns ``(col_of_row, u, v)`` duals included."""
    n = C.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)  # match[j] = row (1-based) on column j, 0 = free
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = C[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], INF)
            delta = masked.min()
            # among equal minima prefer an unmatched column (ends the search)
            cand = masked == delta
            ends = cand & (match[1:] == 0)
            j1 = int(np.argmax(ends if ends.any() else cand)) + 1
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=int)
    col_of_row[match[1:] - 1] = np.arange(n)
    return col_of_row, u[1:], v[1:]


def _lexicographic_min(tight: np.ndarray, col_of_row: np.ndarray) -> np.ndarray:
    """Smallest perfect matching (row by row) inside the tight-edge graph."""
    n = tight.shape[0]
    M = col_of_row.copy()
    Minv = np.empty(n, dtype=int)
    Minv[M] = np.arange(n)
    row_free = np.ones(n, dtype=bool)
    col_free = np.ones(n, dtype=bool)
    for i in range(n):
        t = M[i]
        row_free[i] = False
        # rows able to hand column t along an alternating path
        parent = np.full(n, -1)
        reach = np.zeros(n, dtype=bool)
        frontier = np.array([t])
        while frontier.size:
            sub = tight[:, frontier] & (row_free & ~reach)[:, None]
            new = np.nonzero(sub.any(axis=1))[0]
            if not new.size:
                break
            parent[new] = frontier[np.argmax(sub[new], axis=1)]
            reach[new] = True
            frontier = M[new]
        via = reach[Minv]
        via[t] = True
        j = int(np.argmax(tight[i] & col_free & via))
        if j != t:
            # rotate along j <- r0 <- ... <- t
            chain = []
            r = Minv[j]
            while True:
                c = parent[r]
                chain.append((r, c))
                if c == t:
                    break
                r = Minv[c]
            M[i] = j
            for r, c in chain:
                M[r] = c
            Minv[M] = np.arange(n)
        col_free[j] = False
    return M


def solve_assignment(C, tie_rtol: float = 1e-10) -> tuple[Permutation, float]:
    """Minimize ``sum_i C[i, perm[i]]``; ties go to the lexicographically smallest perm.

    Reduced costs within ``tie_rtol * max|C|`` of zero count as ties.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix must be finite")
    n = C.shape[0]
    if n == 0:
        return Permutation(np.arange(0)), 0.0
    # defect-free (all-zero) rows first: each then augments in one step
    row_order = np.argsort(np.any(C != 0, axis=1), kind="stable")
    col_p, u_p, v = _hungarian(C[row_order])
    col_of_row = np.empty(n, dtype=int)
    u = np.empty(n)
    col_of_row[row_order] = col_p
    u[row_order] = u_p
    scale = max(float(np.max(np.abs(C))), np.finfo(float).tiny)
    tight = np.abs(C - u[:, None] - v[None, :]) <= tie_rtol * scale
    tight[np.arange(n), col_of_row] = True
    order = _lexicographic_min(tight, col_of_row)
    return Permutation(order), float(C[np.arange(n), order].sum())


def apply_shuffle(G, perm: Permutation) -> np.ndarray:
    """Row ``i`` of the result is row ``perm.order[i]`` of ``G``."""
    G = np.asarray(G)
    if len(perm) != G.shape[0]:
        raise ValueError(f"permutation of {len(perm)} rows for a {G.shape[0]}-row matrix")
    return G[perm.order]


def shuffle_input(x, perm: Permutation) -> np.ndarray:
    """Reorder input channels to follow the shuffled rows (works on batches)."""
    x = np.asarray(x)
    if len(perm) != x.shape[-1]:
        raise ValueError(f"permutation of {len(perm)} rows for input of length {x.shape[-1]}")
    return x[..., perm.order]
