"""Independent ground truth for small problems.

Nothing in here shares code with the CoLT solvers: the 1D distance comes
from cumulative sums, the general one from a transportation simplex on the
dense cost matrix.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .colt import check_dense_allowed

__all__ = [
    "LpSolution",
    "w1_1d_exact",
    "lp_transport_exact",
    "dense_cost_matrix",
    "grid_coordinates",
    "reduced_costs",
]

MAX_LP_SIDE = 64


def w1_1d_exact(u, v, h):
    """W1 between two histograms on the same uniform 1D grid.

    ``h * sum_k |U_k - V_k|`` with U, V the cumulative sums.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError("u and v must be 1D vectors of equal length")
    su, sv = u.sum(), v.sum()
    if abs(su - sv) > 1e-9 * max(abs(su), abs(sv), 1.0):
        raise ValueError(f"unequal mass: {su} vs {sv}")
    return float(h * np.abs(np.cumsum(u - v)[:-1]).sum())


def grid_coordinates(shape):
    """Row and column index of every node in column-major grid order."""
    if np.ndim(shape) == 0:
        return np.arange(int(shape)), np.zeros(int(shape), dtype=int)
    n, m = shape
    idx = np.arange(n * m)
    return idx % n, idx // n


def dense_cost_matrix(shape, spacing=1.0, max_nodes=4096):
    """l1 ground cost on a uniform grid.

    ``shape`` is N (1D) or (N, M); ``spacing`` is h or (h1, h2), with h1
    along the N direction.
    """
    rows, cols = grid_coordinates(shape)
    check_dense_allowed(rows.size, max_nodes)
    h1, h2 = (spacing, 0.0) if np.ndim(spacing) == 0 else spacing
    return (np.abs(rows[:, None] - rows[None, :]) * float(h1)
            + np.abs(cols[:, None] - cols[None, :]) * float(h2))


@dataclass
class LpSolution:
    objective: float
    plan: np.ndarray
    row_duals: np.ndarray
    col_duals: np.ndarray
    basis: list = field(repr=False)
    iterations: int = 0
    degenerate_pivots: int = 0


def reduced_costs(cost, row_duals, col_duals):
    return cost - row_duals[:, None] - col_duals[None, :]


def _northwest_corner(supply, demand):
    n, m = supply.size, demand.size
    s, d = supply.copy(), demand.copy()
    flow = {}
    i = j = 0
    while True:
        if s[i] <= d[j]:
            flow[(i, j)] = s[i]
            d[j] -= s[i]
            s[i] = 0.0
            down = i < n - 1
        else:
            flow[(i, j)] = d[j]
            s[i] -= d[j]
            d[j] = 0.0
            down = j == m - 1
        if i == n - 1 and j == m - 1:
            break
        if down:
            i += 1
        else:
            j += 1
    return flow


def _duals(basis, cost, n, m):
    rows = [[] for _ in range(n)]
    cols = [[] for _ in range(m)]
    for i, j in basis:
        rows[i].append(j)
        cols[j].append(i)
    a = np.full(n, np.nan)
    b = np.full(m, np.nan)
    a[0] = 0.0
    queue = deque([(0, True)])
    while queue:
        k, is_row = queue.popleft()
        if is_row:
            for j in rows[k]:
                if np.isnan(b[j]):
                    b[j] = cost[k, j] - a[k]
                    queue.append((j, False))
        else:
            for i in cols[k]:
                if np.isnan(a[i]):
                    a[i] = cost[i, k] - b[k]
                    queue.append((i, True))
    if np.isnan(a).any() or np.isnan(b).any():
        raise RuntimeError("basis is not a spanning tree")
    return a, b


def _cycle(basis, n, m, enter):
    """Basic cells on the tree path from column ``enter[1]`` to row ``enter[0]``."""
    ie, je = enter
    rows = [[] for _ in range(n)]
    cols = [[] for _ in range(m)]
    for i, j in basis:
        rows[i].append(j)
        cols[j].append(i)
    # nodes: rows are 0..n-1, columns are n..n+m-1
    start, goal = n + je, ie
    parent = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        nbrs = [n + j for j in rows[node]] if node < n else cols[node - n]
        for nb in nbrs:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    path = []
    node = goal
    while parent[node] is not None:
        prev = parent[node]
        cell = (node, prev - n) if node < n else (prev, node - n)
        path.append(cell)
        node = prev
    # path was collected goal -> start; the cycle runs from the entering column
    return path[::-1]


def lp_transport_exact(u, v, cost, max_side=MAX_LP_SIDE, tol=1e-12, max_iter=100_000,
                       bland_after=50):
    """Exact balanced transport by the transportation simplex.

    Northwest-corner start, dual (u-v) pricing with the most negative
    reduced cost entering, and pivoting around the unique tree cycle. After
    ``bland_after`` consecutive degenerate pivots the entering rule switches
    to the lowest-index negative cell. Ties for the leaving cell go to the
    lowest (row, column) index.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    n, m = u.size, v.size
    if max(n, m) > max_side:
        raise ValueError(f"LP oracle limited to {max_side} nodes per side, got {max(n, m)}")
    if cost.shape != (n, m):
        raise ValueError(f"cost shape {cost.shape} does not match ({n}, {m})")
    if np.any(u < 0) or np.any(v < 0):
        raise ValueError("marginals must be nonnegative")
    if abs(u.sum() - v.sum()) > 1e-9 * max(u.sum(), 1.0):
        raise ValueError("marginals must carry equal mass")

    flow = _northwest_corner(u, v)
    scale = max(np.abs(cost).max(), 1.0)
    degenerate_run = 0
    degenerate_total = 0
    for it in range(max_iter):
        basis = sorted(flow)
        a, b = _duals(basis, cost, n, m)
        red = reduced_costs(cost, a, b)
        for cell in basis:
            red[cell] = 0.0
        if degenerate_run >= bland_after:
            neg = np.flatnonzero(red < -tol * scale)
            if neg.size == 0:
                break
            enter = divmod(int(neg[0]), m)
        else:
            k = int(np.argmin(red))
            if red.flat[k] >= -tol * scale:
                break
            enter = divmod(k, m)
        path = _cycle(basis, n, m, enter)
        minus = path[0::2]
        theta = min(flow[c] for c in minus)
        leave = min(c for c in minus if flow[c] == theta)
        for k, c in enumerate(path):
            flow[c] += -theta if k % 2 == 0 else theta
        del flow[leave]
        flow[enter] = theta
        if theta == 0.0:
            degenerate_run += 1
            degenerate_total += 1
        else:
            degenerate_run = 0
    else:
        raise RuntimeError(f"transportation simplex did not finish in {max_iter} pivots")

    plan = np.zeros((n, m))
    for (i, j), x in flow.items():
        plan[i, j] = max(x, 0.0)
    return LpSolution(
        objective=float((cost * plan).sum()),
        plan=plan,
        row_duals=a,
        col_duals=b,
        basis=sorted(flow),
        iterations=it,
        degenerate_pivots=degenerate_total,
    )
