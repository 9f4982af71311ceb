"""Weighted robot-task bigraphs and exact maximum-weight matching.

The matcher pads the (robots x tasks) profit matrix with one zero-profit dummy
column per robot, so leaving a robot unmatched costs nothing, and replaces
infeasible edges with a finite sentinel that no optimal assignment uses.  The
padded problem is solved by the shortest-augmenting-path Kuhn-Munkres method.

Ties are broken deterministically: among all maximum-weight matchings the
result is the one whose per-robot assignment vector (robot 0 first, each entry
a task index, with "unmatched" ordered after every task) is lexicographically
smallest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .sim import DEPOT, WorldState, feasibility, feasibility_matrix

# weight_fn(world, robots, tasks, mask) -> (len(robots), len(tasks)) array.
# ``robots``/``tasks`` are 0-based index arrays; entries where ``mask`` is False are ignored.
WeightFn = Callable[..., np.ndarray]


@dataclass
class WeightedBigraph:
    weights: np.ndarray
    mask: np.ndarray
    robot_ids: np.ndarray  # robot index for each row
    task_ids: np.ndarray  # task id (1-based) for each column

    @property
    def shape(self):
        return self.weights.shape


@dataclass
class Matching:
    pairs: list  # (row, column) in bigraph coordinates, sorted by row
    objective: float

    def column_of(self, row: int) -> int | None:
        for r, c in self.pairs:
            if r == row:
                return c
        return None


def pairwise(fn: Callable[[WorldState, int, int], float]) -> WeightFn:
    """Lift a scalar ``fn(world, robot, task_id)`` into a matrix weight function."""

    def matrix(world, robots, tasks, mask=None):
        out = np.zeros((len(robots), len(tasks)))
        for a, r in enumerate(robots):
            for b, i in enumerate(tasks):
                if mask is None or mask[a, b]:
                    out[a, b] = fn(world, int(r), int(i) + 1)
        return out

    return matrix


def build_bigraph(world: WorldState, weight_fn: WeightFn, robots=None, tasks=None) -> WeightedBigraph:
    """Feasibility-masked weight matrix over ``robots`` x ``tasks`` (0-based tasks)."""
    robots = np.arange(world.n_robots) if robots is None else np.asarray(robots, dtype=int)
    tasks = np.arange(world.n_tasks) if tasks is None else np.asarray(tasks, dtype=int)
    mask = feasibility_matrix(world, robots, tasks)
    weights = np.zeros(mask.shape)
    if mask.any():
        full = np.asarray(weight_fn(world, robots, tasks, mask=mask), dtype=float)
        vals = full[mask]
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("weight function returned a negative or non-finite weight")
        weights[mask] = vals
    return WeightedBigraph(weights=weights, mask=mask, robot_ids=robots, task_ids=tasks + 1)


def _assign_min(cost: np.ndarray):
    """Min-cost assignment of every row of an n x m matrix (n <= m) to a distinct column.

    Returns (column per row, row potentials u, column potentials v) with
    u_i + v_j <= cost_ij everywhere, equality on assigned pairs, and v <= 0.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # row (1-based) holding column j; 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        cur = np.empty(m + 1)
        cur[0] = np.inf
        while True:
            used[j0] = True
            i0 = p[j0]
            cur[1:] = cost[i0 - 1] - u[i0] - v[1:]
            free = ~used
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assign = np.empty(n, dtype=np.int64)
    cols = np.flatnonzero(p[1:])
    assign[p[1:][cols] - 1] = cols
    return assign, u[1:], v[1:]


def _lexicographic_optimum(cost, assign, u, v, n_real: int, tol: float) -> np.ndarray:
    """Lexicographically smallest optimal assignment, rows in order.

    An assignment is optimal iff it uses only tight edges (zero reduced cost
    under the optimal duals) and covers every column with a negative dual.
    Starting from the solver's assignment, each row in turn tries its smaller
    tight columns; a candidate is accepted when the later rows can be repaired
    by alternating paths: one to re-seat the displaced row, one to re-cover the
    row's old column if that column must stay covered.
    """
    n, m = cost.shape
    tight = (cost - u[:, None] - v[None, :]) <= tol
    real_tight = tight[:, :n_real]
    own = np.zeros_like(real_tight)
    rows_real = np.flatnonzero(assign < n_real)
    own[rows_real, assign[rows_real]] = True
    if np.array_equal(real_tight, own):
        return assign
    must = v < -tol
    row_cols = [np.flatnonzero(tight[i]).tolist() for i in range(n)]
    col_rows = [np.flatnonzero(tight[:, j]).tolist() for j in range(m)]
    col_of = assign.tolist()
    row_of = {c: i for i, c in enumerate(col_of)}

    def reseat(start, r, banned, col_of, row_of):
        # augmenting path for row ``start`` among rows > r
        parent = {}
        stack = [start]
        seen = set(banned)
        while stack:
            i = stack.pop()
            for c in row_cols[i]:
                if c in seen:
                    continue
                seen.add(c)
                parent[c] = i
                holder = row_of.get(c)
                if holder is None:
                    while True:
                        i = parent[c]
                        prev = col_of[i] if i != start else None
                        col_of[i] = c
                        row_of[c] = i
                        if prev is None:
                            return True
                        c = prev
                if holder > r:
                    stack.append(holder)
        return False

    def recover(col, r, banned, col_of, row_of):
        # shift rows > r so ``col`` is covered, releasing a column that may go free
        parent = {}
        queue = [col]
        seen = {col} | set(banned)
        while queue:
            c = queue.pop()
            for i in col_rows[c]:
                if i <= r or col_of[i] in seen:
                    continue
                x = col_of[i]
                seen.add(x)
                parent[x] = (i, c)
                if not must[x]:
                    while x != col:
                        i, c = parent[x]
                        col_of[i] = c
                        row_of[c] = i
                        x_prev = x
                        x = c
                        if row_of.get(x_prev) == i:
                            del row_of[x_prev]
                    return True
                queue.append(x)
        return False

    fixed: set = set()
    for r in range(n):
        cur = col_of[r]
        for c in row_cols[r]:
            if c >= cur or (c >= n_real and cur >= n_real):
                break
            if c in fixed:
                continue
            trial_col, trial_row = list(col_of), dict(row_of)
            holder = trial_row.get(c)
            del trial_row[cur]
            trial_col[r] = c
            trial_row[c] = r
            banned = fixed | {c}
            ok = True
            if holder is not None:
                trial_col[holder] = -1
                ok = reseat(holder, r, banned, trial_col, trial_row)
            if ok and must[cur] and cur not in trial_row:
                ok = recover(cur, r, banned, trial_col, trial_row)
            if ok:
                col_of, row_of = trial_col, trial_row
                break
        fixed.add(col_of[r])
    return np.array(col_of, dtype=np.int64)


def max_weight_matching(weights, mask=None) -> Matching:
    """Maximum-weight matching; unmatched vertices allowed, masked edges forbidden."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2:
        raise ValueError("weights must be a matrix")
    n, t = w.shape
    mask = np.ones(w.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if n == 0 or t == 0 or not mask.any():
        return Matching(pairs=[], objective=0.0)
    vals = w[mask]
    if not np.all(np.isfinite(vals)) or np.any(vals < 0):
        raise ValueError("unmasked weights must be finite and nonnegative")
    # vertices without any edge can never be matched; solve on the rest
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    sub_w, sub_mask = w[np.ix_(rows, cols)], mask[np.ix_(rows, cols)]
    n_s, t_s = sub_w.shape
    scale = max(1.0, float(vals.max()))
    sentinel = -((n_s + 1) * scale + 1.0)
    profit = np.zeros((n_s, t_s + n_s))
    profit[:, :t_s] = np.where(sub_mask, sub_w, sentinel)
    cost = -profit
    assign, u, v = _assign_min(cost)
    assign = _lexicographic_optimum(cost, assign, u, v, t_s, tol=1e-9 * scale)
    pairs = [(int(rows[r]), int(cols[c])) for r, c in enumerate(assign) if c < t_s]
    objective = 0.0
    for r, c in pairs:
        objective += float(w[r, c])
    return Matching(pairs=pairs, objective=objective)


def hungarian_max(bigraph: WeightedBigraph) -> Matching:
    return max_weight_matching(bigraph.weights, bigraph.mask)


ShrinkFn = Callable[[WorldState, int], tuple]


def decide(world: WorldState, weight_fn: WeightFn, robot: int, shrink: ShrinkFn | None = None) -> int:
    """Action for the deciding robot: the task it is matched to, else the depot."""
    if shrink is None:
        robots, tasks = np.arange(world.n_robots), np.arange(world.n_tasks)
    else:
        robots, tasks = shrink(world, robot)
    robots = np.asarray(robots, dtype=int)
    row = int(np.flatnonzero(robots == robot)[0])
    graph = build_bigraph(world, weight_fn, robots, tasks)
    if not graph.mask[row].any():
        return DEPOT
    col = hungarian_max(graph).column_of(row)
    return DEPOT if col is None else int(graph.task_ids[col])


def feas_rnd(world: WorldState, robot: int, rng: np.random.Generator) -> int:
    """Uniformly random feasible task, or the depot when none is feasible."""
    options = feasibility(world, robot)
    if len(options) == 0:
        return DEPOT
    return int(options[rng.integers(len(options))])


class FeasRnd:
    """Random feasible allocator. Holds its own generator, so use one per episode."""

    name = "feas-rnd"

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def __call__(self, world: WorldState, robot: int) -> int:
        return feas_rnd(world, robot, self.rng)


class BigraphAllocator:
    """Matching-based allocator around any weight function. Stateless per call."""

    def __init__(self, weight_fn: WeightFn, shrink: ShrinkFn | None = None, name: str = "bigraph"):
        self.weight_fn = weight_fn
        self.shrink = shrink
        self.name = name

    def __call__(self, world: WorldState, robot: int) -> int:
        return decide(world, self.weight_fn, robot, self.shrink)
