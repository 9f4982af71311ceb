"""Independent reference implementations and fixtures shared by the tests.

Everything here is written without reusing package internals beyond the
public data types, so it can serve as an oracle.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize, special

from mrtact import scenario as scen
from mrtact.sim import WorldState


def brute_force_matching(w, mask):
    """Exhaustive search over all partial one-to-one matchings.

    Rows are assigned in order, trying columns in ascending order and
    "unmatched" last, and only a strictly better total replaces the incumbent,
    so the result is the lexicographically smallest optimal assignment.
    """
    n, t = w.shape
    best = [-1.0, None]

    def rec(r, used, acc, pairs):
        if r == n:
            if acc > best[0]:
                best[0], best[1] = acc, list(pairs)
            return
        for c in range(t):
            if mask[r, c] and c not in used:
                used.add(c)
                pairs.append((r, c))
                rec(r + 1, used, acc + w[r, c], pairs)
                pairs.pop()
                used.discard(c)
        rec(r + 1, used, acc, pairs)

    rec(0, set(), 0.0, [])
    return best[0], best[1]


def random_masked_matrix(rng, max_n=7, integer=False):
    n, t = rng.integers(1, max_n + 1, size=2)
    if integer:
        w = rng.integers(0, 4, size=(n, t)).astype(float)
    else:
        w = rng.uniform(0, 1, size=(n, t))
    mask = rng.random((n, t)) < rng.uniform(0.2, 1.0)
    return w, mask


def expert_oracle(world: WorldState, robot: int, task_id: int, alpha: float = 550.0) -> float:
    """Range slack times exp(-arrival/alpha), recomputed from raw scenario records."""
    sc = world.scenario
    task = sc.tasks[task_id - 1]
    rs = world.robot(robot)
    d_ri = math.sqrt((rs.dest_x - task.x) ** 2 + (rs.dest_y - task.y) ** 2)
    d_i0 = math.sqrt((task.x - sc.depot[0]) ** 2 + (task.y - sc.depot[1]) ** 2)
    l_r = rs.range - (d_ri + d_i0)
    t_arrive = rs.t_next + d_ri / sc.fleet.speed
    if t_arrive > task.deadline:
        return 0.0
    return max(0.0, l_r) * math.exp(-t_arrive / alpha)


def welch_oracle(a, b):
    """Welch t, Satterthwaite df and two-sided p via the regularized incomplete beta."""
    n1, n2 = len(a), len(b)
    m1, m2 = sum(a) / n1, sum(b) / n2
    s1 = sum((x - m1) ** 2 for x in a) / (n1 - 1)
    s2 = sum((x - m2) ** 2 for x in b) / (n2 - 1)
    se2 = s1 / n1 + s2 / n2
    t = (m1 - m2) / math.sqrt(se2)
    df = se2 ** 2 / ((s1 / n1) ** 2 / (n1 - 1) + (s2 / n2) ** 2 / (n2 - 1))
    p = float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))
    return t, df, p


def exact_ot_01(a, b):
    """Exact optimal transport cost under the 0/1 ground cost, by linear programming."""
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).ravel()
    a, b = a / a.sum(), b / b.sum()
    n = a.size
    cost = 1.0 - np.eye(n)
    rows = np.kron(np.eye(n), np.ones(n))
    cols = np.kron(np.ones(n), np.eye(n))
    res = optimize.linprog(cost.ravel(), A_eq=np.vstack([rows, cols]), b_eq=np.concatenate([a, b]),
                           bounds=(0, None), method="highs")
    return float(res.fun)


def attention_oracle(task_emb, robot_emb, params, which):
    """Loop-based multi-head attention decoder, one head and one query at a time."""
    hp = params.hp
    dk = hp.h // hp.n_heads
    Wq, Wk, Wv = (params[f"{which}.{n}"] for n in ("Wq", "Wk", "Wv"))
    n_r, n_t = robot_emb.shape[0], task_emb.shape[0]
    concat = np.zeros((n_r, hp.h))
    for head in range(hp.n_heads):
        cols = slice(head * dk, (head + 1) * dk)
        for r in range(n_r):
            q = robot_emb[r] @ Wq[:, cols]
            scores = np.array([q @ (task_emb[i] @ Wk[:, cols]) for i in range(n_t)]) / math.sqrt(dk)
            weights = np.exp(scores - scores.max())
            weights /= weights.sum()
            concat[r, cols] = sum(weights[i] * (task_emb[i] @ Wv[:, cols]) for i in range(n_t))
    out = concat @ params[f"{which}.Wo"] + params[f"{which}.bo"]
    g = np.tanh(out @ params[f"{which}.Wff"] + params[f"{which}.bff"])
    keys = task_emb @ params[f"{which}.Wfin"]
    m = np.zeros((n_r, n_t))
    for r in range(n_r):
        for i in range(n_t):
            m[r, i] = g[r] @ keys[i] / math.sqrt(hp.h)
    return m


def gcaps_oracle(features, params, which):
    """Graph-capsule layer recomputed from raw features with explicit loops."""
    hp = params.hp
    x = np.array(features, dtype=float)
    n = x.shape[0]
    omega = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            omega[i, j] = 1.0 / (1.0 + math.sqrt(sum((x[i] - x[j]) ** 2)))
    a_hat = np.array([omega[i] / omega[i].sum() for i in range(n)])
    for layer in range(hp.L_e):
        mean = x.mean(axis=0)
        std = np.sqrt(((x - mean) ** 2).mean(axis=0))
        z = (x - mean) / (std + 1e-6)
        blocks = []
        for p in range(1, hp.P + 1):
            for k in range(1, hp.K + 1):
                prop = np.linalg.matrix_power(a_hat, k) @ (z ** p)
                blocks.append(prop @ params[f"{which}.{layer}.W_{k}_{p}"])
        x = np.tanh(np.hstack(blocks) + x @ params[f"{which}.{layer}.W_self"] + params[f"{which}.{layer}.b"])
    return x


def permute_tasks(world: WorldState, perm) -> WorldState:
    """Copy of ``world`` whose task k is the original task ``perm[k]`` (0-based)."""
    perm = np.asarray(perm)
    sc = world.scenario
    tasks = tuple(scen.TaskSpec(id=k + 1, x=sc.tasks[j].x, y=sc.tasks[j].y, deadline=sc.tasks[j].deadline,
                                demand=sc.tasks[j].demand) for k, j in enumerate(perm))
    new_sc = scen.Scenario(tasks=tasks, depot=sc.depot, fleet=sc.fleet, seed=sc.seed)
    out = world.copy()
    out.scenario = new_sc
    for name in ("task_residual", "task_status", "task_completion", "task_committed", "delivered", "task_rewarded"):
        setattr(out, name, getattr(world, name)[perm].copy())
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(perm.size)
    pend = world.robot_pending
    out.robot_pending = np.where(pend > 0, inverse[np.maximum(pend, 1) - 1] + 1, pend)
    return out
