"""Benchmark runs and the statistics used to compare methods.

* ``bench`` runs several allocators on one shared scenario set and records
  completion rates and decision times.
* ``welch_t`` is the unequal-variance two-sample t-test.
* ``sinkhorn_distance`` compares two bigraph weight matrices as distributions
  over their common edges, with a 0/1 ground cost.
* ``checkpoint_divergence`` averages that distance between a policy's greedy
  weights and the expert incentive over a set of sampled states.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .expert import ExpertConfig, ExpertIncentive
from .matching import BigraphAllocator, FeasRnd
from .policy import IncentivePolicy, PolicyParams, make_shrinker
from .scenario import Scenario, generate, scaled_batch
from .sim import WorldState, feasibility_matrix, run_episode

METHODS = ("big-cam", "big-mrta", "feas-rnd")

RESULT_FIELDS = ("method", "s_t", "s_r", "scenario_seed", "completion_rate",
                 "episode_decision_time_s", "mean_decision_time_s")
COMPARISON_FIELDS = ("checkpoint", "mean_sinkhorn", "n_states", "elapsed_s")


class MissingParamsError(ValueError):
    pass


@dataclass
class BenchResult:
    method: str
    s_t: int
    s_r: int
    scenario_seeds: list
    scenario_digests: list
    rates: list
    episode_decision_times: list = field(default_factory=list)
    mean_decision_times: list = field(default_factory=list)
    decision_counts: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.rates))

    @property
    def median(self) -> float:
        return float(np.median(self.rates))

    @property
    def std(self) -> float:
        return float(np.std(self.rates, ddof=1)) if len(self.rates) > 1 else 0.0

    @property
    def mean_decision_time(self) -> float:
        """Per-decision time averaged over all decisions of all episodes."""
        n = sum(self.decision_counts)
        return sum(self.episode_decision_times) / n if n else 0.0

    def rows(self):
        for seed, rate, tot, mean in zip(self.scenario_seeds, self.rates,
                                         self.episode_decision_times, self.mean_decision_times):
            yield [self.method, self.s_t, self.s_r, seed, repr(rate), repr(tot), repr(mean)]


def make_allocator(method: str, scenario: Scenario, params: PolicyParams | None = None, *,
                   alpha: float = 550.0, shrink_robots: int = 6, shrink_tasks: int = 50):
    if method == "feas-rnd":
        return FeasRnd(scenario.seed)
    if method == "big-mrta":
        return BigraphAllocator(ExpertIncentive(ExpertConfig(alpha)), name="big-mrta")
    if method == "big-cam":
        if params is None:
            raise MissingParamsError("big-cam needs trained policy parameters")
        return BigraphAllocator(IncentivePolicy(params), make_shrinker(shrink_robots, shrink_tasks), name="big-cam")
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def _episode(job):
    method, scenario, params, opts = job
    res = run_episode(scenario, make_allocator(method, scenario, params, **opts))
    times = res.per_decision_times
    return res.completion_rate, float(np.sum(times)), float(np.mean(times)) if times else 0.0, len(times)


def bench(methods: Sequence[str], s_t: int, s_r: int, n_scenarios: int, base_seed: int, *,
          params: PolicyParams | None = None, jobs: int = 1, fleet: dict | None = None,
          **opts) -> list[BenchResult]:
    """Run every method on the same ``n_scenarios`` scenarios of size (50 s_t, 6 s_t s_r)."""
    if not methods:
        raise ValueError("no methods given")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    if "big-cam" in methods and params is None:
        raise MissingParamsError("big-cam needs trained policy parameters")
    scenarios = scaled_batch(s_t, s_r, n_scenarios, base_seed, **(fleet or {}))
    digests = [s.digest() for s in scenarios]
    out = []
    for m in methods:
        work = [(m, s, params, opts) for s in scenarios]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                res = list(ex.map(_episode, work))
        else:
            res = [_episode(w) for w in work]
        out.append(BenchResult(
            method=m, s_t=s_t, s_r=s_r,
            scenario_seeds=[s.seed for s in scenarios], scenario_digests=digests,
            rates=[r[0] for r in res],
            episode_decision_times=[r[1] for r in res],
            mean_decision_times=[r[2] for r in res],
            decision_counts=[r[3] for r in res],
        ))
    return out


@dataclass
class WelchResult:
    t: float
    p: float
    df: float
    degenerate: bool = False


def welch_t(a, b) -> WelchResult:
    """Two-sided Welch t-test for equal means.

    When both samples have zero variance the statistic is undefined; the
    result is then flagged and p is 1 for equal means, 0 otherwise.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two values")
    n1, n2 = a.size, b.size
    m1, m2 = a.mean(), b.mean()
    q1, q2 = a.var(ddof=1) / n1, b.var(ddof=1) / n2
    se2 = q1 + q2
    if se2 == 0:
        if m1 == m2:
            return WelchResult(t=0.0, p=1.0, df=float("nan"), degenerate=True)
        return WelchResult(t=math.copysign(math.inf, m1 - m2), p=0.0, df=float("nan"), degenerate=True)
    t = (m1 - m2) / math.sqrt(se2)
    df = se2 ** 2 / (q1 ** 2 / (n1 - 1) + q2 ** 2 / (n2 - 1))
    p = float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))
    return WelchResult(t=float(t), p=p, df=float(df))


def pairwise_tests(results: Sequence[BenchResult], alpha: float = 0.05) -> list[dict]:
    rows = []
    for i in range(len(results)):
        for j in range(i + 1, len(results)):
            a, b = results[i], results[j]
            w = welch_t(a.rates, b.rates)
            rows.append({"method_a": a.method, "method_b": b.method, "s_t": a.s_t, "s_r": a.s_r,
                         "mean_a": a.mean, "mean_b": b.mean, "t": w.t, "df": w.df, "p": w.p,
                         "significant": w.p < alpha, "degenerate": w.degenerate})
    return rows


def _entropic_transport_cost(a: np.ndarray, b: np.ndarray, reg: float, iters: int, tol: float) -> float:
    """Transport cost of the entropic plan between ``a`` and ``b`` under the 0/1 cost.

    The Gibbs kernel is 1 on the diagonal and q = exp(-1/reg) elsewhere, so a
    kernel product costs O(n).  Iterations run in the log domain.
    """
    log_q = -1.0 / reg
    log_1mq = math.log1p(-math.exp(log_q))
    with np.errstate(divide="ignore"):
        la, lb = np.log(a), np.log(b)

    def log_kernel_apply(lx):
        total = np.logaddexp.reduce(lx)
        return np.logaddexp(log_1mq + lx, log_q + total)

    lu = np.zeros_like(a)
    lv = np.zeros_like(b)
    for _ in range(iters):
        lu = la - log_kernel_apply(lv)
        lv = lb - log_kernel_apply(lu)
        row = np.exp(lu + log_kernel_apply(lv))
        if np.abs(row - a).sum() < tol:
            break
    # columns match b exactly after the last update, so total mass is 1
    diag = np.exp(lu + lv).sum()
    return float(max(0.0, 1.0 - diag))


def sinkhorn_distance(A, B, reg: float = 0.1, iters: int = 200, *, mask=None,
                      debias: bool = True, tol: float = 1e-13) -> float:
    """Entropic optimal-transport distance between two weight matrices.

    Entries (restricted to ``mask`` when given) are flattened and scaled to
    sum to one.  Ground cost is 0 between an edge and itself, 1 otherwise.
    With ``debias`` the self-transport costs are subtracted,
    d(A,B) - (d(A,A) + d(B,B))/2, so that identical inputs score exactly 0.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        A, B = A[mask], B[mask]
    a, b = A.ravel(), B.ravel()
    if np.any(a < 0) or np.any(b < 0) or not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("weights must be finite and nonnegative")
    if a.sum() <= 0 or b.sum() <= 0:
        raise ValueError("weight matrix has no positive mass")
    a, b = a / a.sum(), b / b.sum()
    # the exact value is symmetric; averaging both update orders keeps a
    # truncated iteration symmetric too
    d = 0.5 * (_entropic_transport_cost(a, b, reg, iters, tol) + _entropic_transport_cost(b, a, reg, iters, tol))
    if debias:
        d -= 0.5 * (_entropic_transport_cost(a, a, reg, iters, tol) + _entropic_transport_cost(b, b, reg, iters, tol))
    return float(min(1.0, max(0.0, d)))


@dataclass
class WeightComparison:
    checkpoint: str
    distances: list
    elapsed_s: float = 0.0

    @property
    def n_states(self) -> int:
        return len(self.distances)

    @property
    def mean(self) -> float:
        return float(np.mean(self.distances))


@dataclass
class SampledState:
    world: WorldState
    robot: int


def sample_states(n_states: int, seed: int, *, n_tasks: int = 50, n_robots: int = 6,
                  method: str = "big-mrta", fleet: dict | None = None) -> list[SampledState]:
    """Decision-instant snapshots from episodes driven by ``method``.

    Only states where both the feasibility mask and the expert weights carry
    some mass are kept, since the distance is undefined otherwise.
    """
    expert = ExpertIncentive()
    states: list[SampledState] = []
    seq = np.random.SeedSequence(seed)
    while len(states) < n_states:
        s = int(seq.spawn(1)[0].generate_state(1, dtype=np.uint64)[0])
        sc = generate(n_tasks, n_robots, s, **(fleet or {}))

        def grab(world, robot):
            if len(states) >= n_states:
                return
            mask = feasibility_matrix(world)
            if mask.any() and (expert(world, None, None) * mask).sum() > 0:
                states.append(SampledState(world.copy(), robot))

        run_episode(sc, make_allocator(method, sc), on_decision=grab)
    return states


def _masked_weights(source, world: WorldState):
    mask = feasibility_matrix(world)
    robots, tasks = np.arange(world.n_robots), np.arange(world.n_tasks)
    w = source.greedy_weights(world, robots, tasks)
    return np.where(mask, w, 0.0), mask


def checkpoint_divergence(checkpoints: Sequence[tuple], states: Sequence[SampledState], *,
                          reg: float = 0.1, iters: int = 200, shape=(6, 50)) -> list[WeightComparison]:
    """Mean Sinkhorn distance to the expert weights for each ``(label, source)``.

    ``source`` is an ``IncentivePolicy``, a ``PolicyParams`` or anything with
    a ``greedy_weights(world, robots, tasks)`` method.
    """
    expert = ExpertIncentive()
    refs = []
    for st in states:
        if (st.world.n_robots, st.world.n_tasks) != tuple(shape):
            raise ValueError(f"state has shape {(st.world.n_robots, st.world.n_tasks)}, expected {tuple(shape)}")
        refs.append(_masked_weights(expert, st.world))
    out = []
    for label, source in checkpoints:
        t0 = time.perf_counter()
        if isinstance(source, PolicyParams):
            source = IncentivePolicy(source)
        dists = []
        for st, (ref, mask) in zip(states, refs):
            w, _ = _masked_weights(source, st.world)
            dists.append(sinkhorn_distance(w, ref, reg, iters, mask=mask))
        out.append(WeightComparison(checkpoint=label, distances=dists, elapsed_s=time.perf_counter() - t0))
    return out


def _meta_lines(meta: dict | None):
    if not meta:
        return []
    return ["# " + json.dumps(meta, sort_keys=True, default=str)]


def write_results_csv(results: Sequence[BenchResult], path, meta: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for line in _meta_lines(meta):
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(RESULT_FIELDS)
        for r in results:
            w.writerows(r.rows())


def write_comparison_csv(comparisons: Sequence[WeightComparison], path, meta: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for line in _meta_lines(meta):
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(COMPARISON_FIELDS)
        for c in comparisons:
            w.writerow([c.checkpoint, repr(c.mean), c.n_states, f"{c.elapsed_s:.6f}"])


def read_csv_rows(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))
