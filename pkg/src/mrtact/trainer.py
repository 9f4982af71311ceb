"""Gradient-free training of the incentive policy.

A plain (mu, lambda) evolution strategy on the flat parameter vector:
Gaussian perturbations (optionally antithetic), every candidate scored on the
same fresh batch of scenarios, the new centre is the mean of the elites.  The
matching step is not differentiable, which this optimizer does not care about.
The returned parameters are the best centre seen on a fixed held-out batch.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .matching import BigraphAllocator
from .policy import IncentivePolicy, PolicyParams, make_shrinker, save_params
from .scenario import Scenario, derive_seeds, generate
from .sim import run_episode

log = logging.getLogger(__name__)

LOG_FIELDS = ("generation", "best", "mean", "std", "elapsed_s", "param_norm")


@dataclass(frozen=True)
class TrainConfig:
    population: int = 16
    elites: int = 4
    noise: float = 0.05
    generations: int = 200
    scenarios_per_eval: int = 8
    seed: int = 0
    antithetic: bool = True

    def __post_init__(self):
        if not 1 <= self.elites <= self.population:
            raise ValueError("need 1 <= elites <= population")
        if not self.noise > 0:
            raise ValueError("noise must be > 0")
        if self.antithetic and self.population % 2:
            raise ValueError("antithetic sampling needs an even population")


@dataclass
class GenerationRecord:
    generation: int
    best: float
    mean: float
    std: float
    elapsed_s: float
    param_norm: float
    heldout: float = float("nan")


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    initial_heldout: float = float("nan")
    best_heldout: float = float("nan")
    best_generation: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_FIELDS)
            for r in self.records:
                w.writerow([r.generation, repr(r.best), repr(r.mean), repr(r.std),
                            f"{r.elapsed_s:.6f}", repr(r.param_norm)])


def policy_allocator(params: PolicyParams, max_robots: int = 6, max_tasks: int = 50) -> BigraphAllocator:
    return BigraphAllocator(IncentivePolicy(params), make_shrinker(max_robots, max_tasks), name="big-cam")


def evaluate(params: PolicyParams, scenarios: Sequence[Scenario]) -> float:
    """Mean episode reward of the greedy (test-mode) policy."""
    if len(scenarios) == 0:
        raise ValueError("cannot evaluate on an empty scenario batch")
    alloc = policy_allocator(params)
    return float(np.mean([run_episode(s, alloc).total_reward for s in scenarios]))


def scenario_stream(n_tasks: int, n_robots: int, seed: int, **fleet_kw) -> Callable[[int, int], list]:
    """``stream(generation, count)`` -> that generation's shared training scenarios."""

    def stream(generation: int, count: int) -> list:
        gen_seed = derive_seeds(seed, generation + 1)[generation]
        return [generate(n_tasks, n_robots, s, **fleet_kw) for s in derive_seeds(gen_seed, count)]

    return stream


def train(
    initial: PolicyParams,
    config: TrainConfig,
    stream: Callable[[int, int], list],
    heldout: Sequence[Scenario],
    *,
    checkpoint_every: int = 0,
    checkpoint_dir=None,
    on_generation: Callable[[GenerationRecord], None] | None = None,
) -> tuple[PolicyParams, TrainLog]:
    rng = np.random.default_rng(config.seed)
    centre = initial.flat.copy()
    tlog = TrainLog()
    best = initial
    tlog.initial_heldout = tlog.best_heldout = evaluate(initial, heldout) if len(heldout) else float("nan")
    t0 = time.perf_counter()
    dim = centre.size
    for gen in range(config.generations):
        if config.antithetic:
            half = rng.standard_normal((config.population // 2, dim))
            eps = np.concatenate([half, -half])
        else:
            eps = rng.standard_normal((config.population, dim))
        cands = centre[None, :] + config.noise * eps
        batch = stream(gen, config.scenarios_per_eval)
        fitness = np.array([evaluate(initial.with_flat(c), batch) for c in cands])
        # stable sort: equal fitness keeps candidate order
        elite = np.argsort(-fitness, kind="stable")[:config.elites]
        new_centre = cands[elite].mean(axis=0)
        if np.all(np.isfinite(new_centre)):
            centre = new_centre
        rec = GenerationRecord(
            generation=gen, best=float(fitness.max()), mean=float(fitness.mean()),
            std=float(fitness.std()), elapsed_s=time.perf_counter() - t0,
            param_norm=float(np.linalg.norm(centre)),
        )
        if len(heldout):
            cur = initial.with_flat(centre)
            rec.heldout = evaluate(cur, heldout)
            if rec.heldout > tlog.best_heldout:
                tlog.best_heldout, tlog.best_generation, best = rec.heldout, gen + 1, cur
        else:
            best = initial.with_flat(centre)
        tlog.records.append(rec)
        log.info("gen %d best %.4f mean %.4f heldout %.4f", gen, rec.best, rec.mean, rec.heldout)
        if on_generation is not None:
            on_generation(rec)
        if checkpoint_every and checkpoint_dir is not None and (gen + 1) % checkpoint_every == 0:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_params(initial.with_flat(centre), Path(checkpoint_dir) / f"gen{gen + 1:05d}.params")
    return best, tlog
