"""Command-line entry point: ``mrtact <command> [options]``.

Every output file carries the tool version, the fully resolved configuration
and all seeds, so re-running a command from that metadata reproduces its
non-timing outputs.

Exit codes: 0 success, 2 usage error, 3 input-file error, 4 contract violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis, graphs, scenario as scen
from .policy import (Hyperparams, IncentivePolicy, ParamsFormatError, PolicyParams, SIGMA_FLOOR,
                     load_params, make_shrinker, save_params)
from .sim import InfeasibleAction, run_episode
from .trainer import TrainConfig, scenario_stream, train

EXIT_USAGE, EXIT_INPUT, EXIT_CONTRACT = 2, 3, 4

log = logging.getLogger("mrtact")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    options: dict = field(default_factory=dict)

    def metadata(self, **extra) -> dict:
        return {
            "tool": "mrtact", "version": __version__, "command": self.subcommand,
            "config": self.options,
            "normalization": dict(graphs.NORMALIZATION),
            **extra,
        }


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=str))


def _fleet(args) -> dict:
    return {"max_range": args.max_range, "max_capacity": args.max_capacity}


def _load_policy(path, heads=None) -> PolicyParams:
    params = load_params(path)
    if heads is not None and params.hp.n_heads != heads:
        raise ParamsFormatError(f"{path}: file has {params.hp.n_heads} heads, --heads {heads} requested")
    return params


def cmd_generate(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    batch = scen.scaled_batch(args.tasks_scale, args.robots_scale, args.n, args.seed, **_fleet(args))
    entries = []
    for k, s in enumerate(batch):
        name = f"scenario_{k:04d}.json"
        scen.save(s, out / name)
        entries.append({"file": name, "seed": s.seed, "digest": s.digest()})
    _write_json(out / "manifest.json", cfg.metadata(scenarios=entries))
    print(f"wrote {len(entries)} scenarios to {out}")
    return 0


def cmd_run(args, cfg: RunConfig) -> int:
    sc = scen.load(args.scenario)
    params = None
    if args.method == "big-cam":
        if not args.params:
            raise UsageError("--method big-cam requires --params")
        params = _load_policy(args.params, args.heads)
    if args.method == "big-cam" and args.stochastic:
        alloc = analysis.BigraphAllocator(
            IncentivePolicy(params, mode="train", epsilon=args.epsilon, seed=args.seed),
            make_shrinker(args.shrink_robots, args.shrink_tasks))
    else:
        alloc = analysis.make_allocator(args.method, sc, params, alpha=args.alpha,
                                        shrink_robots=args.shrink_robots, shrink_tasks=args.shrink_tasks)
    res = run_episode(sc, alloc)
    body = res.to_dict()
    body["metadata"] = cfg.metadata(scenario_seed=sc.seed, scenario_digest=sc.digest())
    out = Path(args.out)
    _write_json(out if out.suffix == ".json" else out / "episode.json", body)
    print(f"completion {res.completion_rate:.3f} reward {res.total_reward:.3f} decisions {res.n_decisions}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.params:
        init = _load_policy(args.params, args.heads)
    else:
        hp = Hyperparams(h=args.embed, n_heads=args.heads or 8)
        init = PolicyParams.init(hp, args.seed)
    tc = TrainConfig(population=args.population, elites=args.elites, noise=args.noise,
                     generations=args.generations, scenarios_per_eval=args.scenarios_per_eval,
                     seed=args.seed, antithetic=not args.no_antithetic)
    stream = scenario_stream(args.n_tasks, args.n_robots, args.seed + 1, **_fleet(args))
    heldout = [scen.generate(args.n_tasks, args.n_robots, s, **_fleet(args))
               for s in scen.derive_seeds(args.seed + 2, args.heldout)]
    best, tlog = train(init, tc, stream, heldout, checkpoint_every=args.checkpoint_every,
                       checkpoint_dir=out / "checkpoints")
    save_params(best, out / "policy.params")
    tlog.write_csv(out / "trainlog.csv")
    _write_json(out / "train_meta.json", cfg.metadata(
        hyperparams=best.hp.__dict__, initial_heldout=tlog.initial_heldout,
        best_heldout=tlog.best_heldout, best_generation=tlog.best_generation))
    print(f"held-out reward {tlog.initial_heldout:.4f} -> {tlog.best_heldout:.4f}")
    return 0


def cmd_bench(args, cfg: RunConfig) -> int:
    methods = [m for chunk in (args.method or []) for m in chunk.split(",") if m]
    if not methods:
        raise UsageError("at least one --method is required")
    params = _load_policy(args.params, args.heads) if "big-cam" in methods and args.params else None
    if "big-cam" in methods and params is None:
        raise UsageError("--method big-cam requires --params")
    results = analysis.bench(methods, args.tasks_scale, args.robots_scale, args.n, args.seed,
                             params=params, jobs=args.jobs, fleet=_fleet(args), alpha=args.alpha,
                             shrink_robots=args.shrink_robots, shrink_tasks=args.shrink_tasks)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = cfg.metadata(scenario_digests=results[0].scenario_digests)
    analysis.write_results_csv(results, out / "results.csv", meta)
    tests = analysis.pairwise_tests(results)
    summary = {
        "metadata": meta,
        "methods": {r.method: {"mean": r.mean, "median": r.median, "std": r.std,
                               "mean_decision_time_s": r.mean_decision_time,
                               "mean_episode_decision_time_s": float(np.mean(r.episode_decision_times))}
                    for r in results},
        "ttests": tests,
    }
    _write_json(out / "summary.json", summary)
    for r in results:
        print(f"{r.method:9s} mean {r.mean:.3f} median {r.median:.3f} std {r.std:.3f} "
              f"per-decision {r.mean_decision_time * 1e3:.2f} ms")
    for t in tests:
        print(f"{t['method_a']} vs {t['method_b']}: t={t['t']:.3f} p={t['p']:.3g}")
    return 0


def cmd_compare_weights(args, cfg: RunConfig) -> int:
    checkpoints = [("expert", analysis.ExpertIncentive())]
    for item in args.params or []:
        label, _, path = item.rpartition("=")
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint {path} not found")
        checkpoints.append((label or path.stem, _load_policy(path, args.heads)))
    states = analysis.sample_states(args.n_states, args.seed, fleet=_fleet(args))
    comps = analysis.checkpoint_divergence(checkpoints, states, reg=args.sinkhorn_reg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    analysis.write_comparison_csv(comps, out / "comparison.csv", cfg.metadata())
    for c in comps:
        print(f"{c.checkpoint}: mean sinkhorn {c.mean:.5f} over {c.n_states} states")
    return 0


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.add_argument("--max-range", type=float, default=scen.DEFAULT_MAX_RANGE)
    p.add_argument("--max-capacity", type=int, default=scen.DEFAULT_MAX_CAPACITY)
    p.add_argument("--heads", type=int, default=None, help="attention heads (8 when creating a policy)")


def _allocation(p: argparse.ArgumentParser) -> None:
    p.add_argument("--params", help="policy parameter file (big-cam)")
    p.add_argument("--alpha", type=float, default=550.0, help="expert incentive time constant, s")
    p.add_argument("--shrink-robots", type=int, default=6)
    p.add_argument("--shrink-tasks", type=int, default=50)
    p.add_argument("--epsilon", type=float, default=0.2)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrtact", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write scenario files and a manifest")
    _common(g)
    g.add_argument("--tasks-scale", type=int, default=1)
    g.add_argument("--robots-scale", type=int, default=1)
    g.add_argument("--n", type=int, default=100)

    r = sub.add_parser("run", help="simulate one episode")
    _common(r)
    _allocation(r)
    r.add_argument("--scenario", required=True)
    r.add_argument("--method", required=True, choices=analysis.METHODS)
    r.add_argument("--stochastic", action="store_true", help="epsilon-greedy weight sampling (big-cam)")

    t = sub.add_parser("train", help="evolution-strategy training of the incentive policy")
    _common(t)
    t.add_argument("--params", help="resume from this parameter file")
    t.add_argument("--embed", type=int, default=128, help="embedding length h")
    t.add_argument("--generations", type=int, default=200)
    t.add_argument("--population", type=int, default=16)
    t.add_argument("--elites", type=int, default=4)
    t.add_argument("--noise", type=float, default=0.05)
    t.add_argument("--scenarios-per-eval", type=int, default=8)
    t.add_argument("--heldout", type=int, default=16)
    t.add_argument("--n-tasks", type=int, default=50)
    t.add_argument("--n-robots", type=int, default=6)
    t.add_argument("--no-antithetic", action="store_true")
    t.add_argument("--checkpoint-every", type=int, default=0)

    b = sub.add_parser("bench", help="compare methods on a shared scenario set")
    _common(b)
    _allocation(b)
    b.add_argument("--method", action="append", help="method name(s), repeatable or comma separated")
    b.add_argument("--tasks-scale", type=int, default=1)
    b.add_argument("--robots-scale", type=int, default=1)
    b.add_argument("--n", type=int, default=100)
    b.add_argument("--jobs", type=int, default=1)

    c = sub.add_parser("compare-weights", help="Sinkhorn distance of policy weights to the expert")
    _common(c)
    c.add_argument("--params", action="append", help="checkpoint as LABEL=PATH or PATH, repeatable")
    c.add_argument("--n-states", type=int, default=1000)
    c.add_argument("--sinkhorn-reg", type=float, default=0.1)
    return parser


COMMANDS = {
    "generate": cmd_generate, "run": cmd_run, "train": cmd_train,
    "bench": cmd_bench, "compare-weights": cmd_compare_weights,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    options = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    options.setdefault("sigma_floor", SIGMA_FLOOR)
    cfg = RunConfig(subcommand=args.command, options=options)
    try:
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mrtact: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, scen.ScenarioFormatError, ParamsFormatError) as exc:
        print(f"mrtact: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InfeasibleAction, analysis.MissingParamsError) as exc:
        print(f"mrtact: contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
