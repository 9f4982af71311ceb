"""Learned bigraph incentive: graph-capsule encoders plus attention decoders.

Two encoders embed the task graph and the robot graph.  Two attention
decoders (robot queries against task keys/values) turn the embeddings into
N^R x N^T matrices, read as the location and scale of independent LogNormal
distributions over edge weights.

Encoder layer, with row-normalized adjacency A = D^-1 W and layer input X::

    out = tanh( concat_{p=1..P, k=1..K} [ A^k (Z^p) W_kp ] + X W_self + b )

where Z is X standardized column-wise over the nodes and Z^p is an
elementwise power.  The concatenated blocks split the embedding width h as
evenly as possible.

Everything is plain numpy; parameters live in one flat float64 vector so a
gradient-free optimizer can work on them directly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graphs import StateGraph, build_robot_graph, build_task_graph
from .sim import WorldState, distances_to_tasks, feasibility_matrix

TASK_FEATURES = 4
ROBOT_FEATURES = 5
SIGMA_FLOOR = 1e-3
EPSILON = 0.2
LOG_CLIP = 60.0  # keeps exp() of log-weights finite and positive

MAGIC = b"MRTAPRM\x00"
FILE_VERSION = 1


class ParamsFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    h: int = 128
    P: int = 4
    K: int = 3
    L_e: int = 1
    n_heads: int = 8

    def __post_init__(self):
        if min(self.h, self.P, self.K, self.L_e, self.n_heads) < 1:
            raise ValueError("hyperparameters must be positive")
        if self.h % self.n_heads:
            raise ValueError(f"h={self.h} not divisible by n_heads={self.n_heads}")
        if self.h < self.P * self.K:
            raise ValueError("h must be at least P*K")

    def block_widths(self) -> list[int]:
        n = self.P * self.K
        return [self.h // n + (1 if j < self.h % n else 0) for j in range(n)]


def param_shapes(hp: Hyperparams) -> list[tuple[str, tuple, int]]:
    """(name, shape, fan_in) for every tensor, in flat-vector order."""
    out = []
    widths = hp.block_widths()
    for enc, d_in in (("task", TASK_FEATURES), ("robot", ROBOT_FEATURES)):
        for layer in range(hp.L_e):
            d = d_in if layer == 0 else hp.h
            j = 0
            for p in range(1, hp.P + 1):
                for k in range(1, hp.K + 1):
                    out.append((f"{enc}.{layer}.W_{k}_{p}", (d, widths[j]), d))
                    j += 1
            out.append((f"{enc}.{layer}.W_self", (d, hp.h), d))
            out.append((f"{enc}.{layer}.b", (hp.h,), d))
    for dec in ("mu", "sigma"):
        for name in ("Wq", "Wk", "Wv"):
            out.append((f"{dec}.{name}", (hp.h, hp.h), hp.h))
        out.append((f"{dec}.Wo", (hp.h, hp.h), hp.h))
        out.append((f"{dec}.bo", (hp.h,), hp.h))
        out.append((f"{dec}.Wff", (hp.h, hp.h), hp.h))
        out.append((f"{dec}.bff", (hp.h,), hp.h))
        out.append((f"{dec}.Wfin", (hp.h, hp.h), hp.h))
    return out


def param_count(hp: Hyperparams) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in param_shapes(hp))


class PolicyParams:
    """All trainable tensors, backed by one flat vector (tensors are views into it)."""

    def __init__(self, hp: Hyperparams, flat: np.ndarray):
        flat = np.array(flat, dtype=np.float64)
        if flat.shape != (param_count(hp),):
            raise ValueError(f"expected {param_count(hp)} parameters, got {flat.shape}")
        self.hp = hp
        self.flat = flat
        self.tensors: dict[str, np.ndarray] = {}
        pos = 0
        for name, shape, _ in param_shapes(hp):
            size = int(np.prod(shape))
            self.tensors[name] = flat[pos:pos + size].reshape(shape)
            pos += size

    def __getitem__(self, name):
        return self.tensors[name]

    @classmethod
    def init(cls, hp: Hyperparams, seed: int) -> "PolicyParams":
        rng = np.random.default_rng(seed)
        parts = []
        for _, shape, fan_in in param_shapes(hp):
            bound = 1.0 / np.sqrt(fan_in)
            parts.append(rng.uniform(-bound, bound, size=int(np.prod(shape))))
        return cls(hp, np.concatenate(parts))

    def with_flat(self, flat) -> "PolicyParams":
        return PolicyParams(self.hp, flat)


def gcaps_encode(graph: StateGraph, params: PolicyParams, which: str) -> np.ndarray:
    """Node embeddings (N x h) for the ``task`` or ``robot`` graph."""
    hp = params.hp
    x = graph.features
    d_in = TASK_FEATURES if which == "task" else ROBOT_FEATURES
    if x.ndim != 2 or x.shape[1] != d_in:
        raise ValueError(f"{which} encoder expects {d_in} features, got shape {x.shape}")
    a_hat = graph.adjacency / np.diag(graph.degree)[:, None]
    for layer in range(hp.L_e):
        pre = f"{which}.{layer}."
        z = (x - x.mean(axis=0)) / (x.std(axis=0) + 1e-6)
        blocks = []
        for p in range(1, hp.P + 1):
            zp = z ** p
            for k in range(1, hp.K + 1):
                zp = a_hat @ zp
                blocks.append(zp @ params[pre + f"W_{k}_{p}"])
        x = np.tanh(np.concatenate(blocks, axis=1) + x @ params[pre + "W_self"] + params[pre + "b"])
    return x


def _softmax(s: np.ndarray) -> np.ndarray:
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def mha_decode(task_emb: np.ndarray, robot_emb: np.ndarray, params: PolicyParams, which: str) -> np.ndarray:
    """Score matrix (N^R x N^T) from one attention decoder (``mu`` or ``sigma``)."""
    hp = params.hp
    n_r, n_t = robot_emb.shape[0], task_emb.shape[0]
    dk = hp.h // hp.n_heads
    q = (robot_emb @ params[which + ".Wq"]).reshape(n_r, hp.n_heads, dk).transpose(1, 0, 2)
    k = (task_emb @ params[which + ".Wk"]).reshape(n_t, hp.n_heads, dk).transpose(1, 0, 2)
    v = (task_emb @ params[which + ".Wv"]).reshape(n_t, hp.n_heads, dk).transpose(1, 0, 2)
    att = _softmax(q @ k.transpose(0, 2, 1) / np.sqrt(dk))
    heads = (att @ v).transpose(1, 0, 2).reshape(n_r, hp.h)
    z = heads @ params[which + ".Wo"] + params[which + ".bo"]
    g = np.tanh(z @ params[which + ".Wff"] + params[which + ".bff"])
    return g @ (task_emb @ params[which + ".Wfin"]).T / np.sqrt(hp.h)


@dataclass
class WeightDistributions:
    mu: np.ndarray
    sigma: np.ndarray


def weight_distributions(world: WorldState, params: PolicyParams, robots=None, tasks=None,
                         sigma_floor: float = SIGMA_FLOOR, norm: str = "l2") -> WeightDistributions:
    f_t = gcaps_encode(build_task_graph(world, tasks, norm=norm), params, "task")
    f_r = gcaps_encode(build_robot_graph(world, robots, norm=norm), params, "robot")
    mu = mha_decode(f_t, f_r, params, "mu")
    sigma = np.logaddexp(0.0, mha_decode(f_t, f_r, params, "sigma")) + sigma_floor
    return WeightDistributions(mu=mu, sigma=sigma)


def greedy_weights(dists: WeightDistributions, greedy: str = "median") -> np.ndarray:
    """Deterministic weights: LogNormal median exp(mu), or its mean exp(mu + sigma^2/2)."""
    if greedy == "median":
        log_w = dists.mu
    elif greedy == "mean":
        log_w = dists.mu + 0.5 * dists.sigma ** 2
    else:
        raise ValueError(f"unknown greedy mode {greedy!r}")
    return np.exp(np.clip(log_w, -LOG_CLIP, LOG_CLIP))


def sample_weights(dists: WeightDistributions, mode: str, rng: np.random.Generator | None = None,
                   epsilon: float = EPSILON, greedy: str = "median") -> np.ndarray:
    """Edge weights; in ``train`` mode each entry is drawn from its LogNormal with prob. epsilon."""
    base = greedy_weights(dists, greedy)
    if mode == "test":
        return base
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    explore = rng.random(dists.mu.shape) < epsilon
    draw = np.exp(np.clip(dists.mu + dists.sigma * rng.standard_normal(dists.mu.shape), -LOG_CLIP, LOG_CLIP))
    return np.where(explore, draw, base)


def shrink(world: WorldState, robot: int, max_robots: int = 6, max_tasks: int = 50):
    """Robot and task subsets (index arrays, tasks 0-based) around the deciding robot.

    Other robots are ranked by distance between current destinations, tasks by
    distance from the decider with its feasible tasks first.  Ties go to the
    lower index.  Subsets are returned in ascending index order.
    """
    n_r, n_t = world.n_robots, world.n_tasks
    if n_r <= max_robots:
        robots = np.arange(n_r)
    else:
        others = np.array([j for j in range(n_r) if j != robot])
        d = np.hypot(*(world.robot_xy[others] - world.robot_xy[robot]).T)
        order = np.lexsort((others, d, world.robot_retired[others]))
        robots = np.sort(np.concatenate([[robot], others[order[:max_robots - 1]]]))
    if n_t <= max_tasks:
        tasks = np.arange(n_t)
    else:
        idx = np.arange(n_t)
        d = distances_to_tasks(world, [robot])[0]
        feas = feasibility_matrix(world, [robot])[0]
        order = np.lexsort((idx, d, ~feas))
        tasks = np.sort(order[:max_tasks])
    return robots, tasks


class IncentivePolicy:
    """Learned weight function for the matching allocator."""

    name = "big-cam"

    def __init__(self, params: PolicyParams, *, mode: str = "test", epsilon: float = EPSILON,
                 sigma_floor: float = SIGMA_FLOOR, greedy: str = "median", seed: int = 0):
        self.params = params
        self.mode = mode
        self.epsilon = epsilon
        self.sigma_floor = sigma_floor
        self.greedy = greedy
        self.rng = np.random.default_rng(seed) if mode == "train" else None

    def distributions(self, world, robots=None, tasks=None) -> WeightDistributions:
        return weight_distributions(world, self.params, robots, tasks, self.sigma_floor)

    def greedy_weights(self, world, robots=None, tasks=None, mask=None) -> np.ndarray:
        return greedy_weights(self.distributions(world, robots, tasks), self.greedy)

    def __call__(self, world, robots, tasks, mask=None):
        dists = self.distributions(world, robots, tasks)
        return sample_weights(dists, self.mode, self.rng, self.epsilon, self.greedy)


def make_shrinker(max_robots: int = 6, max_tasks: int = 50):
    def _shrink(world, robot):
        return shrink(world, robot, max_robots, max_tasks)
    return _shrink


_HEADER = struct.Struct("<8sI5IQ")


def save_params(params: PolicyParams, path) -> None:
    hp = params.hp
    head = _HEADER.pack(MAGIC, FILE_VERSION, hp.h, hp.P, hp.K, hp.L_e, hp.n_heads, params.flat.size)
    Path(path).write_bytes(head + params.flat.astype("<f8").tobytes())


def load_params(path, expected: Hyperparams | None = None) -> PolicyParams:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ParamsFormatError("truncated header")
    magic, version, h, P, K, L_e, n_heads, count = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ParamsFormatError("not a policy parameter file")
    if version != FILE_VERSION:
        raise ParamsFormatError(f"unsupported format version {version}")
    hp = Hyperparams(h=h, P=P, K=K, L_e=L_e, n_heads=n_heads)
    if expected is not None and hp != expected:
        raise ParamsFormatError(f"hyperparameters {hp} do not match expected {expected}")
    if count != param_count(hp):
        raise ParamsFormatError(f"header says {count} parameters, hyperparameters imply {param_count(hp)}")
    body = blob[_HEADER.size:]
    if len(body) != 8 * count:
        raise ParamsFormatError(f"expected {8 * count} bytes of parameters, found {len(body)}")
    return PolicyParams(hp, np.frombuffer(body, dtype="<f8").astype(np.float64))
