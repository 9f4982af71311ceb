"""Episode scenarios for collective-transport task allocation.

A scenario fixes everything that is random about an episode: task positions,
deadlines and demands, the depot location and the fleet parameters.  Tasks are
numbered from 1; id 0 is reserved for the depot.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

DEFAULT_SPEED = 0.01  # km/s
DEFAULT_MAX_RANGE = 4.0  # km
DEFAULT_MAX_CAPACITY = 10  # units

DEADLINE_LOW = 165.0
DEADLINE_HIGH = 550.0
DEMAND_LOW = 1
DEMAND_HIGH = 10

BASE_TASKS = 50
BASE_ROBOTS = 6


class ScenarioFormatError(ValueError):
    """Raised when a scenario file cannot be parsed.

    ``field`` names the offending entry (dotted path) when known.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ScenarioRangeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TaskSpec:
    id: int
    x: float
    y: float
    deadline: float
    demand: int


@dataclass(frozen=True)
class FleetSpec:
    n_robots: int
    speed: float = DEFAULT_SPEED
    max_range: float = DEFAULT_MAX_RANGE
    max_capacity: int = DEFAULT_MAX_CAPACITY

    def __post_init__(self):
        if self.n_robots < 1:
            raise ValueError("n_robots must be >= 1")
        if not self.speed > 0:
            raise ValueError("speed must be > 0")
        if not self.max_range > 0:
            raise ValueError("max_range must be > 0")
        if self.max_capacity < 1:
            raise ValueError("max_capacity must be >= 1")


@dataclass(frozen=True)
class Scenario:
    tasks: tuple[TaskSpec, ...]
    depot: tuple[float, float]
    fleet: FleetSpec
    seed: int = 0
    # derived arrays, excluded from equality
    _arrays: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if len(self.tasks) < 1:
            raise ValueError("a scenario needs at least one task")
        for k, t in enumerate(self.tasks, start=1):
            if t.id != k:
                raise ValueError(f"task ids must be contiguous from 1, got {t.id} at position {k}")
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "depot", (float(self.depot[0]), float(self.depot[1])))
        object.__setattr__(self, "_arrays", {
            "xy": np.array([[t.x, t.y] for t in self.tasks], dtype=float),
            "deadline": np.array([t.deadline for t in self.tasks], dtype=float),
            "demand": np.array([t.demand for t in self.tasks], dtype=np.int64),
        })

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def n_robots(self) -> int:
        return self.fleet.n_robots

    @property
    def task_xy(self) -> np.ndarray:
        return self._arrays["xy"]

    @property
    def deadlines(self) -> np.ndarray:
        return self._arrays["deadline"]

    @property
    def demands(self) -> np.ndarray:
        return self._arrays["demand"]

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "seed": self.seed,
            "depot": list(self.depot),
            "fleet": {
                "n_robots": self.fleet.n_robots,
                "speed": self.fleet.speed,
                "max_range": self.fleet.max_range,
                "max_capacity": self.fleet.max_capacity,
            },
            "tasks": [
                {"id": t.id, "x": t.x, "y": t.y, "deadline": t.deadline, "demand": t.demand}
                for t in self.tasks
            ],
        }

    def digest(self) -> str:
        """Short content hash, used to prove that methods share scenarios."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def generate(
    n_tasks: int,
    n_robots: int,
    seed: int,
    *,
    speed: float = DEFAULT_SPEED,
    max_range: float = DEFAULT_MAX_RANGE,
    max_capacity: int = DEFAULT_MAX_CAPACITY,
) -> Scenario:
    """Draw a scenario from the uniform training distribution.

    Positions (tasks and depot) are uniform on the unit square, demands are
    uniform integers in 1..10 and deadlines uniform reals in [165, 550] s.
    """
    if n_tasks < 1 or n_robots < 1:
        raise ValueError("n_tasks and n_robots must be >= 1")
    rng = np.random.default_rng(seed)
    depot = rng.uniform(0.0, 1.0, size=2)
    xy = rng.uniform(0.0, 1.0, size=(n_tasks, 2))
    demand = rng.integers(DEMAND_LOW, DEMAND_HIGH + 1, size=n_tasks)
    deadline = rng.uniform(DEADLINE_LOW, DEADLINE_HIGH, size=n_tasks)
    tasks = tuple(
        TaskSpec(id=i + 1, x=float(xy[i, 0]), y=float(xy[i, 1]),
                 deadline=float(deadline[i]), demand=int(demand[i]))
        for i in range(n_tasks)
    )
    fleet = FleetSpec(n_robots=n_robots, speed=speed, max_range=max_range, max_capacity=max_capacity)
    return Scenario(tasks=tasks, depot=(float(depot[0]), float(depot[1])), fleet=fleet, seed=int(seed))


def derive_seeds(base_seed: int, count: int) -> list[int]:
    """``count`` distinct 64-bit seeds derived deterministically from ``base_seed``."""
    ss = np.random.SeedSequence(base_seed)
    seeds: list[int] = []
    seen = set()
    for child in ss.spawn(count):
        s = int(child.generate_state(1, dtype=np.uint64)[0])
        while s in seen:  # pragma: no cover - 64-bit collision
            s = (s + 1) % 2**64
        seen.add(s)
        seeds.append(s)
    return seeds


def scaled_size(s_t: int, s_r: int) -> tuple[int, int]:
    """(N^T, N^R) for task/robot scale factors."""
    return BASE_TASKS * s_t, BASE_ROBOTS * s_t * s_r


def scaled_batch(s_t: int, s_r: int, count: int, base_seed: int, **fleet_kw) -> list[Scenario]:
    n_tasks, n_robots = scaled_size(s_t, s_r)
    return [generate(n_tasks, n_robots, s, **fleet_kw) for s in derive_seeds(base_seed, count)]


def check_ranges(scenario: Scenario) -> list[str]:
    """Return human-readable notes for values outside the generating distribution."""
    issues = []
    dx, dy = scenario.depot
    if not (0 <= dx <= 1 and 0 <= dy <= 1):
        issues.append(f"depot {scenario.depot} outside unit square")
    for t in scenario.tasks:
        if not (0 <= t.x <= 1 and 0 <= t.y <= 1):
            issues.append(f"tasks[{t.id}] position outside unit square")
        if not (DEADLINE_LOW <= t.deadline <= DEADLINE_HIGH):
            issues.append(f"tasks[{t.id}].deadline={t.deadline} outside [{DEADLINE_LOW}, {DEADLINE_HIGH}]")
        if not (DEMAND_LOW <= t.demand <= DEMAND_HIGH):
            issues.append(f"tasks[{t.id}].demand={t.demand} outside [{DEMAND_LOW}, {DEMAND_HIGH}]")
    return issues


def save(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=1))


def _get(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise ScenarioFormatError(where, "missing")
    val = obj[key]
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ScenarioFormatError(where, f"expected number, got {type(val).__name__}")
        return float(val)
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ScenarioFormatError(where, f"expected integer, got {type(val).__name__}")
        return val
    return val


def from_dict(d: dict, *, strict: bool = False) -> Scenario:
    fmt = _get(d, "format", int, "format")
    if fmt != FORMAT_VERSION:
        raise ScenarioFormatError("format", f"unsupported version {fmt}")
    seed = _get(d, "seed", int, "seed")
    depot = _get(d, "depot", list, "depot")
    if not isinstance(depot, list) or len(depot) != 2:
        raise ScenarioFormatError("depot", "expected [x, y]")
    depot = (_get({"x": depot[0]}, "x", float, "depot[0]"), _get({"y": depot[1]}, "y", float, "depot[1]"))
    fl = _get(d, "fleet", dict, "fleet")
    try:
        fleet = FleetSpec(
            n_robots=_get(fl, "n_robots", int, "fleet.n_robots"),
            speed=_get(fl, "speed", float, "fleet.speed"),
            max_range=_get(fl, "max_range", float, "fleet.max_range"),
            max_capacity=_get(fl, "max_capacity", int, "fleet.max_capacity"),
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioFormatError):
            raise
        raise ScenarioFormatError("fleet", str(exc)) from exc
    raw_tasks = _get(d, "tasks", list, "tasks")
    if not isinstance(raw_tasks, list) or not raw_tasks:
        raise ScenarioFormatError("tasks", "expected non-empty list")
    tasks = []
    for k, rt in enumerate(raw_tasks):
        where = f"tasks[{k}]"
        tid = _get(rt, "id", int, where + ".id")
        if tid != k + 1:
            raise ScenarioFormatError(where + ".id", f"expected {k + 1}, got {tid}")
        tasks.append(TaskSpec(
            id=tid,
            x=_get(rt, "x", float, where + ".x"),
            y=_get(rt, "y", float, where + ".y"),
            deadline=_get(rt, "deadline", float, where + ".deadline"),
            demand=_get(rt, "demand", int, where + ".demand"),
        ))
    scen = Scenario(tasks=tuple(tasks), depot=depot, fleet=fleet, seed=seed)
    issues = check_ranges(scen)
    if issues:
        if strict:
            raise ScenarioFormatError("range", "; ".join(issues))
        warnings.warn("; ".join(issues), ScenarioRangeWarning, stacklevel=3)
    return scen


def load(path, *, strict: bool = False) -> Scenario:
    """Read a scenario JSON file.

    Out-of-distribution values are accepted with a ``ScenarioRangeWarning``
    unless ``strict`` is set, in which case they raise.
    """
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError("<document>", f"invalid JSON ({exc.msg} at char {exc.pos})") from exc
    return from_dict(d, strict=strict)
