"""Event-driven episode simulator.

Decisions happen only when a robot arrives somewhere (a task or the depot).
``apply`` records the deciding robot's choice, then advances the clock to the
next arrival and settles it (delivery or refill), so that whichever robot
``next_decider`` returns next already sees its post-arrival state.

Task ids follow the action convention: 0 is the depot, tasks are 1..N^T.
Internally task arrays are indexed 0..N^T-1.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol

import numpy as np

from .scenario import Scenario

DEPOT = 0

ACTIVE, COMPLETED, EXPIRED = 0, 1, 2
_STATUS_NAMES = {ACTIVE: "active", COMPLETED: "completed", EXPIRED: "expired"}

INITIAL_STAGGER = 1e-6  # s between first decisions of consecutive robots


class EpisodeTerminated(RuntimeError):
    """No robot is left to decide."""


class InfeasibleAction(RuntimeError):
    """An allocator chose an action that violates feasibility."""


@dataclass(frozen=True)
class RobotState:
    dest_x: float
    dest_y: float
    range: float
    capacity: int
    t_next: float
    at_depot: bool
    retired: bool


@dataclass(frozen=True)
class TaskState:
    residual_demand: int
    status: str
    completion_time: float | None
    committed: int


class WorldState:
    """Mutable simulation state. Robots and tasks are stored column-wise."""

    def __init__(self, scenario: Scenario, *, strict_capacity_pruning: bool = False):
        n_r, n_t = scenario.n_robots, scenario.n_tasks
        fl = scenario.fleet
        self.scenario = scenario
        self.strict_capacity_pruning = strict_capacity_pruning
        self.clock = 0.0
        self.reward_accum = 0.0
        self.decision_log: list[tuple[float, int, int]] = []

        dx, dy = scenario.depot
        self.robot_xy = np.tile(np.array([dx, dy], dtype=float), (n_r, 1))
        self.robot_range = np.full(n_r, float(fl.max_range))
        self.robot_cap = np.full(n_r, int(fl.max_capacity), dtype=np.int64)
        self.robot_t_next = np.arange(n_r, dtype=float) * INITIAL_STAGGER
        self.robot_at_depot = np.ones(n_r, dtype=bool)
        self.robot_retired = np.zeros(n_r, dtype=bool)
        # destination the robot is travelling to (-1: none pending) and units pledged there
        self.robot_pending = np.full(n_r, -1, dtype=np.int64)
        self.robot_pledge = np.zeros(n_r, dtype=np.int64)

        self.task_residual = scenario.demands.copy()
        self.task_status = np.full(n_t, ACTIVE, dtype=np.int8)
        self.task_completion = np.full(n_t, np.nan)
        self.task_committed = np.zeros(n_t, dtype=np.int64)
        self.delivered = np.zeros(n_t, dtype=np.int64)
        self.task_rewarded = np.zeros(n_t, dtype=bool)

    @property
    def n_robots(self) -> int:
        return len(self.robot_range)

    @property
    def n_tasks(self) -> int:
        return len(self.task_residual)

    def copy(self) -> "WorldState":
        new = object.__new__(WorldState)
        for k, v in self.__dict__.items():
            if isinstance(v, np.ndarray):
                v = v.copy()
            elif isinstance(v, list):
                v = list(v)
            new.__dict__[k] = v
        return new

    def robot(self, r: int) -> RobotState:
        return RobotState(
            dest_x=float(self.robot_xy[r, 0]), dest_y=float(self.robot_xy[r, 1]),
            range=float(self.robot_range[r]), capacity=int(self.robot_cap[r]),
            t_next=float(self.robot_t_next[r]), at_depot=bool(self.robot_at_depot[r]),
            retired=bool(self.robot_retired[r]),
        )

    def task(self, task_id: int) -> TaskState:
        i = task_id - 1
        ct = self.task_completion[i]
        return TaskState(
            residual_demand=int(self.task_residual[i]),
            status=_STATUS_NAMES[int(self.task_status[i])],
            completion_time=None if np.isnan(ct) else float(ct),
            committed=int(self.task_committed[i]),
        )

    def uncommitted(self) -> np.ndarray:
        return self.task_residual - self.task_committed


def init(scenario: Scenario, *, strict_capacity_pruning: bool = False) -> WorldState:
    return WorldState(scenario, strict_capacity_pruning=strict_capacity_pruning)


def next_decider(world: WorldState) -> int:
    """Robot with the earliest next decision time; ties go to the lowest index."""
    live = ~world.robot_retired
    if not live.any():
        raise EpisodeTerminated("all robots retired")
    t = np.where(live, world.robot_t_next, np.inf)
    return int(np.argmin(t))


def distances_to_tasks(world: WorldState, robots=None, tasks=None) -> np.ndarray:
    """Euclidean distance from each robot's current destination to each task."""
    rxy = world.robot_xy if robots is None else world.robot_xy[robots]
    txy = world.scenario.task_xy if tasks is None else world.scenario.task_xy[tasks]
    diff = rxy[:, None, :] - txy[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def task_depot_distances(world: WorldState, tasks=None) -> np.ndarray:
    txy = world.scenario.task_xy if tasks is None else world.scenario.task_xy[tasks]
    return np.hypot(txy[:, 0] - world.scenario.depot[0], txy[:, 1] - world.scenario.depot[1])


def feasibility_matrix(world: WorldState, robots=None, tasks=None) -> np.ndarray:
    """Boolean (robots x tasks) matrix of feasible robot-task pairs.

    ``robots`` and ``tasks`` are index arrays (tasks 0-based); ``None`` means all.
    """
    robots = np.arange(world.n_robots) if robots is None else np.asarray(robots, dtype=int)
    tasks = np.arange(world.n_tasks) if tasks is None else np.asarray(tasks, dtype=int)
    speed = world.scenario.fleet.speed
    d_ri = distances_to_tasks(world, robots, tasks)
    d_i0 = task_depot_distances(world, tasks)
    rng_ok = world.robot_range[robots, None] >= d_ri + d_i0[None, :]
    arrive = world.robot_t_next[robots, None] + d_ri / speed
    time_ok = arrive <= world.scenario.deadlines[tasks][None, :]
    cap = world.robot_cap[robots]
    free = world.uncommitted()[tasks]
    task_ok = (world.task_status[tasks] == ACTIVE) & (free > 0)
    cap_ok = cap[:, None] >= 1
    if world.strict_capacity_pruning:
        cap_ok = cap_ok & (cap[:, None] >= free[None, :])
    live = ~world.robot_retired[robots]
    return rng_ok & time_ok & cap_ok & task_ok[None, :] & live[:, None]


def feasibility(world: WorldState, robot: int) -> np.ndarray:
    """Sorted array of feasible task ids (1-based) for ``robot``. The depot is implicit."""
    row = feasibility_matrix(world, [robot])[0]
    return np.flatnonzero(row) + 1


def _sweep_expired(world: WorldState) -> None:
    late = (world.task_status == ACTIVE) & (world.scenario.deadlines < world.clock)
    world.task_status[late] = EXPIRED


def _settle_arrival(world: WorldState, r: int) -> None:
    dest = int(world.robot_pending[r])
    if dest < 0:
        return
    fl = world.scenario.fleet
    if dest == DEPOT:
        world.robot_range[r] = fl.max_range
        world.robot_cap[r] = fl.max_capacity
    else:
        i = dest - 1
        delivered = min(int(world.task_residual[i]), int(world.robot_cap[r]))
        world.task_residual[i] -= delivered
        world.delivered[i] += delivered
        world.robot_cap[r] -= delivered
        world.task_committed[i] -= world.robot_pledge[r]
        if world.task_residual[i] == 0 and world.task_status[i] == ACTIVE:
            world.task_status[i] = COMPLETED
            world.task_completion[i] = world.robot_t_next[r]
    world.robot_pending[r] = -1
    world.robot_pledge[r] = 0


def _advance(world: WorldState) -> None:
    live = ~world.robot_retired
    if not live.any():
        return
    r = next_decider(world)
    world.clock = max(world.clock, float(world.robot_t_next[r]))
    _settle_arrival(world, r)
    _sweep_expired(world)


def _hold_at_depot(world: WorldState, r: int) -> None:
    """Robot stays at the depot: wait for the next event, or retire for good."""
    if len(feasibility(world, r)) == 0:
        # an idle, fully charged robot can never regain a feasible task:
        # time only moves forward and uncommitted demand only shrinks
        world.robot_retired[r] = True
        return
    others = (~world.robot_retired) & (np.arange(world.n_robots) != r)
    if not others.any():
        world.robot_retired[r] = True
        return
    now = world.robot_t_next[r]
    later = world.robot_t_next[others]
    later = later[later > now]
    world.robot_t_next[r] = later.min() if len(later) else np.nextafter(now, np.inf)


def apply(world: WorldState, robot: int, action: int) -> float:
    """Carry out ``robot``'s decision and advance to the next event.

    Returns the reward for this decision: 1/N^T the first time an active task
    is chosen, 0 otherwise (a task shared by several robots pays once, which
    keeps an episode's total at most 1).  Choosing the depot while already there means "hold":
    the robot waits for the next event, or retires if nothing is feasible.
    """
    if world.robot_retired[robot]:
        raise InfeasibleAction(f"robot {robot} is retired")
    if world.robot_pending[robot] >= 0:
        raise InfeasibleAction(f"robot {robot} has not reached its destination yet")
    world.clock = max(world.clock, float(world.robot_t_next[robot]))
    world.decision_log.append((float(world.robot_t_next[robot]), int(robot), int(action)))
    sc = world.scenario
    reward = 0.0
    if action == DEPOT:
        if world.robot_at_depot[robot]:
            _hold_at_depot(world, robot)
        else:
            dx, dy = sc.depot
            dist = float(np.hypot(world.robot_xy[robot, 0] - dx, world.robot_xy[robot, 1] - dy))
            world.robot_xy[robot] = (dx, dy)
            world.robot_range[robot] -= dist
            world.robot_t_next[robot] += dist / sc.fleet.speed
            world.robot_at_depot[robot] = True
            world.robot_pending[robot] = DEPOT
    else:
        if not (1 <= action <= world.n_tasks):
            raise InfeasibleAction(f"action {action} out of range")
        i = action - 1
        if not feasibility_matrix(world, [robot], [i])[0, 0]:
            raise InfeasibleAction(f"task {action} infeasible for robot {robot} at t={world.clock:.3f}")
        dist = float(np.hypot(*(world.robot_xy[robot] - sc.task_xy[i])))
        pledge = min(int(world.uncommitted()[i]), int(world.robot_cap[robot]))
        world.task_committed[i] += pledge
        world.robot_pledge[robot] = pledge
        world.robot_pending[robot] = action
        world.robot_xy[robot] = sc.task_xy[i]
        world.robot_range[robot] -= dist
        world.robot_t_next[robot] += dist / sc.fleet.speed
        world.robot_at_depot[robot] = False
        if not world.task_rewarded[i]:
            world.task_rewarded[i] = True
            reward = 1.0 / world.n_tasks
    world.reward_accum += reward
    _advance(world)
    return reward


def constraint_violations(world: WorldState, tol: float = 1e-9) -> list[str]:
    """Range/capacity bound violations (remaining range and capacity limits)."""
    fl = world.scenario.fleet
    out = []
    for r in range(world.n_robots):
        rg, c = world.robot_range[r], world.robot_cap[r]
        if not (-tol <= rg <= fl.max_range + tol):
            out.append(f"robot {r} range {rg}")
        if not (0 <= c <= fl.max_capacity):
            out.append(f"robot {r} capacity {c}")
    return out


@dataclass
class EpisodeResult:
    n_tasks: int
    n_success: int
    completion_rate: float
    f_cost: float
    total_reward: float
    per_decision_times: list = field(default_factory=list)
    n_decisions: int = 0
    decision_log: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


class Allocator(Protocol):
    """Anything that picks an action for the deciding robot."""

    def __call__(self, world: WorldState, robot: int) -> int: ...


def run_episode(
    scenario: Scenario,
    allocator: Callable[[WorldState, int], int],
    *,
    world: WorldState | None = None,
    strict_capacity_pruning: bool = False,
    on_decision: Callable[[WorldState, int], None] | None = None,
) -> EpisodeResult:
    """Simulate one episode until every robot has retired.

    The allocator is only consulted when the deciding robot has at least one
    feasible task; ``on_decision`` (if given) sees the world just before each
    consultation.  Per-decision wall times cover the allocator call only.
    """
    if world is None:
        world = init(scenario, strict_capacity_pruning=strict_capacity_pruning)
    times: list[float] = []
    while not world.robot_retired.all():
        r = next_decider(world)
        if len(feasibility(world, r)) == 0:
            action = DEPOT
        else:
            if on_decision is not None:
                on_decision(world, r)
            t0 = time.perf_counter()
            action = int(allocator(world, r))
            times.append(time.perf_counter() - t0)
        apply(world, r, action)
    # whatever is still open can no longer be served
    open_ = world.task_status == ACTIVE
    if open_.any():
        world.clock = max(world.clock, float(np.nextafter(world.scenario.deadlines[open_].max(), np.inf)))
        _sweep_expired(world)
    n_t = world.n_tasks
    n_success = int((world.task_status == COMPLETED).sum())
    f_cost = (n_t - n_success) / n_t
    return EpisodeResult(
        n_tasks=n_t,
        n_success=n_success,
        completion_rate=n_success / n_t,
        f_cost=f_cost,
        total_reward=float(world.reward_accum),
        per_decision_times=times,
        n_decisions=len(times),
        decision_log=list(world.decision_log),
    )
