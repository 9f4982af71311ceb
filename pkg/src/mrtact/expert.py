"""Hand-crafted incentive for the matching baseline.

The weight of edge (r, i) is the range robot r would have left after serving
task i and returning to the depot, discounted by exp(-t/alpha) where t is the
robot's arrival time at i.  Edges that miss the deadline get weight 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sim import WorldState, distances_to_tasks, task_depot_distances

DEFAULT_ALPHA = 550.0  # s


@dataclass(frozen=True)
class ExpertConfig:
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")


def expert_weight(robot: int, task_id: int, world: WorldState, config: ExpertConfig = ExpertConfig()) -> float:
    """Incentive for ``robot`` to take task ``task_id`` (1-based).

    Arrival time is absolute (robot's next decision time plus travel), matched
    against the absolute deadline.  Service takes no time.
    """
    sc = world.scenario
    i = task_id - 1
    rx, ry = world.robot_xy[robot]
    tx, ty = sc.task_xy[i]
    d_ri = float(np.hypot(rx - tx, ry - ty))
    d_i0 = float(np.hypot(tx - sc.depot[0], ty - sc.depot[1]))
    slack = float(world.robot_range[robot]) - (d_ri + d_i0)
    arrival = float(world.robot_t_next[robot]) + d_ri / sc.fleet.speed
    if arrival > sc.deadlines[i]:
        return 0.0
    return max(0.0, slack) * float(np.exp(-arrival / config.alpha))


def expert_matrix(world: WorldState, robots=None, tasks=None, config: ExpertConfig = ExpertConfig()) -> np.ndarray:
    """Vectorized ``expert_weight`` over robots x tasks (0-based task indices)."""
    sc = world.scenario
    robots = np.arange(world.n_robots) if robots is None else np.asarray(robots, dtype=int)
    tasks = np.arange(world.n_tasks) if tasks is None else np.asarray(tasks, dtype=int)
    d_ri = distances_to_tasks(world, robots, tasks)
    d_i0 = task_depot_distances(world, tasks)
    slack = world.robot_range[robots, None] - (d_ri + d_i0[None, :])
    arrival = world.robot_t_next[robots, None] + d_ri / sc.fleet.speed
    w = np.maximum(0.0, slack) * np.exp(-arrival / config.alpha)
    return np.where(arrival <= sc.deadlines[tasks][None, :], w, 0.0)


class ExpertIncentive:
    """Weight function wrapper for the matching allocator."""

    name = "big-mrta"

    def __init__(self, config: ExpertConfig = ExpertConfig()):
        self.config = config

    def __call__(self, world, robots, tasks, mask=None):
        return expert_matrix(world, robots, tasks, self.config)

    greedy_weights = __call__
