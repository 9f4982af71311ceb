"""Task and robot state graphs.

Both graphs are fully connected.  Edge weights measure node similarity,
``1 / (1 + |f_i - f_j|)`` on normalized feature vectors, and the degree
matrix holds the row sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sim import WorldState

TIME_SCALE = 550.0  # s, latest possible deadline
DEMAND_SCALE = 10.0  # units, largest demand

NORMALIZATION = {
    "x": 1.0, "y": 1.0, "deadline": TIME_SCALE, "demand": DEMAND_SCALE,
    "range": "max_range", "capacity": "max_capacity", "t_next": TIME_SCALE,
}


@dataclass
class StateGraph:
    features: np.ndarray
    adjacency: np.ndarray
    degree: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]


# the two graph kinds differ only in their feature rows
TaskGraph = StateGraph
RobotGraph = StateGraph


def similarity_adjacency(features: np.ndarray, norm: str = "l2") -> np.ndarray:
    diff = features[:, None, :] - features[None, :, :]
    if norm == "l2":
        dist = np.sqrt((diff ** 2).sum(axis=-1))
    elif norm == "l1":
        dist = np.abs(diff).sum(axis=-1)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return 1.0 / (1.0 + dist)


def _graph(features: np.ndarray, norm: str) -> StateGraph:
    adj = similarity_adjacency(features, norm)
    return StateGraph(features=features, adjacency=adj, degree=np.diag(adj.sum(axis=1)))


def task_features(world: WorldState, tasks=None) -> np.ndarray:
    sc = world.scenario
    idx = np.arange(world.n_tasks) if tasks is None else np.asarray(tasks, dtype=int)
    return np.column_stack([
        sc.task_xy[idx, 0],
        sc.task_xy[idx, 1],
        sc.deadlines[idx] / TIME_SCALE,
        world.task_residual[idx] / DEMAND_SCALE,
    ])


def robot_features(world: WorldState, robots=None) -> np.ndarray:
    fl = world.scenario.fleet
    idx = np.arange(world.n_robots) if robots is None else np.asarray(robots, dtype=int)
    return np.column_stack([
        world.robot_xy[idx, 0],
        world.robot_xy[idx, 1],
        world.robot_range[idx] / fl.max_range,
        world.robot_cap[idx] / fl.max_capacity,
        world.robot_t_next[idx] / TIME_SCALE,
    ])


def build_task_graph(world: WorldState, tasks=None, *, norm: str = "l2") -> StateGraph:
    """Graph over all tasks (or the ``tasks`` subset, 0-based), whatever their status."""
    return _graph(task_features(world, tasks), norm)


def build_robot_graph(world: WorldState, robots=None, *, norm: str = "l2") -> StateGraph:
    return _graph(robot_features(world, robots), norm)
