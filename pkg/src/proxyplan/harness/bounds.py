"""Fixed checkpoint paths with exact edge values and discounts, for the error-bound sweep."""
from __future__ import annotations

import numpy as np

from ..gridworld import MazeTask, generate_task
from ..dp_oracle import edge_matrices, optimal_policies, shortest_distances

EPS_GRID = [(ev, eg) for ev in (0.001, 0.005, 0.01) for eg in (0.001, 0.005, 0.01)]


def bound_fixtures(n: int = 5, size: int = 6, difficulty: float = 0.3) -> list[MazeTask]:
    return [generate_task(size, size, difficulty, seed) for seed in range(n)]


def shortest_path(task: MazeTask, start: int, goal: int) -> list[int]:
    """Cells of one shortest path, choosing the lowest-index neighbour at each step."""
    sd = shortest_distances(task)
    path = [start]
    while path[-1] != goal:
        here = path[-1]
        nxt = [int(n) for n in task.moves[here] if sd[n, goal] == sd[here, goal] - 1]
        path.append(min(nxt))
    return path


def oracle_path(task: MazeTask, stride: int = 3, gamma: float = 0.99, noise: float = 0.0):
    """Checkpoints every ``stride`` cells along a shortest spawn-to-goal path.

    Returns ``(values, discounts)`` for the consecutive edges under the optimal
    goal-conditioned policies, computed exactly by the oracle.
    """
    cells = shortest_path(task, task.index(task.eval_spawn), task.goal_index)
    marks = cells[::stride]
    if marks[-1] != task.goal_index:
        marks.append(task.goal_index)
    v, g, _ = edge_matrices(task, optimal_policies(task, noise=noise), gamma, noise)
    pairs = list(zip(marks[:-1], marks[1:]))
    return np.array([v[a, b] for a, b in pairs]), np.array([g[a, b] for a, b in pairs])
