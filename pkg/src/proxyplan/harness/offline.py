"""Offline estimator training on exhaustive transition data for small fixtures."""
from __future__ import annotations

import numpy as np

from ..estimators import (
    EdgeEstimatorTables, GoalConditionedQ, update_distance, update_policy, update_terminal,
    update_value,
)
from ..gridworld import N_ACTIONS, CellKind, MazeTask


def coverage_batch(task: MazeTask, task_id: int = 0, goals=None) -> dict[str, np.ndarray]:
    """Every (non-terminal cell, action, goal) triple once, with deterministic next cells."""
    live = np.flatnonzero(task.kinds == CellKind.EMPTY)
    goals = np.arange(task.n_cells) if goals is None else np.asarray(goals)
    s, a, g = (x.ravel() for x in np.meshgrid(live, np.arange(N_ACTIONS), goals, indexing="ij"))
    nxt = task.moves[s, a]
    kind = task.kinds[nxt]
    return {
        "task": np.full(len(s), task_id), "pos": s, "action": a,
        "reward": (kind == CellKind.GOAL).astype(float), "next_pos": nxt,
        "terminal": kind != CellKind.EMPTY, "goal": g,
    }


def freeze_policy(q: GoalConditionedQ, task_id: int, policy: np.ndarray) -> GoalConditionedQ:
    """Write a ``[target, cell] -> action`` table into ``q`` as one-hot action values."""
    n = policy.shape[1]
    tgt, cell = (x.ravel() for x in np.meshgrid(np.arange(n), np.arange(n), indexing="ij"))
    keys = q.abstraction.pair_keys(np.full(len(cell), task_id), cell, tgt)
    q.table.mix(keys, np.eye(N_ACTIONS)[policy[tgt, cell]], 1.0)
    q.version += 1
    return q


def fit_edges(tables: EdgeEstimatorTables, q: GoalConditionedQ, batch: dict, sweeps: int,
              alpha: float = 0.1, train_policy: bool = False) -> EdgeEstimatorTables:
    """Repeated full sweeps of the estimator updates over ``batch``."""
    for _ in range(sweeps):
        b = {k: v for k, v in batch.items() if k != "_keys"}
        if train_policy:
            update_policy(q, b, alpha)
        update_value(tables, q, b, alpha)
        update_distance(tables, q, b, alpha)
        update_terminal(tables, b, alpha)
    return tables
