"""Checkpoint proposal and k-medoids pruning of proposals.

A state splits into a context (the maze, fixed for an episode) and a partial
description (the agent's cell). Proposals fuse the context with sampled
cells. Sampling uniformly over all cells deliberately produces invalid
proposals (lava, or cells cut off from the agent); restricting to the
connected open region does not.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .gridworld import CellKind, EnvState, MazeTask, reachable_from


@dataclass(frozen=True)
class Context:
    task: MazeTask

    def fuse(self, position: int) -> EnvState:
        pos = self.task.position(position)
        return EnvState(pos, bool(self.task.is_terminal(pos)))


@dataclass(frozen=True)
class CheckpointSet:
    positions: tuple[int, ...]
    must_keep: frozenset[int]

    def __post_init__(self):
        if not self.must_keep <= set(self.positions):
            raise ValueError("must_keep must be a subset of the checkpoints")

    def __len__(self) -> int:
        return len(self.positions)

    def states(self, context: Context) -> list[EnvState]:
        return [context.fuse(p) for p in self.positions]


@lru_cache(maxsize=4096)
def valid_cells(task: MazeTask) -> np.ndarray:
    """Open cells connected to the evaluation spawn, plus the goal."""
    seen = reachable_from(task.kinds, task.moves, task.index(task.eval_spawn))
    ok = seen & (task.kinds != CellKind.LAVA)
    cells = np.flatnonzero(ok)
    cells.setflags(write=False)
    return cells


def sample_positions(task: MazeTask, n: int, include_invalid: bool, rng) -> np.ndarray:
    if include_invalid:
        return rng.integers(task.n_cells, size=n)
    pool = valid_cells(task)
    return pool[rng.integers(len(pool), size=n)]


def generate(context: Context, n: int, include_invalid: bool, rng) -> CheckpointSet:
    """``n`` proposals: ``n - 1`` sampled cells and the goal, which is always kept."""
    if n < 2:
        raise ValueError("need at least two checkpoints")
    goal = context.task.goal_index
    sampled = sample_positions(context.task, n - 1, include_invalid, rng)
    return CheckpointSet(tuple(int(p) for p in sampled) + (goal,), frozenset({goal}))


def clustering_cost(dist: np.ndarray, medoids) -> float:
    return float(dist[:, list(medoids)].min(axis=1).sum())


def kmedoids(dist: np.ndarray, k: int, must_keep=(), rng=None):
    """Best-improvement PAM on a symmetrised distance matrix.

    Returns ``(medoids, costs)``: sorted medoid indices and the clustering
    cost after initialisation and after every accepted swap. Members of
    ``must_keep`` are seeded as medoids and never swapped out. Among equally
    good swaps the earliest (medoid slot, then candidate index) wins.
    """
    d = np.minimum(dist, dist.T)
    m = len(d)
    keep = sorted(set(int(i) for i in must_keep))
    if k < len(keep):
        raise ValueError(f"k={k} is smaller than the {len(keep)} states that must be kept")
    if k >= m:
        return np.arange(m), [clustering_cost(d, range(m))]
    is_med = np.zeros(m, dtype=bool)
    is_med[keep] = True
    rest = np.flatnonzero(~is_med)
    medoids = np.array(keep + sorted(rng.choice(rest, k - len(keep), replace=False).tolist()))
    n_keep = len(keep)
    rows = np.arange(m)
    costs = [clustering_cost(d, medoids)]
    while n_keep < k:
        is_med[:] = False
        is_med[medoids] = True
        ins = np.flatnonzero(~is_med)
        to_med = d[:, medoids]
        nearest = to_med.argmin(axis=1)
        best = to_med[rows, nearest]
        to_med[rows, nearest] = np.inf
        second = to_med.min(axis=1)
        # each point's distance to the medoids once slot s is removed
        without = np.where(nearest[:, None] == np.arange(n_keep, k)[None, :], second[:, None], best[:, None])
        swap = np.minimum(without[:, :, None], d[:, None, ins]).sum(axis=0)
        flat = int(swap.argmin())
        s, j = divmod(flat, len(ins))
        if swap[s, j] >= costs[-1] - 1e-9:
            break
        medoids = medoids.copy()
        medoids[n_keep + s] = ins[j]
        costs.append(float(swap[s, j]))
    return np.sort(medoids), costs


def kmedoids_prune(candidates: CheckpointSet, dist: np.ndarray, k: int, rng) -> CheckpointSet:
    """Keep ``k`` representative proposals; duplicates are merged first."""
    pos = np.asarray(candidates.positions)
    _, first = np.unique(pos, return_index=True)
    first = np.sort(first)
    keep = [i for i, p in enumerate(pos[first]) if int(p) in candidates.must_keep]
    chosen, _ = kmedoids(np.asarray(dist)[np.ix_(first, first)], k, keep, rng)
    return CheckpointSet(tuple(int(p) for p in pos[first][chosen]), candidates.must_keep)
