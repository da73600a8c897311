"""Hindsight relabelling and the bounded replay buffer.

The buffer stores samples column-wise in preallocated numpy arrays so that a
training batch is a handful of fancy-indexing operations. Positions are flat
cell indices; ``task`` is an integer handle into the run's task bank.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gridworld import EnvState, MazeTask, Transition


class EmptyBufferError(ValueError):
    pass


@dataclass(frozen=True)
class HindsightSample:
    transition: Transition
    goal: EnvState
    task_id: int


def future_goal_indices(length: int, k: int, rng) -> np.ndarray:
    """For each transition ``t`` draw ``k`` indices uniformly from ``t..length-1``.

    Index ``j`` names the next state of transition ``j``, so each goal is a
    state visited strictly after ``s_t``.
    """
    if length < 1 or k < 1:
        raise ValueError("need a nonempty trajectory and k >= 1")
    t = np.arange(length)[:, None]
    span = (length - t).astype(float)
    return t + np.floor(rng.random((length, k)) * span).astype(np.int64)


def relabel(trajectory: list[Transition], k: int, rng, task_id: int = 0) -> list[HindsightSample]:
    """Future-strategy hindsight relabelling: ``k`` samples per transition."""
    idx = future_goal_indices(len(trajectory), k, rng)
    return [
        HindsightSample(tr, trajectory[j].next_state, task_id)
        for tr, row in zip(trajectory, idx)
        for j in row
    ]


_FIELDS = ("task", "pos", "action", "reward", "next_pos", "terminal", "goal")
_DTYPES = (np.int64, np.int64, np.int64, np.float64, np.int64, np.bool_, np.int64)


class ReplayBuffer:
    """FIFO ring buffer of hindsight samples."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self._cols = {f: np.zeros(capacity, dtype=dt) for f, dt in zip(_FIELDS, _DTYPES)}
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add_arrays(self, **cols) -> None:
        n = len(cols["pos"])
        if n > self.capacity:
            cols = {f: np.asarray(v)[-self.capacity:] for f, v in cols.items()}
            n = self.capacity
        slots = (self._next + np.arange(n)) % self.capacity
        for f in _FIELDS:
            self._cols[f][slots] = cols[f]
        self._next = int((self._next + n) % self.capacity)
        self._size = min(self._size + n, self.capacity)

    def add(self, samples: list[HindsightSample], task: MazeTask) -> None:
        """Append samples whose positions are given as coordinates on ``task``."""
        if not samples:
            return
        tr = [s.transition for s in samples]
        self.add_arrays(
            task=[s.task_id for s in samples],
            pos=[task.index(t.state.position) for t in tr],
            action=[int(t.action) for t in tr],
            reward=[t.reward for t in tr],
            next_pos=[task.index(t.next_state.position) for t in tr],
            terminal=[t.terminal for t in tr],
            goal=[task.index(s.goal.position) for s in samples],
        )

    def add_episode(self, task_id: int, pos, action, reward, next_pos, terminal, k: int, rng) -> None:
        """Relabel one episode (array form) and append its ``k * T`` samples."""
        pos, next_pos = np.asarray(pos), np.asarray(next_pos)
        goals = next_pos[future_goal_indices(len(pos), k, rng)].ravel()
        rep = lambda a: np.repeat(np.asarray(a), k)  # noqa: E731
        self.add_arrays(task=np.full(len(goals), task_id), pos=rep(pos), action=rep(action),
                        reward=rep(reward), next_pos=rep(next_pos), terminal=rep(terminal),
                        goal=goals)

    def oldest_first(self) -> dict[str, np.ndarray]:
        order = (self._next - self._size + np.arange(self._size)) % self.capacity
        return {f: c[order] for f, c in self._cols.items()}

    def take(self, idx: np.ndarray) -> dict[str, np.ndarray]:
        return {f: c[idx] for f, c in self._cols.items()}


def sample_batch(buffer: ReplayBuffer, batch_size: int, rng) -> dict[str, np.ndarray]:
    """Uniform sampling with replacement; returns column arrays."""
    if batch_size == 0:
        return buffer.take(np.zeros(0, dtype=np.int64))
    if len(buffer) == 0:
        raise EmptyBufferError("cannot sample from an empty buffer")
    idx = rng.integers(len(buffer), size=batch_size)
    order = (buffer._next - len(buffer) + idx) % buffer.capacity
    return buffer.take(order)
