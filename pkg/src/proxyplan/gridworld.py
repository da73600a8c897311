"""Lava-maze navigation tasks.

A task is a rectangular grid of empty cells, lava cells and a single goal
cell. Entering lava or the goal ends the episode; entering the goal pays a
reward of 1, everything else pays 0. Cells are addressed either by ``(x, y)``
coordinates or by the flat row-major index ``y * width + x``.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

MAX_RESAMPLES = 1000


class CellKind(IntEnum):
    EMPTY = 0
    LAVA = 1
    GOAL = 2


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


class SpawnMode(IntEnum):
    TRAIN_UNIFORM = 0
    EVAL_OPPOSITE = 1


class GenerationError(RuntimeError):
    pass


N_ACTIONS = len(Action)
DELTAS = ((0, -1), (0, 1), (-1, 0), (1, 0))
_CHARS = {".": CellKind.EMPTY, "L": CellKind.LAVA, "G": CellKind.GOAL}
_SYMBOLS = {v: k for k, v in _CHARS.items()}


@dataclass(frozen=True)
class MazeTask:
    width: int
    height: int
    cells: tuple[str, ...]
    goal: tuple[int, int]
    difficulty: float
    seed: int
    kinds: np.ndarray = field(init=False, repr=False, compare=False)
    moves: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.cells) != self.height or any(len(r) != self.width for r in self.cells):
            raise ValueError("cell rows do not match width/height")
        kinds = np.array([_CHARS[c] for row in self.cells for c in row], dtype=np.int8)
        goals = np.flatnonzero(kinds == CellKind.GOAL)
        if len(goals) != 1 or goals[0] != self.index(self.goal):
            raise ValueError("task must contain exactly one goal cell at `goal`")
        kinds.setflags(write=False)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "moves", _move_table(self.width, self.height))

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @property
    def goal_index(self) -> int:
        return self.index(self.goal)

    @property
    def eval_spawn(self) -> tuple[int, int]:
        # the corner diagonally opposite the goal's corner, reserved empty at generation
        gx, gy = self.goal
        cx = 0 if gx < self.width / 2 else self.width - 1
        cy = 0 if gy < self.height / 2 else self.height - 1
        return (self.width - 1 - cx, self.height - 1 - cy)

    def index(self, pos) -> int:
        x, y = pos
        return int(y) * self.width + int(x)

    def position(self, index: int) -> tuple[int, int]:
        return (int(index) % self.width, int(index) // self.width)

    def kind(self, pos) -> CellKind:
        return CellKind(int(self.kinds[self.index(pos)]))

    def is_terminal(self, pos) -> bool:
        return self.kinds[self.index(pos)] != CellKind.EMPTY

    def in_bounds(self, pos) -> bool:
        x, y = pos
        return 0 <= x < self.width and 0 <= y < self.height

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "difficulty": self.difficulty,
            "seed": self.seed,
            "goal": list(self.goal),
            "cells": list(self.cells),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MazeTask":
        return cls(
            width=int(d["width"]),
            height=int(d["height"]),
            cells=tuple(d["cells"]),
            goal=(int(d["goal"][0]), int(d["goal"][1])),
            difficulty=float(d["difficulty"]),
            seed=int(d["seed"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MazeTask":
        return cls.from_dict(json.loads(text))

    def render(self, state: "EnvState | None" = None) -> str:
        rows = [list(r) for r in self.cells]
        if state is not None:
            x, y = state.position
            rows[y][x] = "A"
        return "\n".join("".join(r) for r in rows)


@dataclass(frozen=True)
class EnvState:
    position: tuple[int, int]
    terminated: bool = False


@dataclass(frozen=True)
class Transition:
    state: EnvState
    action: Action
    reward: float
    next_state: EnvState
    terminal: bool


def _move_table(width: int, height: int) -> np.ndarray:
    """(n_cells, 4) table of the cell index reached by each action; walls block."""
    idx = np.arange(width * height)
    xs, ys = idx % width, idx // width
    table = np.empty((width * height, N_ACTIONS), dtype=np.int64)
    for a, (dx, dy) in enumerate(DELTAS):
        nx = np.clip(xs + dx, 0, width - 1)
        ny = np.clip(ys + dy, 0, height - 1)
        table[:, a] = ny * width + nx
    table.setflags(write=False)
    return table


def reachable_from(kinds: np.ndarray, moves: np.ndarray, source: int) -> np.ndarray:
    """Boolean mask of cells reachable from ``source``.

    Empty cells are expanded; lava and goal cells can be entered but not left.
    """
    seen = np.zeros(len(kinds), dtype=bool)
    seen[source] = True
    if kinds[source] != CellKind.EMPTY:
        return seen
    queue = deque([source])
    while queue:
        c = queue.popleft()
        for n in moves[c]:
            if not seen[n]:
                seen[n] = True
                if kinds[n] == CellKind.EMPTY:
                    queue.append(n)
    return seen


def _has_path(kinds, moves, spawn: int, goal: int) -> bool:
    seen = np.zeros(len(kinds), dtype=bool)
    seen[spawn] = True
    queue = deque([spawn])
    while queue:
        c = queue.popleft()
        if c == goal:
            return True
        for n in moves[c]:
            if not seen[n] and kinds[n] != CellKind.LAVA:
                seen[n] = True
                if n == goal or kinds[n] == CellKind.EMPTY:
                    queue.append(n)
    return False


def _corner_and_goal(width, height, rng):
    corners = [(0, 0), (width - 1, 0), (0, height - 1), (width - 1, height - 1)]
    cx, cy = corners[int(rng.integers(4))]
    half_w, half_h = width // 2, height // 2
    xs = range(0, half_w) if cx == 0 else range(width - half_w, width)
    ys = range(0, half_h) if cy == 0 else range(height - half_h, height)
    perimeter = [(x, y) for y in ys for x in xs if x == cx or y == cy]
    goal = perimeter[int(rng.integers(len(perimeter)))]
    spawn = (width - 1 - cx, height - 1 - cy)
    return goal, spawn


def sample_lava(width: int, height: int, difficulty: float, rng) -> np.ndarray:
    """Independent Bernoulli(difficulty) lava draw for every cell, row-major."""
    return rng.random(width * height) < difficulty


def _carve_corridor(lava, width, spawn, goal, rng):
    (x, y), (gx, gy) = spawn, goal
    lava[y * width + x] = False
    while (x, y) != (gx, gy):
        step_x = x != gx and (y == gy or rng.random() < 0.5)
        if step_x:
            x += 1 if gx > x else -1
        else:
            y += 1 if gy > y else -1
        lava[y * width + x] = False


def generate_task(width: int, height: int, difficulty: float, seed: int) -> MazeTask:
    """Sample a maze with a viable lava-free path from the eval spawn to the goal.

    Grids are redrawn up to ``MAX_RESAMPLES`` times; if none is viable a random
    monotone corridor from spawn to goal is carved through the last draw.
    """
    if width < 4 or height < 4:
        raise ValueError("width and height must be at least 4")
    if not 0.0 <= difficulty < 1.0:
        raise ValueError("difficulty must lie in [0, 1)")
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    goal, spawn = _corner_and_goal(width, height, rng)
    moves = _move_table(width, height)
    g, s = goal[1] * width + goal[0], spawn[1] * width + spawn[0]
    kinds = None
    for _ in range(MAX_RESAMPLES):
        lava = sample_lava(width, height, difficulty, rng)
        lava[[g, s]] = False
        kinds = np.where(lava, CellKind.LAVA, CellKind.EMPTY).astype(np.int8)
        kinds[g] = CellKind.GOAL
        if _has_path(kinds, moves, s, g):
            break
    else:
        _carve_corridor(lava, width, spawn, goal, rng)
        kinds = np.where(lava, CellKind.LAVA, CellKind.EMPTY).astype(np.int8)
        kinds[g] = CellKind.GOAL
        if not _has_path(kinds, moves, s, g):
            raise GenerationError(f"no viable maze for difficulty={difficulty}, seed={seed}")
    rows = tuple(
        "".join(_SYMBOLS[CellKind(k)] for k in kinds[r * width:(r + 1) * width])
        for r in range(height)
    )
    return MazeTask(width, height, rows, goal, float(difficulty), int(seed))


def step(task: MazeTask, state: EnvState, action, noise: float = 0.0, rng=None) -> Transition:
    """Advance one step; with probability ``noise`` a uniformly random action runs instead."""
    if state.terminated:
        raise ValueError("cannot step a terminated state")
    executed = int(action)
    if noise > 0.0 and rng.random() < noise:
        executed = int(rng.integers(N_ACTIONS))
    nxt = int(task.moves[task.index(state.position), executed])
    kind = task.kinds[nxt]
    terminal = bool(kind != CellKind.EMPTY)
    next_state = EnvState(task.position(nxt), terminal)
    return Transition(state, Action(int(action)), 1.0 if kind == CellKind.GOAL else 0.0,
                      next_state, terminal)


def initial_state(task: MazeTask, mode: SpawnMode = SpawnMode.TRAIN_UNIFORM, rng=None) -> EnvState:
    if mode == SpawnMode.EVAL_OPPOSITE:
        return EnvState(task.eval_spawn)
    empty = np.flatnonzero(task.kinds == CellKind.EMPTY)
    return EnvState(task.position(empty[int(rng.integers(len(empty)))]))


def step_cap(task: MazeTask) -> int:
    """Harness truncation length; truncation does not mark the state terminal."""
    return 4 * task.width * task.height
