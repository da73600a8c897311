import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proxyplan.gridworld import (
    Action, CellKind, EnvState, MazeTask, SpawnMode, generate_task, initial_state, sample_lava,
    step, step_cap,
)
from proxyplan.dp_oracle import shortest_distances

from conftest import CORRIDOR, maze


def test_generate_12x12_has_path_and_one_goal():
    task = generate_task(12, 12, 0.4, 7)
    assert (task.width, task.height) == (12, 12)
    assert (task.kinds == CellKind.GOAL).sum() == 1
    assert task.kind(task.goal) == CellKind.GOAL
    d = shortest_distances(task)
    assert np.isfinite(d[task.index(task.eval_spawn), task.goal_index])


def test_generated_density_near_difficulty():
    # conditioning on a viable path thins the lava a little below the nominal rate
    dens = [(generate_task(12, 12, 0.4, s).kinds == CellKind.LAVA).sum() / 142 for s in range(200)]
    assert 0.35 < np.mean(dens) <= 0.4


def test_sample_lava_is_bernoulli(rng):
    draws = np.stack([sample_lava(8, 8, 0.4, rng) for _ in range(2000)])
    p = draws.mean()
    assert abs(p - 0.4) < 3 * np.sqrt(0.4 * 0.6 / draws.size)


def test_zero_difficulty_is_empty():
    for seed in range(5):
        task = generate_task(4, 4, 0.0, seed)
        assert (task.kinds == CellKind.EMPTY).sum() == 15
        assert (task.kinds == CellKind.GOAL).sum() == 1


def test_hard_task_accepted_only_with_path():
    task = generate_task(8, 8, 0.55, 3)
    assert np.isfinite(shortest_distances(task)[task.index(task.eval_spawn), task.goal_index])


@pytest.mark.parametrize("bad", [(3, 8, 0.1), (8, 3, 0.1), (8, 8, 1.0), (8, 8, -0.1)])
def test_generate_rejects_bad_arguments(bad):
    with pytest.raises(ValueError):
        generate_task(*bad, seed=0)


def test_generate_is_pure():
    a, b = generate_task(8, 8, 0.4, 99), generate_task(8, 8, 0.4, 99)
    assert a == b
    assert generate_task(8, 8, 0.4, 100) != a


def test_json_round_trip():
    task = generate_task(8, 6, 0.3, 5)
    text = task.to_json()
    assert MazeTask.from_json(text) == task
    d = json.loads(text)
    assert set(d) == {"width", "height", "difficulty", "seed", "goal", "cells"}
    assert all(set(r) <= set(".LG") for r in d["cells"])


def test_malformed_task_rejected():
    with pytest.raises(ValueError):
        MazeTask(4, 4, ("....",) * 4, (0, 0), 0.0, 0)


def test_step_into_empty_and_goal():
    s = EnvState((1, 3))
    tr = step(CORRIDOR, s, Action.UP)
    assert tr.next_state.position == (1, 2) and tr.reward == 0 and not tr.terminal
    tr = step(CORRIDOR, s, Action.LEFT)
    assert tr.next_state.position == (0, 3) and tr.reward == 1 and tr.terminal
    assert tr.next_state.terminated


def test_step_into_lava_and_wall():
    tr = step(CORRIDOR, EnvState((1, 0)), Action.DOWN)
    assert tr.terminal and tr.reward == 0
    tr = step(CORRIDOR, EnvState((0, 0)), Action.UP)
    assert tr.next_state.position == (0, 0) and not tr.terminal


def test_step_terminated_state_is_violation():
    with pytest.raises(ValueError):
        step(CORRIDOR, EnvState((0, 3), True), Action.UP)


def test_noise_executed_action_frequencies(rng):
    open_maze = maze("G....", ".....", ".....", ".....", ".....")
    centre = EnvState((2, 2))
    where = {(2, 1): 0, (2, 3): 1, (1, 2): 2, (3, 2): 3}
    n = 40_000
    counts = np.zeros(4)
    for _ in range(n):
        counts[where[step(open_maze, centre, Action.RIGHT, 0.1, rng).next_state.position]] += 1
    expected = np.array([0.025, 0.025, 0.025, 0.925])
    sigma = np.sqrt(expected * (1 - expected) / n)
    assert np.all(np.abs(counts / n - expected) < 3 * sigma)


def test_eval_spawn_is_fixed_empty_and_connected():
    for seed in range(20):
        task = generate_task(8, 8, 0.4, seed)
        a = initial_state(task, SpawnMode.EVAL_OPPOSITE)
        assert a == initial_state(task, SpawnMode.EVAL_OPPOSITE)
        assert task.kind(a.position) == CellKind.EMPTY
        gx, gy = task.goal
        ax, ay = a.position
        # opposite corner: the spawn and goal lie in different halves on both axes
        assert (ax < 4) != (gx < 4) and (ay < 4) != (gy < 4)
        assert np.isfinite(shortest_distances(task)[task.index(a.position), task.goal_index])


def test_train_spawn_uniform(rng):
    n = 10_000
    cells = np.flatnonzero(CORRIDOR.kinds == CellKind.EMPTY)
    counts = {int(c): 0 for c in cells}
    for _ in range(n):
        counts[CORRIDOR.index(initial_state(CORRIDOR, SpawnMode.TRAIN_UNIFORM, rng).position)] += 1
    obs = np.array(list(counts.values()))
    chi2 = ((obs - n / len(cells)) ** 2 / (n / len(cells))).sum()
    assert chi2 < 31.3  # 99.5% quantile of chi-squared with 12 degrees of freedom


def test_step_cap():
    assert step_cap(CORRIDOR) == 64


def test_render_marks_agent():
    assert CORRIDOR.render(EnvState((3, 3))).splitlines()[3] == "G..A"


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), d=st.floats(0.0, 0.6), a=st.integers(0, 3), cell=st.integers(0, 35))
def test_reward_and_terminal_semantics(seed, d, a, cell):
    task = generate_task(6, 6, d, seed)
    if task.kinds[cell] != CellKind.EMPTY:
        return
    tr = step(task, EnvState(task.position(cell)), a)
    kind = task.kind(tr.next_state.position)
    assert tr.reward == (1.0 if kind == CellKind.GOAL else 0.0)
    assert tr.terminal == (kind != CellKind.EMPTY)
    assert tr == step(task, EnvState(task.position(cell)), a)
