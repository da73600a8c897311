import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proxyplan.distributions import OVERFLOW, VALUE_SUPPORT, finite_distance_batch
from proxyplan.estimators import (
    BlockTable, EdgeEstimatorTables, GoalConditionedQ, IdentityAbstraction, LocalAbstraction,
    TaskBank, distance_targets, estimate_edge, estimate_edges, linear_epsilon, load_checkpoint,
    q_targets, save_checkpoint, suppress_delusions, update_distance, update_policy,
    update_terminal, update_value, value_targets,
)
from proxyplan.gridworld import CellKind, generate_task
from proxyplan.harness.offline import coverage_batch, fit_edges, freeze_policy
from proxyplan.dp_oracle import edge_matrices, optimal_goal_values, optimal_policies, shortest_distances

from conftest import CORRIDOR, FIXTURES, POCKET


def setup(task, abstraction=IdentityAbstraction):
    bank = TaskBank(task.width, task.height)
    tid = bank.register(task)
    ab = abstraction(bank)
    return tid, GoalConditionedQ(ab), EdgeEstimatorTables(ab)


def one(task, pos, action, goal, tid=0):
    nxt = int(task.moves[pos, action])
    kind = task.kinds[nxt]
    return {"task": np.array([tid]), "pos": np.array([pos]), "action": np.array([action]),
            "reward": np.array([float(kind == CellKind.GOAL)]), "next_pos": np.array([nxt]),
            "terminal": np.array([kind != CellKind.EMPTY]), "goal": np.array([goal])}


def cell(task, x, y):
    return task.index((x, y))


def test_policy_targets():
    tid, q, _ = setup(CORRIDOR)
    reach_goal = one(CORRIDOR, cell(CORRIDOR, 1, 3), 2, CORRIDOR.goal_index)
    assert q_targets(q, reach_goal)[0] == 1.0
    into_lava = one(CORRIDOR, cell(CORRIDOR, 1, 0), 1, cell(CORRIDOR, 3, 3))
    assert q_targets(q, into_lava)[0] == 0.0
    update_policy(q, reach_goal, 0.5)
    assert q.values([0], [cell(CORRIDOR, 1, 3)], [CORRIDOR.goal_index])[0, 2] == pytest.approx(0.5)


def test_policy_alpha_checked():
    tid, q, _ = setup(CORRIDOR)
    with pytest.raises(ValueError):
        update_policy(q, one(CORRIDOR, 4, 0, 0), 0.0)


def test_q_learning_recovers_optimal_policy():
    task = generate_task(4, 4, 0.25, 2)
    tid, q, _ = setup(task)
    full = coverage_batch(task, tid)
    rng = np.random.default_rng(0)
    for _ in range(1600):  # about 1e5 single-sample updates from uniform behaviour data
        pick = rng.integers(len(full["pos"]), size=64)
        update_policy(q, {k: v[pick] for k, v in full.items()}, 0.1)
    opt = optimal_goal_values(task, 0.95)  # [target, cell, action]
    top = np.sort(opt, axis=-1)
    unique = (top[..., -1] - top[..., -2] > 1e-6) & (top[..., -1] > 0)
    live = task.kinds == CellKind.EMPTY
    tgt, src = np.nonzero(unique & live[None, :] & ~np.eye(task.n_cells, dtype=bool))
    greedy = q.greedy(np.full(len(src), tid), src, tgt)
    assert np.array_equal(greedy, opt[tgt, src].argmax(axis=-1))


def test_value_targets_point_masses():
    tid, q, tables = setup(CORRIDOR)
    t = value_targets(tables, q, one(CORRIDOR, cell(CORRIDOR, 1, 3), 2, CORRIDOR.goal_index))
    assert t[0, -1] == pytest.approx(1.0)
    t = value_targets(tables, q, one(CORRIDOR, cell(CORRIDOR, 1, 3), 0, cell(CORRIDOR, 1, 2)))
    assert t[0, 0] == pytest.approx(1.0)


def test_value_target_bootstraps_scaled_histogram():
    tid, q, tables = setup(CORRIDOR)
    b = one(CORRIDOR, cell(CORRIDOR, 3, 3), 2, CORRIDOR.goal_index)
    nxt = q.abstraction.pair_keys([tid], b["next_pos"], b["goal"])
    uniform = np.full((1, 16), 1 / 16)
    tables.value.mix(nxt, uniform, 1.0, cols=np.array([0]))  # greedy action of an all-zero Q row
    t = value_targets(tables, q, b)[0]
    # the next histogram shrunk by gamma toward zero: same mass, mean times gamma
    assert t.sum() == pytest.approx(1.0)
    assert t @ VALUE_SUPPORT == pytest.approx(0.99 * 0.5)


def test_untrained_edges_look_unreachable():
    tid, q, tables = setup(CORRIDOR)
    est = estimate_edges(tables, q, tid, np.array([0, 1, 2]))
    assert np.all(est.discount == 0) and np.all(est.distance == 15) and np.all(est.value == 0)


def test_distance_targets():
    tid, q, tables = setup(CORRIDOR)
    t = distance_targets(tables, q, one(CORRIDOR, cell(CORRIDOR, 0, 0), 3, cell(CORRIDOR, 1, 0)))
    assert t[0, 0] == 1.0 and t[0].sum() == 1.0
    t = distance_targets(tables, q, one(CORRIDOR, cell(CORRIDOR, 1, 0), 1, cell(CORRIDOR, 3, 3)))
    assert t[0, OVERFLOW] == 1.0


def test_converged_estimates_match_oracle(fixture_task):
    task = fixture_task
    tid, q, tables = setup(task)
    pol = optimal_policies(task)
    freeze_policy(q, tid, pol)
    fit_edges(tables, q, coverage_batch(task, tid), 250)
    v, _, d = edge_matrices(task, pol, 0.99)
    sd = shortest_distances(task)
    src, tgt = np.nonzero((task.kinds == CellKind.EMPTY)[:, None] & np.isfinite(sd)
                          & ~np.eye(task.n_cells, dtype=bool))
    keys = q.abstraction.pair_keys(np.full(len(src), tid), src, tgt)
    rows = np.arange(len(src))
    a = pol[tgt, src]
    vh = tables.value.get(keys)[rows, a] @ VALUE_SUPPORT
    dh = finite_distance_batch(tables.distance.get(keys)[rows, a])
    assert np.max(np.abs(vh - v[src, tgt])) < 0.02
    assert np.max(np.abs(dh - d[src, tgt])) < 0.1


def test_edge_estimates_for_adjacent_cells():
    tid, q, tables = setup(CORRIDOR)
    freeze_policy(q, tid, optimal_policies(CORRIDOR))
    fit_edges(tables, q, coverage_batch(CORRIDOR, tid), 250)
    v, g, d, term = estimate_edge(tables, q, tid, cell(CORRIDOR, 0, 0), cell(CORRIDOR, 1, 0))
    assert g == pytest.approx(0.99, abs=1e-6) and d == pytest.approx(1.0, abs=1e-6)
    assert v == pytest.approx(0.0, abs=1e-6) and term == pytest.approx(0.0, abs=1e-6)


def test_doomed_policy_has_zero_discount():
    tid, q, tables = setup(CORRIDOR)
    freeze_policy(q, tid, np.ones((16, 16), dtype=int))  # always DOWN
    fit_edges(tables, q, coverage_batch(CORRIDOR, tid), 200)
    _, g, d, _ = estimate_edge(tables, q, tid, cell(CORRIDOR, 1, 0), cell(CORRIDOR, 3, 3))
    assert g == pytest.approx(0.0, abs=1e-9) and d == pytest.approx(15.0)


def test_terminal_classifier():
    tid, q, tables = setup(CORRIDOR)
    batch = coverage_batch(CORRIDOR, tid)
    for _ in range(150):
        update_terminal(tables, batch, 0.1)
    prob = tables.terminal.get(q.abstraction.cell_keys(np.full(16, tid), np.arange(16)))
    assert np.allclose(prob, CORRIDOR.kinds != CellKind.EMPTY, atol=1e-3)


def test_generated_lava_target_is_never_reached():
    tid, q, tables = setup(CORRIDOR)
    lava = cell(CORRIDOR, 1, 1)
    b = one(CORRIDOR, cell(CORRIDOR, 1, 0), 1, lava)  # steps straight into it
    assert q_targets(q, b)[0] == 0.0
    for _ in range(200):
        suppress_delusions(tables, q, b, lambda t, r: np.full(len(t), lava), None, 0.4, 0.25)
    key = q.abstraction.pair_keys([tid], [b["pos"][0]], [lava])
    assert tables.distance.get(key)[0, 1, OVERFLOW] == pytest.approx(1.0, abs=1e-6)


def test_generated_target_bootstraps_through_terminal_to_overflow():
    tid, q, tables = setup(CORRIDOR)
    b = one(CORRIDOR, cell(CORRIDOR, 1, 0), 1, cell(CORRIDOR, 0, 0))
    for _ in range(200):
        suppress_delusions(tables, q, b, lambda t, r: np.full(len(t), cell(CORRIDOR, 3, 3)), None, 0.4, 0.25)
    key = q.abstraction.pair_keys([tid], [b["pos"][0]], [cell(CORRIDOR, 3, 3)])
    assert tables.distance.get(key)[0, 1, OVERFLOW] == pytest.approx(1.0, abs=1e-6)


def test_suppression_drives_unreachable_discount_to_zero():
    task = POCKET
    tid, q, tables = setup(task)
    freeze_policy(q, tid, optimal_policies(task))
    centre = cell(task, 2, 2)
    batch = coverage_batch(task, tid, goals=[centre])
    outside = np.flatnonzero(batch["pos"] != centre)
    batch = {k: v[outside] for k, v in batch.items()}
    # a delusion: every cell believes the sealed centre is two steps away
    keys = q.abstraction.pair_keys(batch["task"], batch["pos"], batch["goal"])
    two = np.zeros((len(keys), 4, 16))
    two[:, :, 1] = 1.0
    tables.distance.mix(keys, two, 1.0)
    before = estimate_edges(tables, q, tid, np.array([0, centre])).discount[0, 1]
    for _ in range(100):
        suppress_delusions(tables, q, batch, lambda t, r: np.full(len(t), centre), None, 0.5, 1.0)
    live = np.flatnonzero((task.kinds == CellKind.EMPTY) & (np.arange(task.n_cells) != centre))
    est = estimate_edges(tables, q, tid, np.r_[live, centre])
    assert before > 0.3
    assert np.all(est.discount[:-1, -1] < 0.01)


def test_block_table_duplicates_stay_valid():
    t = BlockTable(8, np.full(4, 0.25))
    keys = np.zeros(30, dtype=np.int64)
    targets = np.tile([1.0, 0.0, 0.0, 0.0], (30, 1))
    t.mix(keys, targets, 0.1)
    row = t.get([0])[0]
    assert row.sum() == pytest.approx(1.0) and np.all(row >= 0)
    assert row[0] == pytest.approx(1.0)  # 30 shared steps of 1/30 land exactly on the target
    assert np.allclose(t.get([9, 17]), 0.25)  # untouched blocks read the initial row


def test_block_table_across_blocks():
    t = BlockTable(4, np.zeros(()))
    t.mix(np.array([1, 6, 13]), np.ones(3), 1.0)
    assert t.get(np.array([13, 1, 2, 6])).tolist() == [1.0, 1.0, 0.0, 1.0]
    assert sorted(t.blocks) == [0, 1, 3]


@settings(max_examples=50, deadline=None)
@given(step=st.integers(0, 10_000), total=st.integers(1, 10_000))
def test_epsilon_schedule(step, total):
    e, e_next = linear_epsilon(step, total), linear_epsilon(step + 1, total)
    assert 0.01 <= e <= 1.0 and e_next <= e
    assert linear_epsilon(0, total) == 1.0
    assert linear_epsilon(total, total) == pytest.approx(0.01)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_discount_estimates_bounded(seed):
    rng = np.random.default_rng(seed)
    task = generate_task(5, 5, 0.3, seed)
    tid, q, tables = setup(task, LocalAbstraction)
    full = coverage_batch(task, tid)
    for _ in range(5):
        pick = rng.integers(len(full["pos"]), size=64)
        b = {k: v[pick] for k, v in full.items()}
        update_policy(q, b)
        update_value(tables, q, b)
        update_distance(tables, q, b)
    est = estimate_edges(tables, q, tid, rng.choice(25, 6, replace=False))
    assert np.all((est.discount >= 0) & (est.discount <= 1))
    assert np.all((est.distance >= 1) & (est.distance <= 15))


def test_local_keys_shared_across_mazes():
    a = generate_task(8, 8, 0.3, 1)
    b = generate_task(8, 8, 0.3, 2)
    bank = TaskBank(8, 8)
    ia, ib = bank.register(a), bank.register(b)
    ab = LocalAbstraction(bank)
    # a cell and target with identical surroundings and offset share a key
    va, vb = bank.views[ia], bank.views[ib]
    for p in range(64):
        same = np.flatnonzero((vb == va[p]) & (b.kinds == CellKind.EMPTY))
        if a.kinds[p] == CellKind.EMPTY and len(same):
            break
    x, y = p % 8, p // 8
    x2, y2 = same[0] % 8, same[0] // 8
    dx = 1 if max(x, x2) < 7 else -1
    ka = ab.pair_keys([ia], [p], [y * 8 + x + dx])
    kb = ab.pair_keys([ib], [same[0]], [y2 * 8 + x2 + dx])
    lava_a = a.kinds[y * 8 + x + dx] == CellKind.LAVA
    lava_b = b.kinds[y2 * 8 + x2 + dx] == CellKind.LAVA
    assert (ka[0] == kb[0]) == (lava_a == lava_b)
    assert bank.register(a) == ia


def test_checkpoint_round_trip(tmp_path):
    tid, q, tables = setup(CORRIDOR)
    freeze_policy(q, tid, optimal_policies(CORRIDOR))
    fit_edges(tables, q, coverage_batch(CORRIDOR, tid), 5)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, q, tables, {"agent": "x"})
    _, q2, t2 = setup(CORRIDOR)
    doc = load_checkpoint(path, q2, t2)
    assert doc["agent"] == "x"
    cells = np.arange(16)
    e1 = estimate_edges(tables, q, tid, cells)
    e2 = estimate_edges(t2, q2, tid, cells)
    assert np.array_equal(e1.value, e2.value) and np.array_equal(e1.discount, e2.discount)


def test_checkpoint_version_checked(tmp_path):
    tid, q, tables = setup(CORRIDOR)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, q, tables)
    text = path.read_text().replace('"version": 1', '"version": 99', 1)
    path.write_text(text)
    with pytest.raises(ValueError):
        load_checkpoint(path, q, tables)
