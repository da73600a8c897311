"""Tabular goal-conditioned policy and distributional edge estimators.

All learned quantities are tables indexed by an integer key produced by a
state abstraction from ``(task, cell, target cell)``:

* ``IdentityAbstraction`` keys on the exact maze, cell and target. It is exact
  on a fixed set of tasks and knows nothing about unseen mazes.
* ``LocalAbstraction`` keys on what is visible around the agent (the content
  of its four neighbours), the offset to the target and the kind of the
  target cell. Unseen mazes share keys with training mazes, which is what
  lets the agent act on them at all.

Tables are updated toward bootstrapped targets by mixing,
``new = (1 - alpha) * old + alpha * target``, applied to whole batches.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    D_MAX, N_BINS, OVERFLOW, VALUE_SUPPORT, finite_distance_batch, project_batch,
    shift_distances, transplant_batch,
)
from .gridworld import DELTAS, N_ACTIONS, CellKind, MazeTask

CHECKPOINT_VERSION = 1
KMEDOIDS_OVERFLOW = 2 * D_MAX
TERMINAL_THRESHOLD = 0.5
_LAVA = int(CellKind.LAVA)


class TaskBank:
    """Integer handles for the tasks of one run; all share a grid size."""

    def __init__(self, width: int, height: int):
        self.width, self.height = width, height
        self.n_cells = width * height
        self.tasks: list[MazeTask] = []
        self._ids: dict[tuple, int] = {}
        self.kinds = np.zeros((8, self.n_cells), dtype=np.int8)
        self.views = np.zeros((8, self.n_cells), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.tasks)

    def register(self, task: MazeTask) -> int:
        if (task.width, task.height) != (self.width, self.height):
            raise ValueError("task grid size does not match the bank")
        key = (task.cells, task.goal)
        if key in self._ids:
            return self._ids[key]
        i = len(self.tasks)
        if i == len(self.kinds):
            self.kinds = np.concatenate([self.kinds, np.zeros_like(self.kinds)])
            self.views = np.concatenate([self.views, np.zeros_like(self.views)])
        self.kinds[i] = task.kinds
        self.views[i] = neighbour_views(task)
        self.tasks.append(task)
        self._ids[key] = i
        return i


def neighbour_views(task: MazeTask) -> np.ndarray:
    """Base-3 code of the four neighbours of each cell: 0 open, 1 lava, 2 wall."""
    idx = np.arange(task.n_cells)
    xs, ys = idx % task.width, idx // task.width
    code = np.zeros(task.n_cells, dtype=np.int64)
    for i, (dx, dy) in enumerate(DELTAS):
        nx, ny = xs + dx, ys + dy
        wall = (nx < 0) | (nx >= task.width) | (ny < 0) | (ny >= task.height)
        nb = np.clip(ny, 0, task.height - 1) * task.width + np.clip(nx, 0, task.width - 1)
        lava = task.kinds[nb] == _LAVA
        code += np.where(wall, 2, np.where(lava, 1, 0)) * 3 ** i
    return code


class IdentityAbstraction:
    name = "identity"

    def __init__(self, bank: TaskBank):
        self.bank = bank
        p = bank.n_cells
        self.pair_block = p * p
        self.cell_block = p

    def pair_keys(self, task, pos, goal) -> np.ndarray:
        p = self.bank.n_cells
        return (np.asarray(task) * p + pos) * p + goal

    def cell_keys(self, task, pos) -> np.ndarray:
        return np.asarray(task) * self.bank.n_cells + pos


class LocalAbstraction:
    """Neighbour view and target offset clipped to ``reach`` per axis.

    With ``target_kind`` the key also holds the kind of the target cell. The
    edge estimators need it (only edges into the goal carry reward); the
    policy does not, since reaching a cell does not depend on what it is.
    """

    name = "local"

    def __init__(self, bank: TaskBank, reach: int = 4, target_kind: bool = True):
        self.bank = bank
        self.reach = reach
        self.span = 2 * reach + 1
        self.kinds = len(CellKind) if target_kind else 1
        self.pair_block = 3 ** 4 * self.span ** 2 * self.kinds  # small enough for a single block
        self.cell_block = len(CellKind)

    def pair_keys(self, task, pos, goal) -> np.ndarray:
        b, w, r = self.bank, self.bank.width, self.reach
        task, pos, goal = np.asarray(task), np.asarray(pos), np.asarray(goal)
        dx = np.minimum(np.maximum(goal % w - pos % w, -r), r) + r
        dy = np.minimum(np.maximum(goal // w - pos // w, -r), r) + r
        key = (b.views[task, pos] * self.span + dy) * self.span + dx
        if self.kinds == 1:
            return key
        return key * self.kinds + b.kinds[task, goal]

    def cell_keys(self, task, pos) -> np.ndarray:
        return self.bank.kinds[np.asarray(task), np.asarray(pos)].astype(np.int64)


ABSTRACTIONS = {"identity": IdentityAbstraction, "local": LocalAbstraction}


def make_abstractions(name: str, bank: TaskBank):
    """``(policy, estimator)`` abstractions; the policy ignores the target's kind."""
    if name == "local":
        return LocalAbstraction(bank, target_kind=False), LocalAbstraction(bank)
    ab = ABSTRACTIONS[name](bank)
    return ab, ab


class BlockTable:
    """Sparse table of fixed-shape rows, allocated one block of keys at a time."""

    def __init__(self, block_size: int, init: np.ndarray):
        self.block_size = int(block_size)
        self.init = np.asarray(init, dtype=float)
        self.blocks: dict[int, np.ndarray] = {}

    def _block(self, b: int) -> np.ndarray:
        blk = self.blocks.get(b)
        if blk is None:
            blk = np.broadcast_to(self.init, (self.block_size,) + self.init.shape).copy()
            self.blocks[b] = blk
        return blk

    def get(self, keys: np.ndarray) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        bid, off = np.divmod(keys, self.block_size)
        if len(keys) and (bid == bid[0]).all():
            blk = self.blocks.get(int(bid[0]))
            if blk is None:
                return np.broadcast_to(self.init, (len(keys),) + self.init.shape).copy()
            return blk[off]
        out = np.empty((len(keys),) + self.init.shape)
        for b in np.unique(bid):
            sel = bid == b
            blk = self.blocks.get(int(b))
            out[sel] = self.init if blk is None else blk[off[sel]]
        return out

    def mix(self, keys: np.ndarray, targets: np.ndarray, alpha: float, cols=None) -> None:
        """Move rows (or ``row[col]`` entries) toward ``targets`` at rate ``alpha``.

        Repeated keys in one call share the step so no entry overshoots its target.
        """
        keys = np.asarray(keys, dtype=np.int64)
        if len(keys) == 0:
            return
        slot = keys if cols is None else keys * self.init.shape[0] + np.asarray(cols)
        _, inv, counts = np.unique(slot, return_inverse=True, return_counts=True)
        rate = alpha / np.maximum(1.0, alpha * counts[inv])
        bid, off = np.divmod(keys, self.block_size)
        if (bid == bid[0]).all():
            groups = [(int(bid[0]), slice(None))]
        else:
            groups = [(int(b), bid == b) for b in np.unique(bid)]
        for b, sel in groups:
            blk = self._block(b)
            r = rate[sel].reshape((-1,) + (1,) * (targets.ndim - 1))
            if cols is None:
                np.add.at(blk, off[sel], r * (targets[sel] - blk[off[sel]]))
            else:
                c = np.asarray(cols)[sel]
                np.add.at(blk, (off[sel], c), r * (targets[sel] - blk[off[sel], c]))

    def to_dict(self) -> dict:
        return {str(b): blk.tolist() for b, blk in sorted(self.blocks.items())}

    def load_dict(self, d: dict) -> None:
        self.blocks = {int(b): np.array(v, dtype=float) for b, v in d.items()}


def linear_epsilon(step: int, total: int, start: float = 1.0, end: float = 0.01,
                   fraction: float = 0.5) -> float:
    """Linear annealing from ``start`` to ``end`` over the first ``fraction`` of training."""
    horizon = max(1.0, fraction * total)
    return float(end + (start - end) * max(0.0, 1.0 - step / horizon))


PRIORS = ("pessimistic", "uniform")


def initial_histograms(prior: str) -> tuple[np.ndarray, np.ndarray]:
    """Starting ``(value, distance)`` histograms for keys nothing has been learned about.

    ``pessimistic`` treats an untrained edge as worthless and unreachable, so
    untrained keys are pruned from proxy graphs rather than offered as
    shortcuts. ``uniform`` is uninformative: untrained edges look moderately
    close, which is what makes unseen targets delusional.
    """
    if prior == "pessimistic":
        v, d = np.zeros(N_BINS), np.zeros(N_BINS)
        v[0] = d[OVERFLOW] = 1.0
    elif prior == "uniform":
        v = np.full(N_BINS, 1.0 / N_BINS)
        d = np.zeros(N_BINS)
        d[:OVERFLOW] = 1.0 / OVERFLOW
    else:
        raise ValueError(f"prior must be one of {PRIORS}")
    return v, d


@dataclass
class GoalConditionedQ:
    abstraction: object
    gamma: float = 0.95
    table: BlockTable = field(init=False)
    version: int = field(init=False, default=0)

    def __post_init__(self):
        self.table = BlockTable(self.abstraction.pair_block, np.zeros(N_ACTIONS))

    def values(self, task, pos, goal) -> np.ndarray:
        return self.table.get(self.abstraction.pair_keys(task, pos, goal))

    def greedy(self, task, pos, goal) -> np.ndarray:
        """Lowest-index argmax; the deterministic policy the edge estimators evaluate."""
        return self.values(task, pos, goal).argmax(axis=1)

    def act(self, task: int, pos: int, goal: int, rng) -> int:
        return choose_greedy(self.values([task], [pos], [goal])[0], rng)


def choose_greedy(q: np.ndarray, rng) -> int:
    """Greedy action with uniformly random tie-breaking."""
    best = np.flatnonzero(q >= q.max() - 1e-12)
    return int(best[0] if len(best) == 1 else best[rng.integers(len(best))])


@dataclass
class EdgeEstimatorTables:
    abstraction: object
    gamma: float = 0.99
    prior: str = "pessimistic"
    value: BlockTable = field(init=False)
    distance: BlockTable = field(init=False)
    terminal: BlockTable = field(init=False)

    def __post_init__(self):
        a = self.abstraction
        v, d = initial_histograms(self.prior)
        self.value = BlockTable(a.pair_block, np.tile(v, (N_ACTIONS, 1)))
        self.distance = BlockTable(a.pair_block, np.tile(d, (N_ACTIONS, 1)))
        self.terminal = BlockTable(a.cell_block, np.zeros(()))

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "abstraction": self.abstraction.name,
            "gamma": self.gamma,
            "prior": self.prior,
            "value": self.value.to_dict(),
            "distance": self.distance.to_dict(),
            "terminal": self.terminal.to_dict(),
        }

    def load_dict(self, d: dict) -> None:
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported estimator checkpoint version {d.get('version')}")
        if d["abstraction"] != self.abstraction.name:
            raise ValueError("checkpoint was written for a different abstraction")
        if d.get("prior") != self.prior:
            raise ValueError("checkpoint was written with a different estimator prior")
        self.gamma = float(d["gamma"])
        self.value.load_dict(d["value"])
        self.distance.load_dict(d["distance"])
        self.terminal.load_dict(d["terminal"])


def _check_alpha(alpha):
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")


def _batch_keys(abstraction, batch: dict, field: str) -> np.ndarray:
    """Pair keys of ``(field, goal)`` for a batch, memoised on the batch dict."""
    cache = batch.setdefault("_keys", {})
    k = (field, id(abstraction))
    if k not in cache:
        cache[k] = abstraction.pair_keys(batch["task"], batch[field], batch["goal"])
    return cache[k]


def _next_greedy(q: GoalConditionedQ, batch: dict) -> np.ndarray:
    cache = batch.setdefault("_keys", {})
    k = ("greedy", id(q), q.version)
    if k not in cache:
        cache[k] = q.table.get(_batch_keys(q.abstraction, batch, "next_pos")).argmax(axis=1)
    return cache[k]


def _reached(abstraction, batch: dict) -> np.ndarray:
    """The next cell is the target and survivable; entering a lava target is dying, not arriving."""
    hit = batch["next_pos"] == batch["goal"]
    return hit & (abstraction.bank.kinds[batch["task"], batch["next_pos"]] != _LAVA)


def q_targets(q: GoalConditionedQ, batch: dict) -> np.ndarray:
    reached = _reached(q.abstraction, batch)
    done = reached | batch["terminal"]
    nxt = q.table.get(_batch_keys(q.abstraction, batch, "next_pos")).max(axis=1)
    return reached.astype(float) + q.gamma * np.where(done, 0.0, nxt)


def update_policy(q: GoalConditionedQ, batch: dict, alpha: float = 0.1) -> GoalConditionedQ:
    """One tabular Q-learning step on the intrinsic reach-the-target reward."""
    _check_alpha(alpha)
    keys = _batch_keys(q.abstraction, batch, "pos")
    q.table.mix(keys, q_targets(q, batch), alpha, cols=batch["action"])
    q.version += 1
    return q


def _next_rows(table: BlockTable, abstraction, q, batch):
    a = _next_greedy(q, batch)
    rows = table.get(_batch_keys(abstraction, batch, "next_pos"))
    return rows[np.arange(len(a)), a]


def value_targets(tables: EdgeEstimatorTables, q: GoalConditionedQ, batch: dict) -> np.ndarray:
    reward = batch["reward"]
    boot = ~_reached(tables.abstraction, batch) & ~batch["terminal"]
    nxt = _next_rows(tables.value, tables.abstraction, q, batch)
    atoms = reward[:, None] + np.where(boot[:, None], tables.gamma * VALUE_SUPPORT[None, :], 0.0)
    probs = np.where(boot[:, None], nxt, 1.0 / N_BINS)
    return project_batch(atoms, probs, VALUE_SUPPORT)


def update_value(tables: EdgeEstimatorTables, q: GoalConditionedQ, batch: dict,
                 alpha: float = 0.1) -> EdgeEstimatorTables:
    """Distributional policy evaluation of the task reward collected before the target."""
    _check_alpha(alpha)
    keys = _batch_keys(tables.abstraction, batch, "pos")
    tables.value.mix(keys, value_targets(tables, q, batch), alpha, cols=batch["action"])
    return tables


def distance_targets(tables: EdgeEstimatorTables, q: GoalConditionedQ, batch: dict) -> np.ndarray:
    reached = _reached(tables.abstraction, batch)
    dead = batch["terminal"] & ~reached
    out = shift_distances(_next_rows(tables.distance, tables.abstraction, q, batch))
    out[reached] = 0.0
    out[reached, 0] = 1.0
    out[dead] = 0.0
    out[dead, OVERFLOW] = 1.0
    return out


def update_distance(tables: EdgeEstimatorTables, q: GoalConditionedQ, batch: dict,
                    alpha: float = 0.1) -> EdgeEstimatorTables:
    """Distributional evaluation of steps-to-target; dying first means OVERFLOW."""
    _check_alpha(alpha)
    keys = _batch_keys(tables.abstraction, batch, "pos")
    tables.distance.mix(keys, distance_targets(tables, q, batch), alpha, cols=batch["action"])
    return tables


def update_terminal(tables: EdgeEstimatorTables, batch: dict, alpha: float = 0.1) -> EdgeEstimatorTables:
    """Move per-cell terminal probabilities toward observed flags (sources are never terminal)."""
    _check_alpha(alpha)
    a = tables.abstraction
    keys = np.concatenate([a.cell_keys(batch["task"], batch["pos"]),
                           a.cell_keys(batch["task"], batch["next_pos"])])
    flags = np.concatenate([np.zeros(len(batch["pos"])), batch["terminal"].astype(float)])
    tables.terminal.mix(keys, flags, alpha)
    return tables


def suppress_delusions(tables: EdgeEstimatorTables, q: GoalConditionedQ, batch: dict,
                       generator, rng, alpha: float = 0.1, scale: float = 0.25) -> EdgeEstimatorTables:
    """Retrain the distance estimator with generated targets in place of hindsight goals.

    ``generator(task_ids, rng)`` returns one generated target cell per sample.
    Targets that no trajectory can enter are driven to OVERFLOW.
    """
    fake = {k: v for k, v in batch.items() if k != "_keys"}
    fake["goal"] = np.asarray(generator(batch["task"], rng), dtype=np.int64)
    return update_distance(tables, q, fake, alpha * scale)


@dataclass
class EdgeEstimates:
    value: np.ndarray
    discount: np.ndarray
    distance: np.ndarray
    kmedoids_distance: np.ndarray
    terminal: np.ndarray

    def subset(self, idx) -> "EdgeEstimates":
        """Estimates among the entries ``idx`` of the positions these were computed for."""
        sub = np.ix_(idx, idx)
        return EdgeEstimates(self.value[sub], self.discount[sub], self.distance[sub],
                             self.kmedoids_distance[sub], self.terminal[idx])


def estimate_edges(tables: EdgeEstimatorTables, q: GoalConditionedQ, task: int,
                   positions: np.ndarray) -> EdgeEstimates:
    """Read-only all-pairs edge estimates among ``positions`` of one task.

    Entry ``[i, j]`` describes travelling from ``positions[i]`` to ``positions[j]``
    under the greedy policy. Distances count OVERFLOW as ``D_MAX`` (and as
    ``2 * D_MAX`` in the matrix prepared for k-medoids).
    """
    positions = np.asarray(positions, dtype=np.int64)
    m = len(positions)
    src = np.repeat(positions, m)
    dst = np.tile(positions, m)
    tid = np.full(m * m, task)
    keys = tables.abstraction.pair_keys(tid, src, dst)
    qkeys = keys if q.abstraction is tables.abstraction else q.abstraction.pair_keys(tid, src, dst)
    a = q.table.get(qkeys).argmax(axis=1)
    rows = np.arange(m * m)
    vh = tables.value.get(keys)[rows, a]
    dh = tables.distance.get(keys)[rows, a]
    term = tables.terminal.get(tables.abstraction.cell_keys(np.full(m, task), positions))
    return EdgeEstimates(
        value=(vh @ VALUE_SUPPORT).reshape(m, m),
        discount=np.clip(transplant_batch(dh, tables.gamma), 0.0, 1.0).reshape(m, m),
        distance=finite_distance_batch(dh, D_MAX).reshape(m, m),
        kmedoids_distance=finite_distance_batch(dh, KMEDOIDS_OVERFLOW).reshape(m, m),
        terminal=term,
    )


def estimate_edge(tables: EdgeEstimatorTables, q: GoalConditionedQ, task: int, src: int, dst: int):
    """``(value, discount, distance, terminal probability of src)`` for one ordered pair."""
    e = estimate_edges(tables, q, task, np.array([src, dst]))
    return float(e.value[0, 1]), float(e.discount[0, 1]), float(e.distance[0, 1]), float(e.terminal[0])


def save_checkpoint(path, q: GoalConditionedQ, tables: EdgeEstimatorTables, extra: dict | None = None):
    doc = {"version": CHECKPOINT_VERSION, "q_gamma": q.gamma, "q": q.table.to_dict(),
           "edges": tables.to_dict(), **(extra or {})}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path, q: GoalConditionedQ, tables: EdgeEstimatorTables) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    q.gamma = float(doc["q_gamma"])
    q.table.load_dict(doc["q"])
    tables.load_dict(doc["edges"])
    return doc
