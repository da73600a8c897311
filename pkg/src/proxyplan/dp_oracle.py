"""Exact dynamic-programming ground truth for a single maze.

Every quantity here is computed from the known dynamics, never from
experience: all-pairs shortest paths, optimal goal-reaching policies, and the
exact cumulative reward / discount / truncated distance of any tabular
goal-conditioned policy between any two cells. Policies are integer arrays of
shape ``(n_cells,)`` (one target) or ``(n_cells, n_cells)`` indexed
``[target, cell]``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .distributions import D_MAX
from .gridworld import N_ACTIONS, CellKind, MazeTask, step_cap

DIRECT_SOLVE_MAX_STATES = 200
RESIDUAL_TOL = 1e-10
MAX_ITERATIONS = 200_000
TIE_TOL = 1e-10


class ConvergenceError(RuntimeError):
    pass


def shortest_distances(task: MazeTask) -> np.ndarray:
    """All-pairs BFS step counts; ``inf`` where unreachable.

    Paths run through empty cells only. Lava is impassable and the goal can
    only be the last cell of a path. Terminal sources reach only themselves.
    """
    n = task.n_cells
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    kinds, moves = task.kinds, task.moves
    for src in np.flatnonzero(kinds == CellKind.EMPTY):
        row = dist[src]
        queue = deque([src])
        while queue:
            c = queue.popleft()
            for nb in moves[c]:
                if np.isinf(row[nb]) and kinds[nb] != CellKind.LAVA:
                    row[nb] = row[c] + 1
                    if kinds[nb] == CellKind.EMPTY:
                        queue.append(nb)
    return dist


def policy_matrix(task: MazeTask, actions: np.ndarray, noise: float) -> np.ndarray:
    """Cell-to-cell transition matrix of a deterministic per-cell action choice."""
    n = task.n_cells
    m = np.zeros((n, n))
    rows = np.arange(n)
    m[rows, task.moves[rows, actions]] += 1.0 - noise
    if noise > 0:
        for b in range(N_ACTIONS):
            m[rows, task.moves[:, b]] += noise / N_ACTIONS
    return m


def _greedy(q: np.ndarray, rng=None) -> np.ndarray:
    best = q.max(axis=-1, keepdims=True)
    ties = q >= best - TIE_TOL
    if rng is None:
        return ties.argmax(axis=-1)
    noise = rng.random(q.shape)
    return np.where(ties, noise, -1.0).argmax(axis=-1)


def optimal_goal_values(task: MazeTask, gamma: float = 0.95, noise: float = 0.0) -> np.ndarray:
    """Optimal action values ``Q[target, cell, action]`` for the reach-the-target objective.

    Reward 1 on entering the target; any other terminal cell ends the episode
    with nothing. A lava target cannot be arrived at, only died in.
    """
    n = task.n_cells
    cont = (task.kinds == CellKind.EMPTY)[None, :] & ~np.eye(n, dtype=bool)  # [target, s']
    hit = np.diag((task.kinds != CellKind.LAVA).astype(float))
    v = np.zeros((n, n))
    for _ in range(MAX_ITERATIONS):
        w = hit + gamma * v * cont  # worth of landing in s' while chasing target
        landed = w[:, task.moves]  # [target, s, executed action]
        q = (1.0 - noise) * landed + noise * landed.mean(axis=-1, keepdims=True)
        v_new = q.max(axis=-1)
        if np.max(np.abs(v_new - v)) < 1e-13:
            return q
        v = v_new
    raise ConvergenceError("goal-conditioned value iteration did not converge")


def optimal_policies(task: MazeTask, gamma: float = 0.95, noise: float = 0.0, rng=None) -> np.ndarray:
    """Optimal goal-conditioned policy ``[target, cell] -> action``.

    Ties go to the lowest action index, or uniformly at random when ``rng`` is given.
    """
    return _greedy(optimal_goal_values(task, gamma, noise), rng)


@dataclass
class PolicyEvaluation:
    value: np.ndarray
    gamma: np.ndarray
    distance: np.ndarray


def _solve(m_cont: np.ndarray, b: np.ndarray, discount: float) -> np.ndarray:
    """Minimal nonnegative solution of ``x = b + discount * m_cont @ x``."""
    n = len(b)
    a = np.eye(n) - discount * m_cont
    if n <= DIRECT_SOLVE_MAX_STATES and np.linalg.cond(a) < 1e12:
        return np.linalg.solve(a, b)
    x = np.zeros_like(b)
    for _ in range(MAX_ITERATIONS):
        x_new = b + discount * m_cont @ x
        if np.max(np.abs(x_new - x)) < RESIDUAL_TOL:
            return x_new
        x = x_new
    raise ConvergenceError("policy evaluation did not converge; check the policy closure")


def _continuation(task: MazeTask, target: int) -> np.ndarray:
    cont = task.kinds == CellKind.EMPTY
    cont = cont.copy()
    cont[target] = False
    return cont


def distance_distribution(task: MazeTask, actions: np.ndarray, target: int,
                          noise: float = 0.0, horizon: int = D_MAX) -> np.ndarray:
    """``pmf[s, t-1] = P(first entry into target at step t)`` for ``t = 1..horizon``."""
    m = policy_matrix(task, actions, noise)
    cont = _continuation(task, target)
    alive = np.eye(task.n_cells)
    alive[~(task.kinds == CellKind.EMPTY)] = 0.0
    pmf = np.zeros((task.n_cells, horizon))
    if task.kinds[target] == CellKind.LAVA:
        return pmf
    for t in range(horizon):
        pmf[:, t] = alive @ m[:, target]
        alive = (alive @ m) * cont[None, :]
    return pmf


def evaluate_policy(task: MazeTask, policy: np.ndarray, goal, gamma: float = 0.99,
                    noise: float = 0.0, horizon: int = D_MAX) -> PolicyEvaluation:
    """Exact edge quantities from every cell to ``goal`` under a fixed policy.

    ``value``: expected discounted task reward collected until the target is
    reached or the episode ends. ``gamma``: ``E[gamma**T * 1{target reached}]``.
    ``distance``: ``E[min(T, horizon)]`` where never reaching counts as ``horizon``.
    Terminal cells are sources of nothing (all three are zero, distance ``horizon``).
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    target = goal if isinstance(goal, (int, np.integer)) else task.index(goal)
    actions = policy[target] if policy.ndim == 2 else policy
    m = policy_matrix(task, actions, noise)
    cont = _continuation(task, target)
    live = task.kinds == CellKind.EMPTY
    m_cont = m * cont[None, :]

    reward = (task.kinds == CellKind.GOAL).astype(float)
    value = _solve(m_cont, m @ reward, gamma)
    arrive = m[:, target] * (task.kinds[target] != CellKind.LAVA)
    disc = _solve(m_cont, gamma * arrive, gamma)
    pmf = distance_distribution(task, actions, target, noise, horizon)
    reached_by = np.cumsum(pmf, axis=1)
    # E[min(T, H)] = sum_{t=0}^{H-1} P(T > t)
    distance = 1.0 + np.sum(1.0 - reached_by[:, :-1], axis=1) if horizon > 1 else np.ones(task.n_cells)
    value[~live] = 0.0
    disc[~live] = 0.0
    distance[~live] = horizon
    return PolicyEvaluation(value, np.clip(disc, 0.0, 1.0), distance)


def edge_matrices(task: MazeTask, policies: np.ndarray, gamma: float = 0.99, noise: float = 0.0,
                  horizon: int = D_MAX):
    """All-pairs ``(value, discount, distance)`` matrices indexed ``[source, target]``."""
    n = task.n_cells
    v, g, d = np.zeros((n, n)), np.zeros((n, n)), np.zeros((n, n))
    for t in range(n):
        ev = evaluate_policy(task, policies, t, gamma, noise, horizon)
        v[:, t], g[:, t], d[:, t] = ev.value, ev.gamma, ev.distance
    return v, g, d


def smdp_plan(values: np.ndarray, discounts: np.ndarray, terminal: np.ndarray,
              tol: float = 1e-12, max_iter: int = 100_000):
    """Converged checkpoint values and greedy next-checkpoint choice over every cell."""
    r, g = values.copy(), discounts.copy()
    np.fill_diagonal(r, 0.0)
    np.fill_diagonal(g, 0.0)
    r[terminal], g[terminal] = 0.0, 0.0
    v = np.zeros(len(r))
    for _ in range(max_iter):
        q = r + g * v[None, :]
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) < tol:
            break
        v = v_new
    q = r + g * v_new[None, :]
    return v_new, q.argmax(axis=1)


def composite_success(task: MazeTask, policies: np.ndarray, next_target: np.ndarray,
                      noise: float = 0.0, start=None, horizon: int | None = None) -> float:
    """Exact probability that the two-level agent enters the goal within ``horizon`` steps.

    The agent follows ``policies[target]`` until it enters ``target``, then
    switches to ``next_target[target]``.
    """
    horizon = step_cap(task) if horizon is None else horizon
    start = task.index(task.eval_spawn if start is None else start)
    goal = task.goal_index
    mats: dict[int, np.ndarray] = {}
    dist = {int(next_target[start]): np.eye(task.n_cells)[start]}
    success = 0.0
    live = task.kinds == CellKind.EMPTY
    for _ in range(horizon):
        nxt: dict[int, np.ndarray] = {}
        for tgt, p in dist.items():
            if tgt not in mats:
                mats[tgt] = policy_matrix(task, policies[tgt], noise)
            q = p @ mats[tgt]
            success += q[goal]
            arrived = q[tgt] if live[tgt] else 0.0
            q = q * live
            if arrived > 0.0:
                q[tgt] = 0.0
                new_tgt = int(next_target[tgt])
                hop = nxt.setdefault(new_tgt, np.zeros(task.n_cells))
                hop[tgt] += arrived
            if q.any():
                acc = nxt.setdefault(tgt, np.zeros(task.n_cells))
                acc += q
        dist = nxt
        if not dist:
            break
    return float(success)


def optimal_success_rate(task: MazeTask, plan_oracle: bool = True, policy_oracle: bool = True,
                         noise: float = 0.0, policy: np.ndarray | None = None,
                         gamma: float = 0.99, gamma_intrinsic: float = 0.95) -> float:
    """Success probability from the eval spawn with DP-optimal components swapped in.

    ``policy_oracle=False`` requires ``policy`` (``[target, cell] -> action``).
    ``plan_oracle=True`` picks checkpoints by SMDP value iteration over every
    cell using the exact edges of that policy; otherwise the task goal is
    always the target.
    """
    if policy_oracle:
        policy = optimal_policies(task, gamma_intrinsic, noise)
    elif policy is None:
        raise ValueError("a learned policy is required when policy_oracle is False")
    if plan_oracle:
        v, g, _ = edge_matrices(task, policy, gamma, noise)
        _, plan = smdp_plan(v, g, task.kinds != CellKind.EMPTY)
    else:
        plan = np.full(task.n_cells, task.goal_index)
    return composite_success(task, policy, plan, noise)


@dataclass
class OracleTables:
    task: MazeTask
    optimal_distance: np.ndarray
    optimal_policy: np.ndarray
    true_value: np.ndarray
    true_gamma: np.ndarray
    true_distance: np.ndarray

    def to_dict(self) -> dict:
        def enc(a):
            return [[None if np.isinf(x) else float(x) for x in row] for row in np.asarray(a, float)]

        return {
            "task": self.task.to_dict(),
            "optimal_distance": enc(self.optimal_distance),
            "optimal_policy": self.optimal_policy.astype(int).tolist(),
            "true_value": enc(self.true_value),
            "true_gamma": enc(self.true_gamma),
            "true_distance": enc(self.true_distance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OracleTables":
        def dec(rows):
            return np.array([[np.inf if x is None else x for x in row] for row in rows], float)

        return cls(
            task=MazeTask.from_dict(d["task"]),
            optimal_distance=dec(d["optimal_distance"]),
            optimal_policy=np.array(d["optimal_policy"], dtype=int),
            true_value=dec(d["true_value"]),
            true_gamma=dec(d["true_gamma"]),
            true_distance=dec(d["true_distance"]),
        )


def compute_oracle(task: MazeTask, gamma: float = 0.99, gamma_intrinsic: float = 0.95,
                   noise: float = 0.0, policy: np.ndarray | None = None) -> OracleTables:
    """Ground-truth tables; edge matrices are for ``policy`` (default: the optimal one)."""
    optimal = optimal_policies(task, gamma_intrinsic, noise)
    used = optimal if policy is None else policy
    v, g, d = edge_matrices(task, used, gamma, noise)
    return OracleTables(task, shortest_distances(task), optimal, v, g, d)
