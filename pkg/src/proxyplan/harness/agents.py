"""Agents: the planning variants and the plain goal-conditioned baseline.

An agent owns its learned tables; per-episode control state lives in an
``Episode`` so that evaluation can run alongside training without touching
either the tables or the training episode.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from ..checkpoints import CheckpointSet, Context, generate, kmedoids_prune, sample_positions
from ..estimators import (
    EdgeEstimatorTables, GoalConditionedQ, TaskBank, choose_greedy, estimate_edges,
    load_checkpoint, make_abstractions, save_checkpoint, suppress_delusions, update_distance, update_policy,
    update_terminal, update_value,
)
from ..planner import Event, Mode, ProxyGraph, Replan, graph_from_estimates, plan, rebind, replan_policy
from ..replay import ReplayBuffer, sample_batch
from .config import ExperimentConfig


@dataclass
class Episode:
    task_id: int
    goal: int
    target: int
    since_plan: int = 0
    checkpoints: CheckpointSet | None = None
    graph: ProxyGraph | None = None
    history: list | None = None  # (graph, target vertex) per plan when recording


class Agent:
    name = "agent"

    def __init__(self, config: ExperimentConfig, bank: TaskBank):
        self.config = config
        self.bank = bank
        self._cache: dict | None = None

    def new_episode(self, task_id: int, pos: int, rng, record: bool = False) -> Episode:
        return Episode(task_id, self.bank.tasks[task_id].goal_index, self.bank.tasks[task_id].goal_index,
                       history=[] if record else None)

    def act(self, ep: Episode, pos: int, rng) -> int:
        if self._cache is None:
            return self.q.act(ep.task_id, pos, ep.target, rng)
        key = ("q", ep.task_id)
        rows = self._cache.get(key)
        if rows is None:
            n = self.bank.n_cells
            cell, tgt = np.divmod(np.arange(n * n), n)
            rows = self.q.values(np.full(n * n, ep.task_id), cell, tgt).reshape(n, n, -1)
            self._cache[key] = rows
        return choose_greedy(rows[pos, ep.target], rng)

    @contextmanager
    def frozen(self):
        """Promise that no learning happens inside the block, so lookups may be cached."""
        self._cache = {}
        try:
            yield self
        finally:
            self._cache = None

    def after_step(self, ep: Episode, pos: int, rng) -> None:
        pass

    def store(self, buffer: ReplayBuffer, task_id, pos, action, reward, next_pos, terminal, rng) -> None:
        raise NotImplementedError

    def learn(self, buffer: ReplayBuffer, rng) -> None:
        raise NotImplementedError


class ModelfreeAgent(Agent):
    """Q-learning on the task reward, conditioned on the task goal, no planning and no hindsight."""

    name = "modelfree"

    def __init__(self, config, bank):
        super().__init__(config, bank)
        self.abstraction, self.edge_abstraction = make_abstractions(config.modelfree_abstraction, bank)
        self.q = GoalConditionedQ(self.abstraction, config.gamma_task)

    def store(self, buffer, task_id, pos, action, reward, next_pos, terminal, rng):
        goal = self.bank.tasks[task_id].goal_index
        buffer.add_arrays(task=np.full(len(pos), task_id), pos=pos, action=action, reward=reward,
                          next_pos=next_pos, terminal=terminal, goal=np.full(len(pos), goal))

    def learn(self, buffer, rng):
        update_policy(self.q, sample_batch(buffer, self.config.batch_size, rng), self.config.alpha)

    def save(self, path, extra: dict | None = None):
        save_checkpoint(path, self.q, EdgeEstimatorTables(self.edge_abstraction),
                        {"agent": self.name, **(extra or {})})

    def load(self, path):
        load_checkpoint(path, self.q, EdgeEstimatorTables(self.edge_abstraction))


class SkipperAgent(Agent):
    """Plans over generated checkpoints; ``mode`` is ``once``, ``regen`` or ``goal``.

    In ``goal`` mode the target is always the task goal, so the planning
    machinery is trained but never consulted.
    """

    def __init__(self, config, bank, mode: str):
        super().__init__(config, bank)
        self.mode = mode
        self.name = f"skipper-{mode}"
        policy_ab, edge_ab = make_abstractions(config.abstraction, bank)
        self.q = GoalConditionedQ(policy_ab, config.gamma_intrinsic)
        self.tables = EdgeEstimatorTables(edge_ab, config.gamma_task, config.estimator_prior)

    def edges(self, task_id: int, positions) -> object:
        """Edge estimates among ``positions``; all-pairs per task are cached while frozen."""
        positions = np.asarray(positions, dtype=np.int64)
        if self._cache is None:
            return estimate_edges(self.tables, self.q, task_id, positions)
        full = self._cache.get(("edges", task_id))
        if full is None:
            full = estimate_edges(self.tables, self.q, task_id, np.arange(self.bank.n_cells))
            self._cache[("edges", task_id)] = full
        return full.subset(positions)

    def new_episode(self, task_id, pos, rng, record=False):
        ep = super().new_episode(task_id, pos, rng, record)
        if self.mode != "goal":
            self._rebuild(ep, pos, rng, fresh=True)
        return ep

    def propose(self, task_id: int, rng) -> CheckpointSet:
        """Generate candidates and prune them to ``k_prune`` representatives."""
        c = self.config
        cands = generate(Context(self.bank.tasks[task_id]), c.n_generate, c.include_invalid, rng)
        est = self.edges(task_id, cands.positions)
        return kmedoids_prune(cands, est.kmedoids_distance, c.k_prune, rng)

    def _rebuild(self, ep: Episode, pos: int, rng, fresh: bool) -> None:
        if fresh or ep.checkpoints is None:
            ep.checkpoints = self.propose(ep.task_id, rng)
        positions = [pos] + [p for p in ep.checkpoints.positions if p != pos]
        graph = graph_from_estimates(np.asarray(positions), self.edges(ep.task_id, positions),
                                     self.config.edge_threshold)
        self._select(ep, graph)

    def _select(self, ep: Episode, graph: ProxyGraph) -> None:
        p = plan(graph, self.config.vi_iterations)
        ep.graph = graph
        ep.target = int(graph.positions[p.target])
        ep.since_plan = 0
        if ep.history is not None:
            ep.history.append((graph, p.target))

    def after_step(self, ep, pos, rng):
        if self.mode == "goal":
            return
        ep.since_plan += 1
        if pos == ep.target:
            event = Event.CHECKPOINT_REACHED
        elif ep.since_plan >= self.config.replan_interval:
            event = Event.TIMEOUT
        else:
            return
        if replan_policy(Mode(self.mode), event) is Replan.REBUILD:
            self._rebuild(ep, pos, rng, fresh=True)
            return
        graph = rebind(ep.graph, pos)
        if graph is None:
            self._rebuild(ep, pos, rng, fresh=False)
        else:
            self._select(ep, graph)

    def store(self, buffer, task_id, pos, action, reward, next_pos, terminal, rng):
        """Hindsight samples, each transition once with the task goal, and a fatal step with visited goals.

        A death has no future, so future-strategy relabelling only pairs it
        with the cell it died in. Under action noise, a step into lava that
        happens to slip survives and is relabelled with ordinary goals, which
        would make stepping into lava look safe. Pairing the fatal step with
        ``her_k`` cells visited earlier in the episode restores the balance.
        """
        k = self.config.her_k
        buffer.add_episode(task_id, pos, action, reward, next_pos, terminal, k, rng)
        n = len(pos)
        goal = self.bank.tasks[task_id].goal_index
        buffer.add_arrays(task=np.full(n, task_id), pos=pos, action=action, reward=reward,
                          next_pos=next_pos, terminal=terminal, goal=np.full(n, goal))
        if n > 1 and terminal[-1] and reward[-1] <= 0:
            goals = np.asarray(pos)[rng.integers(n, size=k)]
            buffer.add_arrays(task=np.full(k, task_id), pos=np.full(k, pos[-1]),
                              action=np.full(k, action[-1]), reward=np.zeros(k),
                              next_pos=np.full(k, next_pos[-1]), terminal=np.ones(k, dtype=bool),
                              goal=goals)

    def generated_targets(self, task_ids, rng) -> np.ndarray:
        """One freshly generated checkpoint cell per sample, from that sample's maze."""
        task_ids = np.asarray(task_ids)
        out = np.empty(len(task_ids), dtype=np.int64)
        for t in np.unique(task_ids):
            sel = task_ids == t
            out[sel] = sample_positions(self.bank.tasks[int(t)], int(sel.sum()),
                                        self.config.include_invalid, rng)
        return out

    def learn(self, buffer, rng):
        c = self.config
        batch = sample_batch(buffer, c.batch_size, rng)
        update_policy(self.q, batch, c.alpha)
        update_value(self.tables, self.q, batch, c.alpha)
        update_distance(self.tables, self.q, batch, c.alpha)
        update_terminal(self.tables, batch, c.alpha)
        if c.delusion_suppression:
            suppress_delusions(self.tables, self.q, batch, self.generated_targets, rng,
                               c.alpha, c.suppression_scale)

    def save(self, path, extra: dict | None = None):
        save_checkpoint(path, self.q, self.tables, {"agent": self.name, **(extra or {})})

    def load(self, path):
        load_checkpoint(path, self.q, self.tables)


def make_agent(config: ExperimentConfig, bank: TaskBank) -> Agent:
    if config.agent == "modelfree":
        return ModelfreeAgent(config, bank)
    return SkipperAgent(config, bank, config.agent.split("-", 1)[1])
