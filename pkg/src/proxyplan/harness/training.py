"""Training loop, evaluation protocol and delusion diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..checkpoints import valid_cells
from ..dp_oracle import OracleTables, compute_oracle
from ..estimators import TaskBank, linear_epsilon
from ..gridworld import N_ACTIONS, CellKind, MazeTask, generate_task, step_cap
from ..replay import ReplayBuffer
from .agents import Agent, make_agent
from .config import ExperimentConfig

TRAIN_SET = "train"
EMPTY, GOAL = int(CellKind.EMPTY), int(CellKind.GOAL)


def _seed_ints(rng, n: int) -> list[int]:
    return [int(s) for s in rng.integers(0, 2**63 - 1, size=n)]


def eval_task_sets(config: ExperimentConfig) -> dict[float, list[MazeTask]]:
    """Held-out tasks per difficulty; a function of the master seed only."""
    rng = np.random.default_rng([config.master_seed, 0xE7A1])
    return {
        d: [generate_task(config.width, config.height, d, s)
            for s in _seed_ints(rng, config.eval_tasks_per_difficulty)]
        for d in config.eval_difficulties
    }


def train_tasks(config: ExperimentConfig, seed: int) -> list[MazeTask]:
    rng = np.random.default_rng([config.master_seed, seed, 0x7EA1])
    return [generate_task(config.width, config.height, config.train_difficulty, s)
            for s in _seed_ints(rng, config.num_train_tasks)]


def run_episode(agent: Agent, task_id: int, start: int, rng, epsilon: float = 0.0,
                noise: float = 0.0, record: bool = False, cap: int | None = None):
    """Roll out one episode; returns column arrays of the transitions and the episode state."""
    task = agent.bank.tasks[task_id]
    cap = step_cap(task) if cap is None else cap
    kinds, moves = task.kinds, task.moves
    ep = agent.new_episode(task_id, start, rng, record)
    cols = {k: [] for k in ("pos", "action", "reward", "next_pos", "terminal")}
    pos = start
    for _ in range(cap):
        if epsilon > 0.0 and rng.random() < epsilon:
            action = int(rng.integers(N_ACTIONS))
        else:
            action = agent.act(ep, pos, rng)
        executed = action
        if noise > 0.0 and rng.random() < noise:
            executed = int(rng.integers(N_ACTIONS))
        nxt = int(moves[pos, executed])
        kind = int(kinds[nxt])
        terminal = kind != EMPTY
        for k, v in zip(cols, (pos, action, float(kind == GOAL), nxt, terminal)):
            cols[k].append(v)
        if terminal:
            break
        pos = nxt
        agent.after_step(ep, pos, rng)
    return {k: np.asarray(v) for k, v in cols.items()}, ep


def evaluate(agent: Agent, task_ids: list[int], episodes: int, rng, noise: float = 0.0) -> float:
    """Greedy success rate from the evaluation spawn, cycling through ``task_ids``."""
    if not task_ids:
        raise ValueError("evaluation needs at least one task")
    if episodes < 1:
        raise ValueError("episodes must be positive")
    wins = 0
    with agent.frozen():
        for i in range(episodes):
            tid = task_ids[i % len(task_ids)]
            task = agent.bank.tasks[tid]
            cols, _ = run_episode(agent, tid, task.index(task.eval_spawn), rng, noise=noise)
            wins += bool(len(cols["reward"]) and cols["reward"][-1] > 0)
    return wins / episodes


def build_bank(config: ExperimentConfig, seed: int):
    """Task bank with evaluation tasks registered first, then the fixed training tasks.

    Returns ``(bank, eval_ids, train_ids)``; ``train_ids`` is empty when each
    episode draws a fresh task.
    """
    bank = TaskBank(config.width, config.height)
    eval_ids = {d: [bank.register(t) for t in ts] for d, ts in eval_task_sets(config).items()}
    train_ids = [] if config.num_train_tasks == 0 else [bank.register(t) for t in train_tasks(config, seed)]
    return bank, eval_ids, train_ids


def evaluation_sets(config: ExperimentConfig, eval_ids: dict, train_ids: list[int]) -> dict[str, list[int]]:
    sets = {TRAIN_SET: train_ids[:config.eval_tasks_per_difficulty]} if train_ids else {}
    sets.update({f"{d:g}": ids for d, ids in eval_ids.items()})
    return sets


@dataclass
class RunResult:
    records: list[dict]
    agent: Agent
    interactions: int
    episodes: int


class _Collector:
    """One training episode at a time, learning every ``train_every`` interactions."""

    def __init__(self, config: ExperimentConfig, agent: Agent):
        self.config = config
        self.agent = agent
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.since_train = 0

    def episode(self, tid: int, t: int, budget: int, rng) -> int:
        c, task = self.config, self.agent.bank.tasks[tid]
        empty = np.flatnonzero(task.kinds == CellKind.EMPTY)
        start = int(empty[rng.integers(len(empty))])
        eps = linear_epsilon(t, c.total_interactions, c.epsilon_start, c.epsilon_end, c.epsilon_fraction)
        cols, _ = run_episode(self.agent, tid, start, rng, eps, c.noise,
                              cap=min(step_cap(task), budget))
        n = len(cols["pos"])
        self.agent.store(self.buffer, tid, cols["pos"], cols["action"], cols["reward"],
                         cols["next_pos"], cols["terminal"], rng)
        self.since_train += n
        while self.since_train >= c.train_every:
            self.since_train -= c.train_every
            if len(self.buffer) >= c.batch_size:
                self.agent.learn(self.buffer, rng)
        return n


def run_training(config: ExperimentConfig, seed: int, progress=None) -> RunResult:
    """Train one agent for ``total_interactions`` steps, evaluating on a fixed cadence."""
    config.validate()
    rng = np.random.default_rng([config.master_seed, seed])
    bank, eval_ids, train_ids = build_bank(config, seed)
    fresh = config.num_train_tasks == 0
    if fresh:
        task_rng = np.random.default_rng([config.master_seed, seed, 0x7EA1])
    agent = make_agent(config, bank)
    collector = _Collector(config, agent)

    records: list[dict] = []

    def eval_point(t: int):
        erng = np.random.default_rng([config.master_seed, seed, t, 0xE7A1])
        for name, ids in evaluation_sets(config, eval_ids, train_ids if not fresh else []).items():
            rate = evaluate(agent, ids, config.eval_episodes, erng, config.noise)
            records.append({"agent": config.agent, "seed": seed, "interactions": t,
                            "difficulty": name, "success": rate})
        if progress:
            progress(t, records)

    t, n_episodes, next_eval = 0, 0, 0
    total = config.total_interactions
    while t < total:
        if t >= next_eval:
            eval_point(t)
            next_eval += config.eval_interval
        if fresh:
            task = generate_task(config.width, config.height, config.train_difficulty,
                                 int(task_rng.integers(0, 2**63 - 1)))
            tid = bank.register(task)
            train_ids = [tid]
        else:
            tid = train_ids[int(rng.integers(len(train_ids)))]
        t += collector.episode(tid, t, min(total - t, max(1, next_eval - t)), rng)
        n_episodes += 1
    eval_point(t)
    return RunResult(records, agent, t, n_episodes)


def train_on_tasks(config: ExperimentConfig, tasks: list[MazeTask], seed: int) -> tuple[Agent, list[int]]:
    """Train on the given tasks without evaluation; returns the agent and the task ids."""
    config.validate()
    rng = np.random.default_rng([config.master_seed, seed])
    bank = TaskBank(config.width, config.height)
    ids = [bank.register(t) for t in tasks]
    agent = make_agent(config, bank)
    collector = _Collector(config, agent)
    t = 0
    while t < config.total_interactions:
        tid = ids[int(rng.integers(len(ids)))]
        t += collector.episode(tid, t, config.total_interactions - t, rng)
    return agent, ids


@dataclass(frozen=True)
class DelusionReport:
    plans: int
    selection_frequency: float
    delusional_l1: float
    delusional_edges: int
    target_optimality: float


def delusion_metrics(agent: Agent, task_id: int, oracle: OracleTables, probes, rng,
                     threshold: float = 8.0, truncation: float = 15.0) -> DelusionReport:
    """Plan once from each probe cell and score the plans against the oracle.

    A vertex is delusional when the oracle says it cannot be reached from the
    probe cell (lava, or cut off). The L1 error compares estimated distances
    on edges into delusional vertices from reachable ones against the
    truncated true distance.
    """
    dist = oracle.optimal_distance
    goal = agent.bank.tasks[task_id].goal_index
    bad_targets, errors, optimal = 0, [], 0
    probes = list(probes)
    for start in probes:
        ep = agent.new_episode(task_id, int(start), rng, record=True)
        graph, target = ep.history[0]
        pos = graph.positions
        delusional = ~np.isfinite(dist[start, pos])
        delusional[0] = False
        bad_targets += bool(delusional[target])
        true = np.minimum(dist[np.ix_(pos, pos)], truncation)
        sel = np.outer(~delusional, delusional)
        errors.extend(np.abs(graph.D[sel] - true[sel]).tolist())
        t = pos[target]
        optimal += bool(dist[start, t] + dist[t, goal] == dist[start, goal] and dist[start, t] <= threshold)
    n = max(1, len(probes))
    return DelusionReport(len(probes), bad_targets / n,
                          float(np.mean(errors)) if errors else 0.0, len(errors), optimal / n)


def delusion_experiment(config: ExperimentConfig, task: MazeTask, seed: int,
                        repeats: int = 3) -> DelusionReport:
    """Train on ``task`` alone, then plan from every reachable open cell ``repeats`` times."""
    agent, (tid,) = train_on_tasks(config, [task], seed)
    probes = [int(p) for p in valid_cells(task) if p != task.goal_index] * repeats
    with agent.frozen():
        return delusion_metrics(agent, tid, compute_oracle(task, config.gamma_task, config.gamma_intrinsic),
                                probes, np.random.default_rng([config.master_seed, seed, 0xDE1]))
