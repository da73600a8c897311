"""Proxy-problem graphs over checkpoints and their solution by SMDP value iteration.

Vertex 0 of a graph is always the agent's current cell. ``R[i, j]`` is the
estimated task reward collected travelling from vertex i to vertex j and
``G[i, j]`` the estimated discount accumulated on the way (reach probability
weighted by ``gamma ** steps``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .checkpoints import CheckpointSet
from .estimators import TERMINAL_THRESHOLD, EdgeEstimates, estimate_edges

EDGE_THRESHOLD = 8.0
VI_ITERATIONS = 5
TIE_TOL = 1e-12


@dataclass
class ProxyGraph:
    positions: np.ndarray
    R: np.ndarray
    G: np.ndarray
    D: np.ndarray
    terminal: np.ndarray
    edges: np.ndarray  # surviving-edge mask
    kmedoids_distance: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.positions)

    def to_dict(self) -> dict:
        return {
            "positions": self.positions.tolist(),
            "R": self.R.tolist(),
            "G": self.G.tolist(),
            "D": self.D.tolist(),
            "terminal": self.terminal.tolist(),
            "edges": self.edges.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class Plan:
    values: np.ndarray
    target: int


class Mode(Enum):
    ONCE = "once"
    REGEN = "regen"


class Event(Enum):
    EPISODE_START = "episode_start"
    CHECKPOINT_REACHED = "checkpoint_reached"
    TIMEOUT = "timeout"


class Replan(Enum):
    REBUILD = "rebuild_graph_and_plan"
    REUSE = "replan_on_existing_graph"


def replan_policy(mode: Mode, event: Event) -> Replan:
    if event is Event.EPISODE_START or mode is Mode.REGEN:
        return Replan.REBUILD
    return Replan.REUSE


def assemble_graph(positions, value, discount, distance, terminal,
                   threshold: float = EDGE_THRESHOLD, kmedoids_distance=None) -> ProxyGraph:
    """Apply the structural zeroings and distance pruning to raw edge estimates."""
    positions = np.asarray(positions, dtype=np.int64)
    m = len(positions)
    terminal = np.asarray(terminal, dtype=float)
    D = np.array(distance, dtype=float)
    keep = ~np.eye(m, dtype=bool)
    keep[:, 0] = False
    keep[terminal >= TERMINAL_THRESHOLD, :] = False
    keep &= D <= threshold
    R = np.where(keep, value, 0.0)
    G = np.where(keep, np.clip(discount, 0.0, 1.0), 0.0)
    return ProxyGraph(positions, R, G, D, terminal, keep, kmedoids_distance)


def graph_from_estimates(positions, est: EdgeEstimates, threshold: float = EDGE_THRESHOLD) -> ProxyGraph:
    return assemble_graph(positions, est.value, est.discount, est.distance, est.terminal,
                          threshold, est.kmedoids_distance)


def build_graph(vertices: CheckpointSet, current: int, tables, q, task_id: int,
                threshold: float = EDGE_THRESHOLD) -> ProxyGraph:
    """Graph over ``current`` (vertex 0) followed by the checkpoints not equal to it."""
    rest = [p for p in vertices.positions if p != current]
    positions = np.array([current] + rest, dtype=np.int64)
    return graph_from_estimates(positions, estimate_edges(tables, q, task_id, positions), threshold)


def value_iterate(graph: ProxyGraph, iterations: int = VI_ITERATIONS) -> np.ndarray:
    """``Q = R + G * V`` (target-wise), ``V = max_j Q``, from ``V = 0``."""
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    v = np.zeros(len(graph))
    for _ in range(iterations):
        v = (graph.R + graph.G * v[None, :]).max(axis=1)
    return v


def select_target(graph: ProxyGraph, values: np.ndarray) -> Plan:
    """Best immediate target from vertex 0 among surviving edges.

    Ties go to the nearer vertex, then the lower index. When no edge leaves
    vertex 0 the nearest other vertex is chosen.
    """
    m = len(graph)
    if m < 2:
        raise ValueError("a proxy graph needs at least two vertices")
    cand = np.flatnonzero(graph.edges[0])
    if len(cand) == 0:
        cand = np.arange(1, m)
        score = np.zeros(len(cand))
    else:
        score = graph.R[0, cand] + graph.G[0, cand] * values[cand]
    best = cand[score >= score.max() - TIE_TOL]
    order = np.lexsort((best, graph.D[0, best]))
    return Plan(values, int(best[order[0]]))


def plan(graph: ProxyGraph, iterations: int = VI_ITERATIONS) -> Plan:
    return select_target(graph, value_iterate(graph, iterations))


def rebind(graph: ProxyGraph, position: int) -> ProxyGraph | None:
    """Make the vertex at ``position`` the current vertex by relabelling.

    Returns None when no vertex sits at ``position``. No edges are re-estimated.
    """
    hits = np.flatnonzero(graph.positions == position)
    if len(hits) == 0:
        return None
    j = int(hits[0])
    perm = np.arange(len(graph))
    perm[[0, j]] = perm[[j, 0]]
    sub = np.ix_(perm, perm)
    keep = graph.edges[sub].copy()
    keep[:, 0] = False
    return ProxyGraph(graph.positions[perm], np.where(keep, graph.R[sub], 0.0),
                      np.where(keep, graph.G[sub], 0.0), graph.D[sub], graph.terminal[perm], keep)


def composite_value(values, discounts) -> float:
    """Value of following a fixed checkpoint path: ``sum_k v_k * prod_{l<k} g_l``."""
    values, discounts = np.asarray(values, float), np.asarray(discounts, float)
    carried = np.concatenate([[1.0], np.cumprod(discounts)[:-1]])
    return float(values @ carried)


def composite_error_bound(eps_v: float, eps_g: float, v_max: float, gamma: float) -> float:
    return eps_v * v_max / (1 - gamma) + eps_g * v_max / (1 - gamma) ** 2


@dataclass(frozen=True)
class BoundCase:
    fixture: int
    eps_v: float
    eps_g: float
    error: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.error <= self.bound


def bound_check(paths, eps_grid, gamma: float = 0.99, slack: float = 1.5, rng=None,
                trials: int = 20) -> list[BoundCase]:
    """Perturb the edge values and discounts along each fixed path and compare errors to the bound.

    ``paths`` holds ``(values, discounts)`` pairs of equal length. Each case
    takes the worst of an all-upward perturbation and ``trials`` random-sign
    perturbations of full magnitude. Discounts are clipped to ``[0, gamma]``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    cases = []
    for f, (vals, discs) in enumerate(paths):
        vals, discs = np.asarray(vals, float), np.asarray(discs, float)
        v_max = float(np.abs(vals).max())
        exact = composite_value(vals, discs)
        for eps_v, eps_g in eps_grid:
            signs = [(np.ones(len(vals)), np.ones(len(vals)))]
            signs += [(rng.choice([-1.0, 1.0], len(vals)), rng.choice([-1.0, 1.0], len(vals)))
                      for _ in range(trials)]
            err = max(
                abs(composite_value(vals + sv * eps_v * v_max,
                                    np.clip(discs + sg * eps_g, 0.0, gamma)) - exact)
                for sv, sg in signs
            )
            cases.append(BoundCase(f, eps_v, eps_g, err,
                                   slack * composite_error_bound(eps_v, eps_g, v_max, gamma)))
    return cases
