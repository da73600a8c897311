"""Flat experiment configuration, loadable from JSON or TOML."""
from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..estimators import PRIORS

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

AGENTS = ("skipper-once", "skipper-regen", "modelfree", "skipper-goal")
TRAIN_TASK_COUNTS = (1, 5, 25, 50, 100, 0)  # 0 draws a fresh task every episode
ABSTRACTIONS = ("identity", "local")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    width: int = 8
    height: int = 8
    train_difficulty: float = 0.4
    eval_difficulties: list[float] = field(default_factory=lambda: [0.25, 0.35, 0.45, 0.55])
    num_train_tasks: int = 25
    total_interactions: int = 200_000
    n_generate: int = 32
    k_prune: int = 12
    vi_iterations: int = 5
    edge_threshold: float = 8.0
    replan_interval: int = 8
    her_k: int = 4
    gamma_task: float = 0.99
    gamma_intrinsic: float = 0.95
    noise: float = 0.0
    agent: str = "skipper-once"
    delusion_suppression: bool = False
    suppression_scale: float = 0.25
    include_invalid: bool = False
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    master_seed: int = 0
    eval_episodes: int = 20
    eval_tasks_per_difficulty: int = 20
    eval_every: float = 0.05  # fraction of total interactions between evaluations
    alpha: float = 0.1
    train_every: int = 4
    batch_size: int = 64
    buffer_capacity: int = 100_000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.01
    epsilon_fraction: float = 0.5
    abstraction: str = "local"
    estimator_prior: str = "pessimistic"
    modelfree_abstraction: str = "identity"

    def validate(self) -> "ExperimentConfig":
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        need(self.width >= 4 and self.height >= 4, "grid must be at least 4x4")
        for v in [self.train_difficulty, *self.eval_difficulties]:
            need(0.0 <= v < 1.0, f"difficulty {v} must lie in [0, 1)")
        need(self.num_train_tasks in TRAIN_TASK_COUNTS,
             f"num_train_tasks must be one of {TRAIN_TASK_COUNTS} (0 = fresh task per episode)")
        need(self.total_interactions >= 1, "total_interactions must be positive")
        need(2 <= self.n_generate, "n_generate must be at least 2")
        need(1 <= self.k_prune <= self.n_generate, "k_prune must lie in [1, n_generate]")
        need(self.vi_iterations >= 1, "vi_iterations must be positive")
        need(self.edge_threshold > 0, "edge_threshold must be positive")
        need(self.replan_interval >= 1, "replan_interval must be positive")
        need(self.her_k >= 1, "her_k must be positive")
        need(0.0 < self.gamma_task < 1.0 and 0.0 < self.gamma_intrinsic < 1.0, "discounts must lie in (0, 1)")
        need(0.0 <= self.noise <= 1.0, "noise must lie in [0, 1]")
        need(self.agent in AGENTS, f"agent must be one of {AGENTS}")
        need(0.0 < self.suppression_scale <= 1.0, "suppression_scale must lie in (0, 1]")
        need(self.estimator_prior in PRIORS, f"estimator_prior must be one of {PRIORS}")
        need(len(self.seeds) >= 1, "at least one seed is required")
        need(self.eval_episodes >= 1 and self.eval_tasks_per_difficulty >= 1, "evaluation counts must be positive")
        need(0.0 < self.eval_every <= 1.0, "eval_every must lie in (0, 1]")
        need(0.0 < self.alpha <= 1.0, "alpha must lie in (0, 1]")
        need(self.train_every >= 1 and self.batch_size >= 1, "train_every and batch_size must be positive")
        need(self.buffer_capacity >= self.batch_size, "buffer_capacity must hold at least one batch")
        need(0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0, "need 0 <= epsilon_end <= epsilon_start <= 1")
        need(0.0 < self.epsilon_fraction <= 1.0, "epsilon_fraction must lie in (0, 1]")
        need(self.abstraction in ABSTRACTIONS and self.modelfree_abstraction in ABSTRACTIONS,
             f"abstractions must be one of {ABSTRACTIONS}")
        return self

    @property
    def eval_interval(self) -> int:
        return max(1, int(round(self.eval_every * self.total_interactions)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d).validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text()
        try:
            data = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
        except (ValueError, tomllib.TOMLDecodeError) as e:
            raise ConfigError(f"{path}: {e}") from e
        return cls.from_dict(data)
