from .config import ExperimentConfig
from .training import evaluate, run_training

__all__ = ["ExperimentConfig", "evaluate", "run_training"]
