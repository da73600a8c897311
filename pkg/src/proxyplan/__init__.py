"""Planning over generated checkpoints in procedurally generated lava gridworlds.

Core pieces: ``gridworld`` (tasks and dynamics), ``oracle`` (exact dynamic
programming), ``distributions`` (histogram estimates), ``replay`` (hindsight
buffer), ``estimators`` (tabular policy and edge estimators), ``checkpoints``
(proposal and pruning), ``planner`` (proxy graphs and value iteration) and
``harness`` (training, evaluation and the command line).
"""
__version__ = "0.1.0"
