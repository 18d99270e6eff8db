"""Self-play epsilon-greedy Q-learning in the iterated prisoner's dilemma:
simulator, exact Bellman fixed points, and convergence verification."""

__version__ = "0.1.0"

from .game import Action, PayoffMatrix, State, next_state, payoff_from_g
from .policy import (
    ALWAYS_DEFECT,
    GRIM_TRIGGER,
    LOSE_SHIFT,
    PAVLOV,
    PolicyProfile,
    QTable,
    RandomStream,
    classify,
    epsilon_greedy,
    is_cooperative,
)
from .engine import (
    OPTIMISTIC_DEFAULT,
    RunConfig,
    TrajectoryRecord,
    cooperation_probability,
    optimistic_default_qtable,
    run,
    run_batch,
    step,
)

__all__ = [
    "Action", "PayoffMatrix", "State", "next_state", "payoff_from_g",
    "ALWAYS_DEFECT", "GRIM_TRIGGER", "LOSE_SHIFT", "PAVLOV",
    "PolicyProfile", "QTable", "RandomStream", "classify", "epsilon_greedy",
    "is_cooperative",
    "OPTIMISTIC_DEFAULT", "RunConfig", "TrajectoryRecord",
    "cooperation_probability", "optimistic_default_qtable", "run",
    "run_batch", "step",
    "__version__",
]
