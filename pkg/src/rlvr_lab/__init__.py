"""Toy-scale laboratory for on-policy GRPO, mixed-policy GRPO, and shaped
off-policy guidance on synthetic verifiable-reward tasks."""

from ._accel import backend_name
from .core import (
    Algorithm,
    AlgorithmConfig,
    AnswerSpec,
    LengthNorm,
    LrSchedule,
    OracleStyle,
    RolloutGroup,
    Source,
    Trajectory,
    score_reward,
)
from .env import EnvSpec, Family, TaskInstance, TaskSet, generate_tasks, oracle_trace, transition
from .policy import PolicyTable

__version__ = "0.1.0"
