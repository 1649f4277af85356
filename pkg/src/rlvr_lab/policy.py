"""Tabular softmax policy over (state index, token)."""

from __future__ import annotations

import json
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .core import Source, Trajectory, check_tokens
from .env import EnvState, TaskInstance, TaskSet, transition


class PolicyTable:
    """Logits of shape ``(S, V)`` plus the encoder that maps env states to rows."""

    def __init__(self, logits: np.ndarray, encoder: Optional[TaskSet] = None):
        logits = np.array(logits, dtype=np.float64)
        if logits.ndim != 2:
            raise ValueError("logits must be a 2-D table")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        if encoder is not None and logits.shape != (encoder.n_states, encoder.spec.vocab_size):
            raise ValueError(
                f"logits shape {logits.shape} does not match encoder "
                f"({encoder.n_states}, {encoder.spec.vocab_size})"
            )
        self.logits = logits
        self.encoder = encoder

    @classmethod
    def uniform(cls, encoder: TaskSet) -> "PolicyTable":
        return cls(np.zeros((encoder.n_states, encoder.spec.vocab_size)), encoder)

    @property
    def n_states(self) -> int:
        return self.logits.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.logits.shape[1]

    def copy(self) -> "PolicyTable":
        return PolicyTable(self.logits.copy(), self.encoder)

    def probs(self, temperature: float = 1.0) -> np.ndarray:
        _check_temperature(temperature)
        return kernels.softmax_rows(self.logits, 1.0 / temperature)

    def state_index(self, prompt_id: int, state: EnvState) -> int:
        return self.encoder.encode(prompt_id, state)

    def trajectory_states(self, traj: Trajectory) -> np.ndarray:
        """Replay the environment to recover the state index of every token."""
        check_tokens(traj.tokens, self.vocab_size)
        inst = self.encoder.instances[self.encoder.row_of[traj.prompt_id]]
        state = inst.initial_state
        out = np.empty(len(traj.tokens), dtype=np.int64)
        for t, tok in enumerate(traj.tokens):
            out[t] = self.encoder.encode(traj.prompt_id, state)
            state = transition(state, tok)
        return out

    def to_record(self) -> dict:
        S, V = self.logits.shape
        return {"S": S, "V": V, "logits": self.logits.ravel().tolist()}

    @classmethod
    def from_record(cls, record: dict, encoder: Optional[TaskSet] = None) -> "PolicyTable":
        logits = np.array(record["logits"], dtype=np.float64).reshape(record["S"], record["V"])
        return cls(logits, encoder)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_record(), fh)

    @classmethod
    def load(cls, path, encoder: Optional[TaskSet] = None) -> "PolicyTable":
        with open(path) as fh:
            return cls.from_record(json.load(fh), encoder)


def _check_temperature(temperature: float) -> None:
    if not temperature > 0:
        raise ValueError("temperature must be positive")


def action_distribution(policy: PolicyTable, state: int, temperature: float = 1.0) -> np.ndarray:
    _check_temperature(temperature)
    row = policy.logits[state : state + 1]
    return kernels.softmax_rows(row, 1.0 / temperature)[0]


def rollout_arrays(policy: PolicyTable, rows: np.ndarray, temperature: float, rng: np.random.Generator):
    """Sample one full episode per entry of ``rows``; returns tokens, probs, states."""
    _check_temperature(temperature)
    enc = policy.encoder
    rows = np.asarray(rows, dtype=np.int64)
    uniforms = rng.random((len(rows), enc.spec.episode_len))
    return kernels.rollout(policy.logits, 1.0 / temperature, enc.kind, enc.table, rows, uniforms)


def sample_trajectory(
    policy: PolicyTable, instance: TaskInstance, temperature: float = 1.0, rng_seed: int = 0
) -> Trajectory:
    rng = np.random.default_rng(rng_seed)
    row = policy.encoder.row_of[instance.prompt_id]
    tokens, probs, _ = rollout_arrays(policy, np.array([row]), temperature, rng)
    return Trajectory(instance.prompt_id, tokens[0].tolist(), probs[0].tolist(), Source.ON_POLICY)


def sequence_log_prob(
    policy: PolicyTable, traj: Trajectory, temperature: float = 1.0
) -> tuple[float, np.ndarray]:
    """Total log-probability of ``traj`` and the per-token probabilities."""
    states = policy.trajectory_states(traj)
    probs = policy.probs(temperature)
    per_token = probs[states, np.asarray(traj.tokens, dtype=np.int64)]
    return float(np.sum(np.log(per_token))), per_token


def _row_entropy(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return np.maximum(-terms.sum(axis=-1), 0.0)


def entropy(policy: PolicyTable, state: int, temperature: float = 1.0) -> float:
    return float(_row_entropy(action_distribution(policy, state, temperature)))


def state_entropies(policy: PolicyTable, temperature: float = 1.0) -> np.ndarray:
    return _row_entropy(policy.probs(temperature))


def mean_entropy(
    policy: PolicyTable, trajectories: Sequence[Trajectory], temperature: float = 1.0
) -> float:
    """Average entropy over every (trajectory, position) pair."""
    if not trajectories:
        raise ValueError("no trajectories")
    h = state_entropies(policy, temperature)
    states = np.concatenate([policy.trajectory_states(t) for t in trajectories])
    return float(h[states].mean())


def apply_gradient(policy: PolicyTable, grad: np.ndarray, step_size: float) -> PolicyTable:
    """Gradient ascent: ``logits + step_size * grad``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != policy.logits.shape:
        raise ValueError(f"gradient shape {grad.shape} != logits shape {policy.logits.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("gradient contains non-finite entries")
    return PolicyTable(policy.logits + step_size * grad, policy.encoder)
