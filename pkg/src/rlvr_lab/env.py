"""Synthetic verifiable-reward tasks and the teacher that solves them.

Two families share one episode protocol (emit ``episode_len`` tokens over a
vocabulary of ``vocab_size``):

* ``CombinationLock``: every instance hides a secret token sequence. The
  reward is 1 only when the whole emitted sequence equals the secret, so a
  uniform policy succeeds with probability ``V**-L``.
* ``ModularChain``: every instance carries ``L`` operands. At step ``t`` the
  policy sees the next operand and the value it carried forward (its own
  previous token). Emitting the running sum mod ``V`` at every step solves the
  task; only the final token is graded.
"""

from __future__ import annotations

import enum
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .core import AnswerSpec, OracleStyle, Source, Trajectory, _parse_enum, score_reward

LOCK = 0
CHAIN = 1


class Family(str, enum.Enum):
    COMBINATION_LOCK = "CombinationLock"
    MODULAR_CHAIN = "ModularChain"


@dataclass(frozen=True)
class EnvSpec:
    family: Family = Family.MODULAR_CHAIN
    vocab_size: int = 10
    episode_len: int = 3
    difficulty: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", _parse_enum(Family, self.family))
        if self.difficulty is None:
            object.__setattr__(self, "difficulty", self.episode_len)
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.episode_len < 1:
            raise ValueError("episode_len must be >= 1")
        # lock: secret length; chain: operand count. Both equal the episode length.
        if self.difficulty != self.episode_len:
            raise ValueError("difficulty must equal episode_len for both task families")

    @property
    def capacity(self) -> int:
        """Number of distinct instances the family can produce."""
        return self.vocab_size**self.episode_len

    @property
    def kind(self) -> int:
        return LOCK if self.family is Family.COMBINATION_LOCK else CHAIN

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "vocab_size": self.vocab_size,
            "episode_len": self.episode_len,
            "difficulty": self.difficulty,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class EnvState:
    position: int
    carry: Optional[int]
    episode_len: int
    vocab_size: int

    @property
    def terminal(self) -> bool:
        return self.position >= self.episode_len


@dataclass(frozen=True)
class TaskInstance:
    prompt_id: int
    family: Family
    vocab_size: int
    episode_len: int
    params: tuple[int, ...]  # lock: secret; chain: operands
    truth: AnswerSpec

    @property
    def initial_state(self) -> EnvState:
        return EnvState(0, None, self.episode_len, self.vocab_size)

    def to_record(self, spec: EnvSpec) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "family": self.family.value,
            "vocab_size": self.vocab_size,
            "episode_len": self.episode_len,
            "difficulty": spec.difficulty,
            "seed": spec.seed,
            "params": list(self.params),
            "truth": {
                "positions": list(self.truth.positions),
                "tokens": list(self.truth.tokens),
                "length": self.truth.length,
            },
        }


def transition(state: EnvState, token: int) -> EnvState:
    if state.terminal:
        raise RuntimeError("episode already terminated")
    if not 0 <= token < state.vocab_size:
        raise ValueError(f"token {token} outside vocabulary [0, {state.vocab_size})")
    return EnvState(state.position + 1, int(token), state.episode_len, state.vocab_size)


def _affine_map(spec: EnvSpec) -> tuple[int, int]:
    cap = spec.capacity
    rng = random.Random(f"{spec.family.value}:{spec.vocab_size}:{spec.episode_len}:{spec.seed}")
    if cap == 1:
        return 1, 0
    while True:
        a = rng.randrange(1, cap)
        if math.gcd(a, cap) == 1:
            break
    return a, rng.randrange(cap)


def _digits(index: int, base: int, width: int) -> tuple[int, ...]:
    out = []
    for _ in range(width):
        index, d = divmod(index, base)
        out.append(d)
    return tuple(out)


def make_instance(spec: EnvSpec, prompt_id: int) -> TaskInstance:
    """Instance ``prompt_id`` of ``spec``, computable without its siblings."""
    if not 0 <= prompt_id < spec.capacity:
        raise ValueError(f"prompt_id {prompt_id} outside family capacity {spec.capacity}")
    a, b = _affine_map(spec)
    params = _digits((a * prompt_id + b) % spec.capacity, spec.vocab_size, spec.episode_len)
    if spec.family is Family.COMBINATION_LOCK:
        truth = AnswerSpec(tuple(range(spec.episode_len)), params, spec.episode_len)
    else:
        truth = AnswerSpec((-1,), (sum(params) % spec.vocab_size,))
    return TaskInstance(prompt_id, spec.family, spec.vocab_size, spec.episode_len, params, truth)


def generate_tasks(spec: EnvSpec, count: int) -> list[TaskInstance]:
    if count < 1:
        raise ValueError("count must be >= 1")
    if count > spec.capacity:
        raise ValueError(f"{spec.family.value} holds only {spec.capacity} distinct instances")
    return [make_instance(spec, i) for i in range(count)]


def oracle_trace(
    instance: TaskInstance,
    style: OracleStyle = OracleStyle.VERBOSE,
    teacher_prob: float = 1.0,
) -> Trajectory:
    """Teacher demonstration for ``instance``.

    ``teacher_prob`` is the probability the teacher assigned to each of its
    tokens; the default 1.0 is the unit-probability convention for external
    traces.
    """
    style = _parse_enum(OracleStyle, style)
    if instance.family is Family.COMBINATION_LOCK:
        tokens = instance.params
    else:
        sums = np.cumsum(instance.params) % instance.vocab_size
        tokens = tuple(int(s) for s in sums)
        if style is OracleStyle.MINIMAL:
            tokens = tokens[-1:]
    traj = Trajectory(instance.prompt_id, tokens, (teacher_prob,) * len(tokens), Source.OFF_POLICY)
    score_reward(traj, instance.truth)
    return traj


class TaskSet:
    """Instances packed into arrays, plus the policy's state encoding.

    Lock states are ``(row, position)``, so each instance owns its own table
    rows. Chain states are ``(position, visible operand, carried token)`` and
    are shared by every instance.
    """

    def __init__(self, spec: EnvSpec, instances: Iterable[TaskInstance]):
        self.spec = spec
        self.instances = list(instances)
        if not self.instances:
            raise ValueError("empty task set")
        self.row_of = {inst.prompt_id: r for r, inst in enumerate(self.instances)}
        if len(self.row_of) != len(self.instances):
            raise ValueError("duplicate prompt_id in task set")
        self.table = np.array([inst.params for inst in self.instances], dtype=np.int64)
        self.final_truth = self.table.sum(axis=1) % spec.vocab_size

    @classmethod
    def generate(cls, spec: EnvSpec, count: int) -> "TaskSet":
        return cls(spec, generate_tasks(spec, count))

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def kind(self) -> int:
        return self.spec.kind

    @property
    def n_states(self) -> int:
        V, L = self.spec.vocab_size, self.spec.episode_len
        if self.kind == LOCK:
            return len(self.instances) * L
        return L * V * (V + 1)

    def encode(self, prompt_id: int, state: EnvState) -> int:
        row = self.row_of[prompt_id]
        return encode_state(self.kind, self.table, row, state.position, state.carry, self.spec)

    def rewards(self, rows: np.ndarray, tokens: np.ndarray) -> np.ndarray:
        """Vectorized binary rewards for full-length rollouts."""
        if self.kind == LOCK:
            return np.all(tokens == self.table[rows], axis=1).astype(np.float64)
        return (tokens[:, -1] == self.final_truth[rows]).astype(np.float64)


def encode_state(kind, table, row, position, carry, spec: EnvSpec) -> int:
    V, L = spec.vocab_size, spec.episode_len
    if kind == LOCK:
        return row * L + position
    last = V if carry is None else carry
    return (position * V + int(table[row, position])) * (V + 1) + last


def export_tasks(path, spec: EnvSpec, instances: Iterable[TaskInstance]) -> None:
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_record(spec), sort_keys=True) + "\n")


def import_tasks(path) -> tuple[EnvSpec, list[TaskInstance]]:
    spec = None
    instances = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        rec_spec = EnvSpec(rec["family"], rec["vocab_size"], rec["episode_len"],
                           rec["difficulty"], rec["seed"])
        if spec is None:
            spec = rec_spec
        elif rec_spec != spec:
            raise ValueError("task file mixes environment specs")
        t = rec["truth"]
        instances.append(TaskInstance(
            rec["prompt_id"], rec_spec.family, rec["vocab_size"], rec["episode_len"],
            tuple(rec["params"]),
            AnswerSpec(tuple(t["positions"]), tuple(t["tokens"]), t["length"]),
        ))
    if spec is None:
        raise ValueError(f"no task records in {path}")
    return spec, instances
