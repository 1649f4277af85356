"""Domain types shared across the package, and the binary reward."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence


class Source(str, enum.Enum):
    ON_POLICY = "OnPolicy"
    OFF_POLICY = "OffPolicy"


class Algorithm(str, enum.Enum):
    ON_POLICY_GRPO = "OnPolicyGRPO"
    MIXED_POLICY = "MixedPolicy"
    LUFFY = "Luffy"
    LUFFY_WITH_CLIP = "LuffyWithClip"
    SFT_ONLY = "SftOnly"
    RL_WITH_SFT_LOSS = "RlWithSftLoss"
    SFT_THEN_RL = "SftThenRl"


class LengthNorm(str, enum.Enum):
    PER_TOKEN_Z = "PerTokenZ"
    CONSTANT_BUDGET = "ConstantBudget"


class LrSchedule(str, enum.Enum):
    CONSTANT = "Constant"
    CONST_OVER_SQRT_K = "ConstOverSqrtK"


class OracleStyle(str, enum.Enum):
    MINIMAL = "Minimal"
    VERBOSE = "Verbose"


def _parse_enum(kind, value):
    if isinstance(value, kind):
        return value
    for member in kind:
        if value in (member.value, member.name) or str(value).lower() == member.value.lower():
            return member
    choices = ", ".join(m.value for m in kind)
    raise ValueError(f"unknown {kind.__name__} {value!r}; expected one of {choices}")


@dataclass(frozen=True)
class AnswerSpec:
    """Expected answer tokens and where they sit in a trajectory.

    ``positions`` index into the token sequence (negative indices count from
    the end). ``length``, when set, is the exact trajectory length a correct
    answer must have.
    """

    positions: tuple[int, ...]
    tokens: tuple[int, ...]
    length: Optional[int] = None

    def __post_init__(self):
        if len(self.positions) != len(self.tokens) or not self.positions:
            raise ValueError("answer positions and tokens must be non-empty and aligned")


@dataclass(eq=False)
class Trajectory:
    """One rollout. Immutable apart from a single reward assignment."""

    prompt_id: int
    tokens: tuple[int, ...]
    behavior_probs: tuple[float, ...]
    source: Source
    _reward: Optional[float] = field(default=None, repr=False)

    def __post_init__(self):
        self.tokens = tuple(int(t) for t in self.tokens)
        self.behavior_probs = tuple(float(p) for p in self.behavior_probs)
        self.source = _parse_enum(Source, self.source)
        if len(self.tokens) != len(self.behavior_probs):
            raise ValueError("behavior_probs must have one entry per token")
        if any(t < 0 for t in self.tokens):
            raise ValueError("token ids must be non-negative")
        for p in self.behavior_probs:
            if not (0.0 < p <= 1.0):
                raise ValueError(f"behavior probability {p} outside (0, 1]")

    @property
    def reward(self) -> Optional[float]:
        return self._reward

    @reward.setter
    def reward(self, value: float) -> None:
        value = float(value)
        if value not in (0.0, 1.0):
            raise ValueError("rewards are binary")
        if self._reward is not None and self._reward != value:
            raise ValueError("trajectory reward already assigned")
        self._reward = value

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.prompt_id == other.prompt_id
            and self.tokens == other.tokens
            and self.behavior_probs == other.behavior_probs
            and self.source == other.source
            and self._reward == other._reward
        )


@dataclass
class RolloutGroup:
    """All rollouts for one prompt; advantages are normalized over the union."""

    prompt_id: int
    on_policy: list[Trajectory]
    off_policy: list[Trajectory] = field(default_factory=list)

    def __post_init__(self):
        if len(self.on_policy) + len(self.off_policy) < 2:
            raise ValueError("a rollout group needs at least two trajectories")
        for traj in self.on_policy:
            if traj.source is not Source.ON_POLICY:
                raise ValueError("on_policy list holds an off-policy trajectory")
        for traj in self.off_policy:
            if traj.source is not Source.OFF_POLICY:
                raise ValueError("off_policy list holds an on-policy trajectory")
        for traj in self.trajectories:
            if traj.prompt_id != self.prompt_id:
                raise ValueError("all trajectories in a group must share prompt_id")

    @property
    def trajectories(self) -> list[Trajectory]:
        """On-policy members first, then off-policy ones."""
        return list(self.on_policy) + list(self.off_policy)

    @property
    def rewards(self) -> list[float]:
        out = []
        for traj in self.trajectories:
            if traj.reward is None:
                raise ValueError(f"unscored trajectory in group {self.prompt_id}")
            out.append(traj.reward)
        return out


def score_reward(traj: Trajectory, truth: AnswerSpec) -> float:
    """Binary verifiable reward: 1 iff every answer slot holds the expected token."""
    tokens = traj.tokens
    ok = len(tokens) > 0
    if ok and truth.length is not None and len(tokens) != truth.length:
        ok = False
    if ok:
        for pos, expected in zip(truth.positions, truth.tokens):
            if not -len(tokens) <= pos < len(tokens) or tokens[pos] != expected:
                ok = False
                break
    reward = 1.0 if ok else 0.0
    traj.reward = reward
    return reward


_PRESETS = {
    Algorithm.ON_POLICY_GRPO: dict(n_on=8, n_off=0, use_on_policy_clip=True),
    Algorithm.MIXED_POLICY: dict(n_on=7, n_off=1, use_on_policy_clip=True),
    Algorithm.LUFFY: dict(n_on=7, n_off=1, use_on_policy_clip=False, shaping_gamma=0.1),
    Algorithm.LUFFY_WITH_CLIP: dict(n_on=7, n_off=1, use_on_policy_clip=True, shaping_gamma=0.1),
    Algorithm.SFT_ONLY: dict(n_on=0, n_off=1, use_on_policy_clip=True),
    Algorithm.RL_WITH_SFT_LOSS: dict(n_on=7, n_off=1, use_on_policy_clip=True),
    Algorithm.SFT_THEN_RL: dict(n_on=8, n_off=1, use_on_policy_clip=True),
}


@dataclass(frozen=True)
class AlgorithmConfig:
    """One training variant. Build with :meth:`preset` to get consistent defaults."""

    algorithm: Algorithm = Algorithm.LUFFY
    n_on: int = 7
    n_off: int = 1
    clip_epsilon: float = 0.2
    use_on_policy_clip: bool = False
    use_off_policy_clip: bool = False
    advantage_std_norm: bool = False
    length_norm: LengthNorm = LengthNorm.CONSTANT_BUDGET
    shaping_gamma: Optional[float] = 0.1
    entropy_coef: float = 0.01
    temperature: float = 1.0
    learning_rate: float = 50.0
    lr_schedule: LrSchedule = LrSchedule.CONSTANT
    seed: int = 0
    batch_prompts: int = 32
    updates_per_batch: int = 1
    sft_coef: float = 1.0
    sft_fraction: float = 0.5
    entropy_on_off_policy: bool = False
    unit_off_policy_probs: bool = True
    oracle_style: OracleStyle = OracleStyle.VERBOSE

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("algorithm", _parse_enum(Algorithm, self.algorithm))
        set_("length_norm", _parse_enum(LengthNorm, self.length_norm))
        set_("lr_schedule", _parse_enum(LrSchedule, self.lr_schedule))
        set_("oracle_style", _parse_enum(OracleStyle, self.oracle_style))
        self.validate()

    @classmethod
    def preset(cls, algorithm, **overrides) -> "AlgorithmConfig":
        algorithm = _parse_enum(Algorithm, algorithm)
        values = dict(shaping_gamma=None)
        values.update(_PRESETS[algorithm])
        values.update(overrides)
        return cls(algorithm=algorithm, **values)

    def replace(self, **changes) -> "AlgorithmConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> None:
        alg = self.algorithm
        if self.n_on < 0 or self.n_off < 0:
            raise ValueError("rollout counts must be non-negative")
        if self.n_on + self.n_off < 1:
            raise ValueError("at least one rollout per prompt is required")
        if alg in (Algorithm.ON_POLICY_GRPO, Algorithm.MIXED_POLICY, Algorithm.LUFFY,
                   Algorithm.LUFFY_WITH_CLIP):
            if self.n_on + self.n_off < 2:
                raise ValueError("group advantages need n_on + n_off >= 2")
        if not self.clip_epsilon > 0:
            raise ValueError("clip_epsilon must be positive")
        if self.shaping_gamma is not None and not (0.0 < self.shaping_gamma <= 1.0):
            raise ValueError("shaping_gamma must lie in (0, 1]")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be non-negative")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be positive")
        if self.batch_prompts < 1 or self.updates_per_batch < 1:
            raise ValueError("batch_prompts and updates_per_batch must be >= 1")
        if not (0.0 < self.sft_fraction < 1.0):
            raise ValueError("sft_fraction must lie in (0, 1)")
        if self.use_off_policy_clip and self.shaping_gamma is not None:
            raise ValueError("the off-policy clip is only defined for linear shaping")

        if alg is Algorithm.ON_POLICY_GRPO and self.n_off != 0:
            raise ValueError("OnPolicyGRPO requires n_off == 0")
        if alg is Algorithm.MIXED_POLICY and self.shaping_gamma is not None:
            raise ValueError("MixedPolicy uses linear shaping; unset shaping_gamma")
        if alg is Algorithm.LUFFY and (
            self.shaping_gamma is None or self.use_on_policy_clip or self.use_off_policy_clip
        ):
            raise ValueError("Luffy requires shaping_gamma and no clipping")
        if alg is Algorithm.LUFFY_WITH_CLIP and (
            self.shaping_gamma is None or not self.use_on_policy_clip
        ):
            raise ValueError("LuffyWithClip requires shaping_gamma and the on-policy clip")
        if alg in (Algorithm.MIXED_POLICY, Algorithm.LUFFY, Algorithm.LUFFY_WITH_CLIP,
                   Algorithm.SFT_ONLY, Algorithm.RL_WITH_SFT_LOSS, Algorithm.SFT_THEN_RL):
            if self.n_off < 1:
                raise ValueError(f"{alg.value} needs at least one off-policy trace per prompt")
        if alg in (Algorithm.RL_WITH_SFT_LOSS, Algorithm.SFT_THEN_RL) and self.n_on < 2:
            raise ValueError(f"{alg.value} needs n_on >= 2 for on-policy advantages")

    @property
    def uses_off_policy_rl(self) -> bool:
        return self.algorithm in (Algorithm.MIXED_POLICY, Algorithm.LUFFY, Algorithm.LUFFY_WITH_CLIP)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, enum.Enum) else v
        return out

    @classmethod
    def from_dict(cls, values: dict) -> "AlgorithmConfig":
        return cls(**values)


def check_tokens(tokens: Sequence[int], vocab_size: int) -> None:
    for t in tokens:
        if not 0 <= int(t) < vocab_size:
            raise ValueError(f"token {t} outside vocabulary [0, {vocab_size})")
