"""Experiment configuration: flat ``key = value`` files with dotted sections.

Example::

    # lock.cfg
    env.family = CombinationLock
    env.vocab_size = 16
    env.episode_len = 6
    env.n_tasks = 32
    algorithm = Luffy
    n_steps = 2000
    n_seeds = 5

Setting ``algorithm`` picks a preset (group composition, clipping and
shaping); ``algorithm.<field>`` keys then override individual fields.
Unknown keys raise :class:`ConfigError` naming the key.
"""

from __future__ import annotations

import dataclasses
import enum
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .core import AlgorithmConfig
from .env import EnvSpec, Family


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# key -> (default, help). Algorithm fields are added below from the dataclass.
RUN_KEYS = {
    "n_steps": (1000, "training steps per seed"),
    "n_seeds": (1, "number of seeds; seed k uses seed + k"),
    "seed": (0, "base seed"),
    "output_dir": ("runs/default", "run directory (overridden by --out)"),
    "checkpoint_every": (0, "checkpoint interval in steps; 0 writes only the final checkpoint"),
    "policy.init_scale": (0.0, "std of the Gaussian initial logits; 0 gives the uniform policy"),
    "env.family": ("ModularChain", "CombinationLock or ModularChain"),
    "env.vocab_size": (10, "vocabulary size V"),
    "env.episode_len": (3, "episode length L"),
    "env.seed": (0, "task-generation seed"),
    "env.n_tasks": (64, "number of distinct prompts in the task pool"),
    "algorithm": ("Luffy", "training variant; selects the preset"),
}

_ALG_HELP = {
    "n_on": "on-policy rollouts per prompt",
    "n_off": "off-policy teacher traces per prompt",
    "clip_epsilon": "PPO clip width",
    "use_on_policy_clip": "clip on-policy ratios",
    "use_off_policy_clip": "clip off-policy ratios (linear shaping only)",
    "advantage_std_norm": "divide group advantages by the group std",
    "length_norm": "PerTokenZ or ConstantBudget",
    "shaping_gamma": "gamma in f(x) = x/(x+gamma); none for linear",
    "entropy_coef": "entropy bonus coefficient",
    "temperature": "sampling temperature",
    "learning_rate": "ascent step size",
    "lr_schedule": "Constant or ConstOverSqrtK",
    "batch_prompts": "prompts per batch",
    "updates_per_batch": "ascent steps per sampled batch",
    "sft_coef": "weight of the SFT term in RlWithSftLoss",
    "sft_fraction": "fraction of steps spent in SFT for SftThenRl",
    "entropy_on_off_policy": "include teacher tokens in the entropy bonus",
    "unit_off_policy_probs": "store behavior prob 1 for teacher traces",
    "oracle_style": "Verbose or Minimal teacher traces",
}

_ALG_FIELDS = {f.name: f for f in dataclasses.fields(AlgorithmConfig) if f.name not in ("algorithm", "seed")}
ALGORITHM_KEYS = {
    f"algorithm.{name}": ("<preset>", _ALG_HELP.get(name, "")) for name in _ALG_FIELDS
}
ALL_KEYS = {**RUN_KEYS, **ALGORITHM_KEYS}


def _field_type(name):
    hints = typing.get_type_hints(AlgorithmConfig)
    return hints[name]


def _coerce(key: str, raw: str, kind):
    raw = raw.strip()
    origin = typing.get_origin(kind)
    if origin is typing.Union:
        if raw.lower() in ("none", "null", ""):
            return None
        kind = next(a for a in typing.get_args(kind) if a is not type(None))
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if isinstance(kind, type) and issubclass(kind, enum.Enum):
            for member in kind:
                if raw in (member.value, member.name):
                    return member
            raise ValueError(f"expected one of {[m.value for m in kind]}, got {raw!r}")
        return raw
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


def parse_lines(lines, source: str = "<config>") -> list[tuple[str, str]]:
    pairs = []
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}", f"expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def parse_override(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(text, "override must look like KEY=VALUE")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    n_steps: int = 1000
    n_seeds: int = 1
    seed: int = 0
    n_tasks: int = 64
    init_scale: float = 0.0
    output_dir: str = "runs/default"
    checkpoint_every: int = 0

    @property
    def seeds(self) -> list[int]:
        return [self.seed + k for k in range(self.n_seeds)]

    def for_seed(self, seed: int) -> AlgorithmConfig:
        return self.algorithm.replace(seed=seed)

    @classmethod
    def from_pairs(cls, pairs) -> "ExperimentConfig":
        """Build from ordered ``(key, value)`` string pairs; later keys win."""
        values: dict[str, str] = {}
        for key, value in pairs:
            if key not in ALL_KEYS:
                raise ConfigError(key, "unknown configuration key")
            values[key] = value

        def get(key, kind):
            if key in values:
                return _coerce(key, values[key], kind)
            return RUN_KEYS[key][0]

        env_args = dict(
            family=get("env.family", Family),
            vocab_size=get("env.vocab_size", int),
            episode_len=get("env.episode_len", int),
            seed=get("env.seed", int),
        )
        try:
            env = EnvSpec(**env_args)
        except ValueError as exc:
            bad = next((k for k in ("env.family", "env.vocab_size", "env.episode_len") if k in values), "env")
            raise ConfigError(bad, str(exc)) from None

        alg_name = get("algorithm", str)
        overrides = {}
        for key, raw in values.items():
            if key.startswith("algorithm."):
                name = key.split(".", 1)[1]
                overrides[name] = _coerce(key, raw, _field_type(name))
        try:
            algorithm = AlgorithmConfig.preset(alg_name, **overrides)
        except ConfigError:
            raise
        except (ValueError, KeyError) as exc:
            # Name the first key the user actually set that could be at fault.
            first = next((k for k, _ in pairs if k == "algorithm" or k.startswith("algorithm.")), "algorithm")
            raise ConfigError(first, str(exc).strip("'\"")) from None

        cfg = cls(
            env=env,
            algorithm=algorithm,
            n_steps=get("n_steps", int),
            n_seeds=get("n_seeds", int),
            seed=get("seed", int),
            n_tasks=get("env.n_tasks", int),
            init_scale=get("policy.init_scale", float),
            output_dir=get("output_dir", str),
            checkpoint_every=get("checkpoint_every", int),
        )
        for key, ok in (("n_steps", cfg.n_steps >= 1), ("n_seeds", cfg.n_seeds >= 1),
                        ("env.n_tasks", 1 <= cfg.n_tasks <= env.capacity),
                        ("policy.init_scale", cfg.init_scale >= 0),
                        ("checkpoint_every", cfg.checkpoint_every >= 0)):
            if not ok:
                raise ConfigError(key, "value out of range")
        return cfg

    @classmethod
    def load(cls, path=None, overrides=()) -> "ExperimentConfig":
        pairs = []
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(str(path), "config file not found")
            pairs = parse_lines(p.read_text().splitlines(), str(path))
        pairs += [parse_override(o) if isinstance(o, str) else tuple(o) for o in overrides]
        return cls.from_pairs(pairs)

    def to_pairs(self) -> list[tuple[str, str]]:
        """Fully resolved configuration; feeding it back reproduces ``self``."""
        alg = self.algorithm.to_dict()
        out = [
            ("env.family", self.env.family.value),
            ("env.vocab_size", str(self.env.vocab_size)),
            ("env.episode_len", str(self.env.episode_len)),
            ("env.seed", str(self.env.seed)),
            ("env.n_tasks", str(self.n_tasks)),
            ("policy.init_scale", repr(float(self.init_scale))),
            ("n_steps", str(self.n_steps)),
            ("n_seeds", str(self.n_seeds)),
            ("seed", str(self.seed)),
            ("output_dir", self.output_dir),
            ("checkpoint_every", str(self.checkpoint_every)),
            ("algorithm", alg.pop("algorithm")),
        ]
        alg.pop("seed")
        for name, v in alg.items():
            text = "none" if v is None else (repr(v) if isinstance(v, float) else str(v).lower() if isinstance(v, bool) else str(v))
            out.append((f"algorithm.{name}", text))
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_pairs())


def describe_keys() -> str:
    lines = []
    for key, (default, help_) in ALL_KEYS.items():
        lines.append(f"{key:<34} default={default!s:<14} {help_}")
    return "\n".join(lines)
