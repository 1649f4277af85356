"""Named experiment settings used by the acceptance suite and ``configs/``.

``hard_lock`` is the exploration failure setting: a 16^6 combination lock
where on-policy sampling essentially never sees a reward. ``chain`` is the
dynamics setting: a large pool of modular-sum prompts with a randomly
initialized policy, so shaping and clipping effects show up in entropy and
reward before either variant saturates.
"""

from __future__ import annotations

from .config import ExperimentConfig

HARD_LOCK = [
    ("env.family", "CombinationLock"),
    ("env.vocab_size", "16"),
    ("env.episode_len", "6"),
    ("env.n_tasks", "32"),
    ("n_steps", "2000"),
    ("n_seeds", "5"),
]

CHAIN = [
    ("env.family", "ModularChain"),
    ("env.vocab_size", "10"),
    ("env.episode_len", "4"),
    ("env.n_tasks", "5000"),
    ("policy.init_scale", "1.0"),
    ("n_steps", "1000"),
    ("n_seeds", "5"),
]

PRESETS = {"hard_lock": HARD_LOCK, "chain": CHAIN}


def experiment(name: str, algorithm: str, **overrides) -> ExperimentConfig:
    """``experiment("chain", "Luffy", n_steps=200)``; dotted keys use ``__``."""
    pairs = list(PRESETS[name]) + [("algorithm", algorithm)]
    pairs += [(k.replace("__", "."), str(v)) for k, v in overrides.items()]
    return ExperimentConfig.from_pairs(pairs)
