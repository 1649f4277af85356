"""Group advantages, clipped and shaped surrogates, and their exact gradients.

Every objective here is a sum of per-token terms ``g(pi)`` where ``pi`` is the
temperature-1 probability of the emitted token at its state. Its gradient
with respect to row ``s`` of the logits is ``dg/dlog(pi) * (onehot - p_s)``,
so each loss only has to produce one weight per token; the scatter kernel
does the rest.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .core import AlgorithmConfig, LengthNorm, RolloutGroup, Trajectory
from .policy import PolicyTable


class AdvantageMode(str, enum.Enum):
    STD_NORMALIZED = "StdNormalized"
    MEAN_ONLY = "MeanOnly"


@dataclass(frozen=True)
class AdvantageVector:
    values: np.ndarray
    mode: AdvantageMode
    degenerate: bool = False

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]


def group_advantages(rewards: Sequence[float], mode=AdvantageMode.STD_NORMALIZED) -> AdvantageVector:
    """Rewards centred on the group mean, optionally divided by the population std.

    An all-equal group carries no signal: the result is all zeros and is
    flagged ``degenerate``.
    """
    mode = AdvantageMode(mode)
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or len(r) < 2:
        raise ValueError("a group needs at least two rewards")
    centred = r - r.mean()
    std = r.std()
    if std == 0.0:
        return AdvantageVector(np.zeros_like(r), mode, True)
    if mode is AdvantageMode.STD_NORMALIZED:
        return AdvantageVector(centred / std, mode)
    return AdvantageVector(centred, mode)


def clip_surrogate(ratio: float, advantage: float, epsilon: float) -> tuple[float, bool]:
    """``min(r*A, clip(r, 1-eps, 1+eps)*A)`` and whether the clipped branch won."""
    unclipped = ratio * advantage
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon) * advantage
    if clipped < unclipped:
        return clipped, True
    return unclipped, False


def shaping_f(x, gamma: float):
    return x / (x + gamma)


def shaping_f_prime(x, gamma: float):
    return gamma / (x + gamma) ** 2


@dataclass
class Batch:
    """Rollout groups packed into padded ``(n, Lmax)`` arrays."""

    states: np.ndarray
    tokens: np.ndarray
    behavior: np.ndarray
    mask: np.ndarray
    rewards: np.ndarray
    is_off: np.ndarray
    group: np.ndarray
    n_groups: int
    episode_len: int
    prompt_ids: list = field(default_factory=list)

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def group_rows(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.group == g)


def pack_groups(policy: PolicyTable, groups: Sequence[RolloutGroup]) -> Batch:
    if not groups:
        raise ValueError("no rollout groups")
    trajs: list[Trajectory] = []
    gid = []
    for g, grp in enumerate(groups):
        members = grp.trajectories
        trajs.extend(members)
        gid.extend([g] * len(members))
    n = len(trajs)
    lmax = max(len(t) for t in trajs)
    if lmax == 0:
        raise ValueError("empty trajectories")
    states = np.zeros((n, lmax), dtype=np.int64)
    tokens = np.zeros((n, lmax), dtype=np.int64)
    behavior = np.ones((n, lmax))
    mask = np.zeros((n, lmax), dtype=bool)
    for i, t in enumerate(trajs):
        k = len(t)
        states[i, :k] = policy.trajectory_states(t)
        tokens[i, :k] = t.tokens
        behavior[i, :k] = t.behavior_probs
        mask[i, :k] = True
    rewards = np.array([np.nan if t.reward is None else t.reward for t in trajs])
    if np.any(np.isnan(rewards)):
        raise ValueError("all trajectories must be scored before computing a loss")
    episode_len = policy.encoder.spec.episode_len if policy.encoder is not None else lmax
    return Batch(
        states, tokens, behavior, mask, rewards,
        np.array([t.source.value == "OffPolicy" for t in trajs]),
        np.array(gid, dtype=np.int64), len(groups), episode_len,
        [grp.prompt_id for grp in groups],
    )


def batch_advantages(batch: Batch, std_norm: bool, members: Optional[np.ndarray] = None):
    """Per-trajectory advantages over each group's ``members`` (default: everyone).

    Returns ``(advantages, degenerate_groups)``; non-members get advantage 0.
    """
    sel = np.ones(len(batch.rewards), dtype=bool) if members is None else members
    G = batch.n_groups
    w = sel.astype(np.float64)
    count = np.bincount(batch.group, weights=w, minlength=G)
    safe = np.maximum(count, 1.0)
    mean = np.bincount(batch.group, weights=w * batch.rewards, minlength=G) / safe
    centred = (batch.rewards - mean[batch.group]) * w
    var = np.bincount(batch.group, weights=centred**2, minlength=G) / safe
    std = np.sqrt(var)
    degenerate = std == 0.0
    adv = centred.copy()
    adv[degenerate[batch.group]] = 0.0
    if std_norm:
        ok = ~degenerate[batch.group]
        adv[ok] = adv[ok] / std[batch.group][ok]
    return adv, degenerate


def group_normalizer(batch: Batch, length_norm: LengthNorm, members: Optional[np.ndarray] = None):
    """``1 / (G * Z_g)`` for every trajectory, with ``Z_g`` per ``length_norm``."""
    sel = np.ones(len(batch.rewards), dtype=bool) if members is None else members
    G = batch.n_groups
    if LengthNorm(length_norm) is LengthNorm.PER_TOKEN_Z:
        z = np.bincount(batch.group, weights=batch.lengths * sel, minlength=G)
    else:
        z = np.bincount(batch.group, weights=sel.astype(np.float64), minlength=G) * batch.episode_len
    z = np.maximum(z, 1e-300)
    return 1.0 / (G * z[batch.group])


@dataclass
class LossReport:
    objective: float
    grad: np.ndarray
    clip_fraction_on: float = 0.0
    mean_off_ratio: float = 0.0
    entropy_term: float = 0.0
    entropy: float = 0.0
    degenerate_groups: int = 0


def _entropy_part(probs, batch: Batch, token_sel: np.ndarray, coef: float):
    """Mean entropy over selected tokens, and ``coef`` times its gradient."""
    S = probs.shape[0]
    with np.errstate(divide="ignore"):
        logp = np.where(probs > 0, np.log(probs), 0.0)
    h = -(probs * logp).sum(axis=1)
    sel_states = batch.states[token_sel]
    if sel_states.size == 0:
        return 0.0, np.zeros_like(probs)
    mean_h = float(h[sel_states].mean())
    if coef == 0.0:
        return mean_h, np.zeros_like(probs)
    counts = np.bincount(sel_states, minlength=S) / sel_states.size
    grad = -(coef * counts)[:, None] * probs * (logp + h[:, None])
    return mean_h, grad


def surrogate_loss(
    policy: PolicyTable,
    batch: Batch,
    cfg: AlgorithmConfig,
    *,
    shaping_gamma: Optional[float],
    use_off_policy: bool = True,
) -> LossReport:
    """On-policy CLIP terms plus (optionally shaped) off-policy terms plus entropy.

    With ``use_off_policy=False`` off-policy trajectories are ignored entirely,
    including in the group statistics.
    """
    probs = policy.probs(1.0)
    mask = batch.mask
    on_traj = ~batch.is_off
    members = np.ones_like(on_traj) if use_off_policy else on_traj
    adv, degenerate = batch_advantages(batch, cfg.advantage_std_norm, members)
    norm = group_normalizer(batch, cfg.length_norm, members)

    pi = probs[batch.states, batch.tokens]
    ratio = pi / batch.behavior
    A = adv[:, None] * np.ones_like(ratio)
    scale = norm[:, None] * mask

    value = ratio * A
    weight = ratio * A  # d(term)/d(log pi)
    clipped = np.zeros_like(mask)

    on_tok = mask & on_traj[:, None]
    off_tok = mask & batch.is_off[:, None] & use_off_policy
    eps = cfg.clip_epsilon

    def apply_clip(region):
        active = region & (((A > 0) & (ratio > 1 + eps)) | ((A < 0) & (ratio < 1 - eps)))
        value[active] = np.clip(ratio[active], 1 - eps, 1 + eps) * A[active]
        weight[active] = 0.0
        return active

    if cfg.use_on_policy_clip:
        clipped |= apply_clip(on_tok)
    if use_off_policy:
        if shaping_gamma is not None:
            value[off_tok] = shaping_f(ratio[off_tok], shaping_gamma) * A[off_tok]
            weight[off_tok] = (
                shaping_f_prime(ratio[off_tok], shaping_gamma) * ratio[off_tok] * A[off_tok]
            )
        elif cfg.use_off_policy_clip:
            apply_clip(off_tok)

    live = on_tok | off_tok
    value = np.where(live, value * scale, 0.0)
    weight = np.where(live, weight * scale, 0.0)
    pg_objective = float(value.sum())
    grad = kernels.scatter_token_grad(probs, batch.states, batch.tokens, weight)

    ent_sel = (mask if cfg.entropy_on_off_policy and use_off_policy else on_tok)
    mean_h, ent_grad = _entropy_part(probs, batch, ent_sel, cfg.entropy_coef)
    grad += ent_grad

    n_on = int(on_tok.sum())
    n_off = int(off_tok.sum())
    if n_off:
        r_off = ratio[off_tok]
        shown = shaping_f(r_off, shaping_gamma) if shaping_gamma is not None else r_off
        mean_off = float(shown.mean())
    else:
        mean_off = 0.0
    return LossReport(
        objective=pg_objective + cfg.entropy_coef * mean_h,
        grad=grad,
        clip_fraction_on=float(clipped[on_tok].sum() / n_on) if n_on else 0.0,
        mean_off_ratio=mean_off,
        entropy_term=cfg.entropy_coef * mean_h,
        entropy=mean_h,
        degenerate_groups=int(degenerate.sum()),
    )


def sft_batch_loss(policy: PolicyTable, batch: Batch, select: Optional[np.ndarray] = None) -> LossReport:
    """Mean log-likelihood over the selected trajectories' tokens (default: off-policy)."""
    sel = batch.is_off if select is None else select
    tok = batch.mask & sel[:, None]
    n = int(tok.sum())
    if n == 0:
        raise ValueError("no tokens to imitate")
    probs = policy.probs(1.0)
    pi = probs[batch.states, batch.tokens]
    logp = np.where(tok, np.log(np.where(tok, pi, 1.0)), 0.0)
    weight = tok / n
    grad = kernels.scatter_token_grad(probs, batch.states, batch.tokens, weight.astype(np.float64))
    h = -(probs * np.log(probs)).sum(axis=1)
    return LossReport(
        objective=float(logp.sum() / n),
        grad=grad,
        mean_off_ratio=float(pi[tok].mean()),
        entropy=float(h[batch.states[tok]].mean()),
    )


def _require_groups(groups):
    if not groups:
        raise ValueError("no rollout groups")


def grpo_loss(policy: PolicyTable, groups: Sequence[RolloutGroup], cfg: AlgorithmConfig) -> LossReport:
    """Clipped GRPO objective over purely on-policy groups (no KL term)."""
    _require_groups(groups)
    if any(g.off_policy for g in groups):
        raise ValueError("grpo_loss takes on-policy groups only")
    batch = pack_groups(policy, groups)
    return surrogate_loss(policy, batch, cfg, shaping_gamma=None, use_off_policy=False)


def mixed_loss(policy: PolicyTable, groups: Sequence[RolloutGroup], cfg: AlgorithmConfig) -> LossReport:
    """Mixed-policy objective: unclipped linear off-policy ratio, union advantages."""
    _require_groups(groups)
    if any(not g.off_policy for g in groups):
        raise ValueError("mixed_loss needs an off-policy trace in every group")
    batch = pack_groups(policy, groups)
    return surrogate_loss(policy, batch, cfg, shaping_gamma=None)


def shaped_loss(policy: PolicyTable, groups: Sequence[RolloutGroup], cfg: AlgorithmConfig) -> LossReport:
    """Mixed-policy objective with ``f(r) = r / (r + gamma)`` on off-policy tokens."""
    _require_groups(groups)
    if cfg.shaping_gamma is None:
        raise ValueError("shaped_loss requires cfg.shaping_gamma")
    if any(not g.off_policy for g in groups):
        raise ValueError("shaped_loss needs an off-policy trace in every group")
    batch = pack_groups(policy, groups)
    return surrogate_loss(policy, batch, cfg, shaping_gamma=cfg.shaping_gamma)


def sft_loss(policy: PolicyTable, off_trajs: Sequence[Trajectory], cfg: Optional[AlgorithmConfig] = None) -> LossReport:
    """Imitation objective: mean token log-probability of the given traces."""
    if not off_trajs:
        raise ValueError("no traces")
    if any(t.source.value != "OffPolicy" for t in off_trajs):
        raise ValueError("sft_loss takes off-policy traces only")
    n = len(off_trajs)
    lmax = max(len(t) for t in off_trajs)
    states = np.zeros((n, lmax), dtype=np.int64)
    tokens = np.zeros((n, lmax), dtype=np.int64)
    mask = np.zeros((n, lmax), dtype=bool)
    for i, t in enumerate(off_trajs):
        states[i, : len(t)] = policy.trajectory_states(t)
        tokens[i, : len(t)] = t.tokens
        mask[i, : len(t)] = True
    batch = Batch(states, tokens, np.ones((n, lmax)), mask, np.ones(n), np.ones(n, dtype=bool),
                  np.arange(n), n, lmax)
    return sft_batch_loss(policy, batch)


@dataclass
class BoundReport:
    weights: np.ndarray  # per-token bound |f'(r)| * r * (1 - pi) * |A|
    max_abs_grad: np.ndarray  # per-token max over logits of |d term / d logit|
    max_slack: float
    min_slack: float
    violations: int


def gradient_weight_bound_check(
    policy: PolicyTable,
    off_traj: Trajectory,
    gamma: Optional[float] = None,
    advantage: Optional[float] = None,
    tol: float = 1e-15,
) -> BoundReport:
    """Check the per-logit gradient of every off-policy token term against its bound.

    ``gamma=None`` selects linear shaping. ``advantage`` defaults to the
    trace's reward. The gradient is computed from the full softmax Jacobian
    rather than from the closed form the bound is derived from.
    """
    if advantage is None:
        if off_traj.reward is None:
            raise ValueError("trace must be scored or an advantage given")
        advantage = off_traj.reward
    states = policy.trajectory_states(off_traj)
    p = policy.probs(1.0)[states]  # (L, V)
    tok = np.asarray(off_traj.tokens, dtype=np.int64)
    idx = np.arange(len(tok))
    pi = p[idx, tok]
    r = pi / np.asarray(off_traj.behavior_probs)
    fp = np.ones_like(r) if gamma is None else shaping_f_prime(r, gamma)
    # d pi / d logit_v = pi * (1[v=tok] - p_v); chain through r = pi / phi and f.
    onehot = np.zeros_like(p)
    onehot[idx, tok] = 1.0
    dpi = pi[:, None] * (onehot - p)
    dterm = (fp / np.asarray(off_traj.behavior_probs))[:, None] * dpi * advantage
    max_abs = np.abs(dterm).max(axis=1)
    bound = np.abs(fp) * r * (1.0 - pi) * abs(advantage)
    slack = bound - max_abs
    return BoundReport(
        weights=bound,
        max_abs_grad=max_abs,
        max_slack=float(slack.max()),
        min_slack=float(slack.min()),
        violations=int(np.sum(max_abs > bound * (1 + 1e-12) + tol)),
    )
