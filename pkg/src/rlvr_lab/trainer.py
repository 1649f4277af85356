"""Training loop: group assembly, loss dispatch, SGD ascent, checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Algorithm, AlgorithmConfig, LrSchedule, RolloutGroup, Source, Trajectory, score_reward
from .diagnostics import MetricsRecord
from .env import EnvSpec, TaskInstance, TaskSet, oracle_trace
from .objective import Batch, LossReport, sft_batch_loss, surrogate_loss
from .policy import PolicyTable, apply_gradient, rollout_arrays

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, dump_path: Optional[str] = None):
        super().__init__(message)
        self.dump_path = dump_path


@dataclass
class TrainState:
    step: int
    policy: PolicyTable
    rng: np.random.Generator
    metrics: list = field(default_factory=list)

    @classmethod
    def initial(cls, taskset: TaskSet, seed: int, init_scale: float = 0.0) -> "TrainState":
        """Fresh state; ``init_scale > 0`` draws Gaussian logits as a base-model prior."""
        policy = PolicyTable.uniform(taskset)
        if init_scale > 0:
            init_rng = np.random.default_rng([seed, 1])
            policy = PolicyTable(init_scale * init_rng.standard_normal(policy.logits.shape), taskset)
        return cls(0, policy, np.random.default_rng(seed), [])


class OracleCache:
    """Padded teacher traces for every task row, built once per task set."""

    def __init__(self, taskset: TaskSet, cfg: AlgorithmConfig, teacher_prob: float = 1.0):
        if cfg.unit_off_policy_probs:
            teacher_prob = 1.0
        traces = [oracle_trace(inst, cfg.oracle_style, teacher_prob) for inst in taskset.instances]
        L = taskset.spec.episode_len
        n = len(traces)
        self.tokens = np.zeros((n, L), dtype=np.int64)
        self.states = np.zeros((n, L), dtype=np.int64)
        self.behavior = np.ones((n, L))
        self.mask = np.zeros((n, L), dtype=bool)
        policy = PolicyTable.uniform(taskset)
        for r, tr in enumerate(traces):
            k = len(tr)
            self.tokens[r, :k] = tr.tokens
            self.states[r, :k] = policy.trajectory_states(tr)
            self.behavior[r, :k] = tr.behavior_probs
            self.mask[r, :k] = True
        self.rewards = np.array([tr.reward for tr in traces])


def assemble_batch(
    policy: PolicyTable,
    taskset: TaskSet,
    rows: np.ndarray,
    cfg: AlgorithmConfig,
    rng: np.random.Generator,
    oracle: Optional[OracleCache] = None,
) -> Batch:
    """``n_on`` sampled rollouts then ``n_off`` teacher traces for each row."""
    rows = np.asarray(rows, dtype=np.int64)
    G = len(rows)
    L = taskset.spec.episode_len
    n_on, n_off = cfg.n_on, cfg.n_off
    per = n_on + n_off
    states = np.zeros((G, per, L), dtype=np.int64)
    tokens = np.zeros((G, per, L), dtype=np.int64)
    behavior = np.ones((G, per, L))
    mask = np.zeros((G, per, L), dtype=bool)
    rewards = np.zeros((G, per))
    if n_on:
        on_rows = np.repeat(rows, n_on)
        tok, prob, st = rollout_arrays(policy, on_rows, cfg.temperature, rng)
        tokens[:, :n_on] = tok.reshape(G, n_on, L)
        behavior[:, :n_on] = prob.reshape(G, n_on, L)
        states[:, :n_on] = st.reshape(G, n_on, L)
        mask[:, :n_on] = True
        rewards[:, :n_on] = taskset.rewards(on_rows, tok).reshape(G, n_on)
    if n_off:
        if oracle is None:
            oracle = OracleCache(taskset, cfg)
        tokens[:, n_on:] = oracle.tokens[rows][:, None]
        states[:, n_on:] = oracle.states[rows][:, None]
        behavior[:, n_on:] = oracle.behavior[rows][:, None]
        mask[:, n_on:] = oracle.mask[rows][:, None]
        rewards[:, n_on:] = oracle.rewards[rows][:, None]
    is_off = np.zeros((G, per), dtype=bool)
    is_off[:, n_on:] = True
    return Batch(
        states.reshape(G * per, L), tokens.reshape(G * per, L), behavior.reshape(G * per, L),
        mask.reshape(G * per, L), rewards.ravel(), is_off.ravel(),
        np.repeat(np.arange(G), per), G, L,
        [taskset.instances[r].prompt_id for r in rows],
    )


def batch_to_groups(batch: Batch) -> list[RolloutGroup]:
    groups = []
    for g in range(batch.n_groups):
        on, off = [], []
        for i in batch.group_rows(g):
            k = int(batch.mask[i].sum())
            src = Source.OFF_POLICY if batch.is_off[i] else Source.ON_POLICY
            traj = Trajectory(batch.prompt_ids[g], batch.tokens[i, :k].tolist(),
                              batch.behavior[i, :k].tolist(), src)
            traj.reward = batch.rewards[i]
            (off if batch.is_off[i] else on).append(traj)
        groups.append(RolloutGroup(batch.prompt_ids[g], on, off))
    return groups


def assemble_groups(
    policy: PolicyTable,
    tasks: Sequence[TaskInstance],
    cfg: AlgorithmConfig,
    rng_seed: int = 0,
) -> list[RolloutGroup]:
    """Sample and score one rollout group per task."""
    taskset = policy.encoder
    rows = np.array([taskset.row_of[t.prompt_id] for t in tasks], dtype=np.int64)
    batch = assemble_batch(policy, taskset, rows, cfg, np.random.default_rng(rng_seed))
    groups = batch_to_groups(batch)
    for grp, task in zip(groups, tasks):
        for traj in grp.trajectories:
            score_reward(traj, task.truth)
    return groups


def in_sft_phase(cfg: AlgorithmConfig, step: int, n_steps: Optional[int]) -> bool:
    if cfg.algorithm is Algorithm.SFT_ONLY:
        return True
    if cfg.algorithm is Algorithm.SFT_THEN_RL:
        if n_steps is None:
            raise ValueError("SftThenRl needs the total step budget")
        return step < int(round(cfg.sft_fraction * n_steps))
    return False


def compute_loss(policy: PolicyTable, batch: Batch, cfg: AlgorithmConfig, sft_phase: bool = False) -> LossReport:
    alg = cfg.algorithm
    if sft_phase:
        return sft_batch_loss(policy, batch)
    if alg is Algorithm.MIXED_POLICY:
        return surrogate_loss(policy, batch, cfg, shaping_gamma=None)
    if alg in (Algorithm.LUFFY, Algorithm.LUFFY_WITH_CLIP):
        return surrogate_loss(policy, batch, cfg, shaping_gamma=cfg.shaping_gamma)
    rl = surrogate_loss(policy, batch, cfg, shaping_gamma=None, use_off_policy=False)
    if alg is Algorithm.RL_WITH_SFT_LOSS:
        sft = sft_batch_loss(policy, batch)
        rl.objective += cfg.sft_coef * sft.objective
        rl.grad = rl.grad + cfg.sft_coef * sft.grad
    return rl


def step_size(cfg: AlgorithmConfig, n_steps: Optional[int]) -> float:
    if cfg.lr_schedule is LrSchedule.CONST_OVER_SQRT_K:
        if not n_steps:
            raise ValueError("ConstOverSqrtK needs the total step budget")
        return cfg.learning_rate / math.sqrt(n_steps)
    return cfg.learning_rate


def _dump_batch(batch: Batch, report: LossReport, dump_dir, step: int) -> Optional[str]:
    if dump_dir is None:
        return None
    bad = np.flatnonzero(~np.isfinite(report.grad).all(axis=1))
    path = Path(dump_dir) / f"abort_step{step}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump({
            "step": step,
            "objective": repr(report.objective),
            "bad_state_rows": bad.tolist(),
            "prompt_ids": list(batch.prompt_ids),
            "tokens": batch.tokens.tolist(),
            "behavior": batch.behavior.tolist(),
            "rewards": batch.rewards.tolist(),
        }, fh)
    return str(path)


def train_step(
    state: TrainState,
    taskset: TaskSet,
    cfg: AlgorithmConfig,
    n_steps: Optional[int] = None,
    oracle: Optional[OracleCache] = None,
    dump_dir=None,
) -> tuple[TrainState, MetricsRecord]:
    """One rollout batch followed by ``cfg.updates_per_batch`` ascent steps."""
    rng = state.rng
    n_prompts = min(cfg.batch_prompts, len(taskset))
    rows = rng.choice(len(taskset), size=n_prompts, replace=False)
    batch = assemble_batch(state.policy, taskset, rows, cfg, rng, oracle)
    sft_phase = in_sft_phase(cfg, state.step, n_steps)
    alpha = step_size(cfg, n_steps)

    policy = state.policy
    first = None
    clip_fracs = []
    for _ in range(cfg.updates_per_batch):
        report = compute_loss(policy, batch, cfg, sft_phase)
        if not (math.isfinite(report.objective) and np.all(np.isfinite(report.grad))):
            path = _dump_batch(batch, report, dump_dir, state.step)
            raise TrainingAborted(f"non-finite loss at step {state.step}", path)
        if first is None:
            first = report
        clip_fracs.append(report.clip_fraction_on)
        policy = apply_gradient(policy, report.grad, alpha)
        if not np.all(np.isfinite(policy.logits)):
            path = _dump_batch(batch, report, dump_dir, state.step)
            raise TrainingAborted(f"logits overflowed at step {state.step}", path)

    on = ~batch.is_off
    mean_on = float(batch.rewards[on].mean()) if on.any() else float(batch.rewards.mean())
    record = MetricsRecord(
        step=state.step,
        mean_reward_on=mean_on,
        mean_reward_group=float(batch.rewards.mean()),
        entropy=first.entropy,
        grad_norm=float(np.linalg.norm(first.grad)),
        clip_fraction_on=float(np.mean(clip_fracs)),
        mean_off_ratio=first.mean_off_ratio,
        loss=first.objective,
    )
    state.metrics.append(record)
    return TrainState(state.step + 1, policy, rng, state.metrics), record


def save_checkpoint(path, state: TrainState, cfg: AlgorithmConfig, spec: EnvSpec, n_tasks: int, n_steps: int) -> None:
    payload = {
        "step": state.step,
        "policy": state.policy.to_record(),
        "rng": state.rng.bit_generator.state,
        "metrics": [m.to_dict() for m in state.metrics],
        "algorithm": cfg.to_dict(),
        "env": spec.to_dict(),
        "n_tasks": n_tasks,
        "n_steps": n_steps,
    }
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(payload))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[TrainState, AlgorithmConfig, EnvSpec, int, int]:
    payload = json.loads(Path(path).read_text())
    spec = EnvSpec(**payload["env"])
    cfg = AlgorithmConfig.from_dict(payload["algorithm"])
    taskset = TaskSet.generate(spec, payload["n_tasks"])
    rng = np.random.default_rng()
    rng.bit_generator.state = payload["rng"]
    state = TrainState(
        payload["step"],
        PolicyTable.from_record(payload["policy"], taskset),
        rng,
        [MetricsRecord(**m) for m in payload["metrics"]],
    )
    return state, cfg, spec, payload["n_tasks"], payload["n_steps"]


def run_training(
    cfg: AlgorithmConfig,
    env_spec: EnvSpec,
    n_steps: int,
    n_tasks: int = 64,
    *,
    init_scale: float = 0.0,
    state: Optional[TrainState] = None,
    checkpoint_every: int = 0,
    checkpoint_path=None,
    stop_after: Optional[int] = None,
    dump_dir=None,
    callback: Optional[Callable[[TrainState, MetricsRecord], None]] = None,
) -> TrainState:
    """Run ``n_steps`` training steps (resuming from ``state`` if given).

    ``stop_after`` halts early at that step count without changing the
    schedule, which is how a resumable partial run is produced.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    taskset = TaskSet.generate(env_spec, n_tasks)
    if state is None:
        state = TrainState.initial(taskset, cfg.seed, init_scale)
    elif state.policy.encoder is None:
        state.policy = PolicyTable(state.policy.logits, taskset)
    oracle = OracleCache(taskset, cfg) if cfg.n_off else None
    end = n_steps if stop_after is None else min(stop_after, n_steps)
    while state.step < end:
        state, record = train_step(state, taskset, cfg, n_steps, oracle, dump_dir)
        if callback is not None:
            callback(state, record)
        if checkpoint_path is not None and checkpoint_every and state.step % checkpoint_every == 0:
            save_checkpoint(checkpoint_path, state, cfg, env_spec, n_tasks, n_steps)
    return state
