"""Self-contained verification suites behind ``rlvr-lab verify``.

Each suite returns a :class:`SuiteResult` whose ``checks`` list records
every individual comparison; a suite passes only if all checks do.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Algorithm, AlgorithmConfig, LengthNorm, RolloutGroup, Source, Trajectory
from .env import EnvSpec, TaskSet, oracle_trace
from .objective import (
    AdvantageMode,
    grpo_loss,
    group_advantages,
    mixed_loss,
    sft_loss,
    shaped_loss,
)
from .policy import PolicyTable, rollout_arrays
from .theorem import QuadraticFiniteSum, ScheduleSpec, theorem_harness
from .variance import closed_form_variance, monte_carlo_variance, shaped_mean_closed_form

FD_STEP = 1e-5
FD_TOL = 1e-5
GAMMAS = (0.05, 0.1, 0.3, 0.5)
THEOREM_KS = (100, 400, 1600)


@dataclass
class Check:
    name: str
    passed: bool
    value: float = float("nan")
    limit: float = float("nan")
    detail: str = ""


@dataclass
class SuiteResult:
    suite: str
    checks: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def add(self, name, passed, value=float("nan"), limit=float("nan"), detail=""):
        self.checks.append(Check(name, bool(passed), float(value), float(limit), detail))

    def to_record(self) -> dict:
        return {
            "suite": self.suite,
            "passed": self.passed,
            "seconds": self.seconds,
            "checks": [c.__dict__ for c in self.checks],
            "failures": [c.name for c in self.failures],
        }


# -- gradients ---------------------------------------------------------------


@dataclass
class GradientInstance:
    policy: PolicyTable
    groups: list
    off_trajs: list
    cfg_grpo: AlgorithmConfig
    cfg_mixed: AlgorithmConfig
    cfg_shaped: AlgorithmConfig


def _random_rewards(rng, k):
    while True:
        r = rng.integers(0, 2, size=k).astype(float)
        if r.min() != r.max():
            return r


def random_instance(rng: np.random.Generator, n_groups: int = 2, unit_off_probs: bool = True) -> GradientInstance:
    """Small lock task (S <= 10, V <= 6, L <= 5) with 1 off + 3 on rollouts per group.

    Rollouts come from a perturbed copy of the policy so importance ratios
    differ from 1 and some on-policy terms are clipped. Rewards are drawn at
    random (never all-equal) so every group carries signal.
    """
    eps = 0.2
    while True:
        V = int(rng.integers(2, 7))
        L = int(rng.integers(1, 6))
        n_tasks = max(1, min(n_groups, 10 // L))
        spec = EnvSpec("CombinationLock", V, L, seed=int(rng.integers(1 << 30)))
        taskset = TaskSet.generate(spec, min(n_tasks, spec.capacity))
        logits = rng.normal(0.0, 1.0, (taskset.n_states, V))
        policy = PolicyTable(logits, taskset)
        old = PolicyTable(logits + rng.normal(0.0, 0.4, logits.shape), taskset)
        groups_on, groups_mixed, off_trajs = [], [], []
        for r, inst in enumerate(taskset.instances):
            tok, prob, _ = rollout_arrays(old, np.full(4, r), 1.0, rng)
            on = [Trajectory(inst.prompt_id, tok[k], prob[k], Source.ON_POLICY) for k in range(4)]
            for traj, rew in zip(on, _random_rewards(rng, 4)):
                traj.reward = rew
            phi = 1.0 if unit_off_probs else float(rng.uniform(0.3, 1.0))
            off = oracle_trace(inst, teacher_prob=phi)
            off_trajs.append(off)
            groups_on.append(RolloutGroup(inst.prompt_id, on))
            on3 = [Trajectory(t.prompt_id, t.tokens, t.behavior_probs, t.source) for t in on[:3]]
            for traj, rew in zip(on3, _random_rewards(rng, 3)):
                traj.reward = rew
            groups_mixed.append(RolloutGroup(inst.prompt_id, on3, [off]))
        # Central differences are meaningless across the clip kink.
        ratios = []
        for grp in groups_on + groups_mixed:
            for t in grp.on_policy:
                _, pt = _token_probs(policy, t)
                ratios.extend(pt / np.asarray(t.behavior_probs))
        ratios = np.asarray(ratios)
        if np.min(np.abs(np.abs(ratios - 1.0) - eps)) > 1e-3:
            break
    base = dict(clip_epsilon=eps, entropy_coef=float(rng.uniform(0.0, 0.05)),
                advantage_std_norm=bool(rng.integers(2)),
                length_norm=LengthNorm.PER_TOKEN_Z if rng.integers(2) else LengthNorm.CONSTANT_BUDGET)
    return GradientInstance(
        policy,
        groups_on + groups_mixed,
        off_trajs,
        AlgorithmConfig.preset(Algorithm.ON_POLICY_GRPO, **base),
        AlgorithmConfig.preset(Algorithm.MIXED_POLICY, **base),
        AlgorithmConfig.preset(Algorithm.LUFFY_WITH_CLIP, shaping_gamma=float(rng.uniform(0.05, 0.5)), **base),
    )


def _token_probs(policy, traj):
    states = policy.trajectory_states(traj)
    return states, policy.probs()[states, np.asarray(traj.tokens)]


def finite_difference_grad(objective: Callable[[np.ndarray], float], logits: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    grad = np.zeros_like(logits)
    for idx in np.ndindex(*logits.shape):
        plus = logits.copy()
        plus[idx] += h
        minus = logits.copy()
        minus[idx] -= h
        grad[idx] = (objective(plus) - objective(minus)) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def loss_cases(inst: GradientInstance):
    """``(name, loss(policy) -> LossReport)`` for every loss on one instance."""
    n = len(inst.groups) // 2
    on_groups, mixed_groups = inst.groups[:n], inst.groups[n:]
    return [
        ("grpo_loss", lambda p: grpo_loss(p, on_groups, inst.cfg_grpo)),
        ("mixed_loss", lambda p: mixed_loss(p, mixed_groups, inst.cfg_mixed)),
        ("shaped_loss", lambda p: shaped_loss(p, mixed_groups, inst.cfg_shaped)),
        ("sft_loss", lambda p: sft_loss(p, inst.off_trajs)),
    ]


def gradient_errors(inst: GradientInstance) -> dict:
    out = {}
    enc = inst.policy.encoder
    for name, fn in loss_cases(inst):
        analytic = fn(inst.policy).grad
        numeric = finite_difference_grad(lambda z: fn(PolicyTable(z, enc)).objective, inst.policy.logits)
        out[name] = relative_error(analytic, numeric)
    return out


def suite_gradients(n_instances: int = 50, seed: int | None = None) -> SuiteResult:
    res = SuiteResult("gradients")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for k in range(n_instances):
        inst = random_instance(rng, unit_off_probs=(k % 2 == 0))
        for name, err in gradient_errors(inst).items():
            worst[name] = max(worst.get(name, 0.0), err)
    for name, err in worst.items():
        res.add(f"{name} finite-difference agreement", err < FD_TOL, err, FD_TOL,
                f"max relative error over {n_instances} instances")
    res.seconds = time.perf_counter() - t0
    return res


# -- advantages --------------------------------------------------------------


def suite_advantages(n_vectors: int = 10_000, seed: int | None = 0) -> SuiteResult:
    res = SuiteResult("advantages")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_mean = worst_std = worst_mean_only = 0.0
    for _ in range(n_vectors):
        k = int(rng.integers(2, 17))
        r = _random_rewards(rng, k)
        a = group_advantages(r, AdvantageMode.STD_NORMALIZED).values
        worst_mean = max(worst_mean, abs(a.mean()))
        worst_std = max(worst_std, abs(a.std() - 1.0))
        b = group_advantages(r, AdvantageMode.MEAN_ONLY).values
        worst_mean_only = max(worst_mean_only, abs(b.mean()))
    res.add("StdNormalized mean is 0", worst_mean <= 1e-10, worst_mean, 1e-10)
    res.add("StdNormalized population std is 1", worst_std <= 1e-10, worst_std, 1e-10)
    res.add("MeanOnly mean is 0", worst_mean_only <= 1e-10, worst_mean_only, 1e-10)

    got = group_advantages([1, 0, 0, 0], AdvantageMode.STD_NORMALIZED).values
    want = np.array([math.sqrt(3), -1 / math.sqrt(3), -1 / math.sqrt(3), -1 / math.sqrt(3)])
    err = float(np.max(np.abs(got - want)))
    res.add("[1,0,0,0] -> [sqrt3, -1/sqrt3, ...]", err <= 1e-9, err, 1e-9)

    deg = group_advantages([1, 1, 1, 1])
    res.add("all-equal group is degenerate", deg.degenerate and not np.any(deg.values))

    ok = True
    for n_on in range(1, 16):
        for mode in AdvantageMode:
            a = group_advantages([0.0] * n_on + [1.0], mode).values
            ok &= bool(a[-1] > 0 and np.all(a[-1] > a[:-1]))
    res.add("lone successful off-policy trace gets the top advantage", ok)
    res.seconds = time.perf_counter() - t0
    return res


# -- variance ----------------------------------------------------------------


def suite_variance(n_samples: int = 10**6, seed: int = 0) -> SuiteResult:
    res = SuiteResult("variance")
    t0 = time.perf_counter()
    for g in GAMMAS:
        rep = monte_carlo_variance(g, n_samples, seed)
        dev_raw = abs(rep.mc_var_raw - 1.0) / rep.mc_stderr_raw
        res.add(f"gamma={g}: Var[x] within 3 se of 1", dev_raw <= 3, dev_raw, 3)
        res.add(f"gamma={g}: Var[f(x)] < Var[x]", rep.mc_var_shaped < rep.mc_var_raw,
                rep.mc_var_shaped, rep.mc_var_raw)
        dev = abs(rep.mc_var_shaped - rep.closed_form_var) / rep.mc_stderr
        res.add(f"gamma={g}: Var[f(x)] within 3 se of closed form", dev <= 3, dev, 3,
                f"mc={rep.mc_var_shaped:.6g} closed={rep.closed_form_var:.6g}")
        dev_mean = abs(rep.mc_mean_shaped - shaped_mean_closed_form(g)) / rep.mc_stderr_mean_shaped
        res.add(f"gamma={g}: E[f(x)] within 3 se of closed form", dev_mean <= 3, dev_mean, 3)
        res.add(f"gamma={g}: closed form below 1", closed_form_variance(g) < 1.0, closed_form_variance(g), 1.0)
    res.seconds = time.perf_counter() - t0
    return res


# -- theorem -----------------------------------------------------------------


def suite_theorem(n_seeds: int = 20, seed: int = 0) -> SuiteResult:
    res = SuiteResult("theorem")
    t0 = time.perf_counter()
    obj = QuadraticFiniteSum(n=50, d=10, seed=seed)
    sched = ScheduleSpec(weight_bounds=(0.5, 2.0))
    bounds = {}
    for K in THEOREM_KS:
        rep = theorem_harness(obj, sched, K, n_seeds=n_seeds, seed=seed + K)
        bounds[K] = rep.bound
        res.add(f"K={K}: min E||grad J||^2 <= bound", rep.passed, rep.observed, rep.bound,
                f"stderr={rep.observed_stderr:.3g} argmin_k={rep.argmin_k}")
    for K in THEOREM_KS[:-1]:
        ratio = bounds[4 * K] / bounds[K] if 4 * K in bounds else None
        if ratio is not None:
            res.add(f"bound(4*{K}) / bound({K}) == 1/2", abs(ratio - 0.5) <= 1e-12, ratio, 0.5)
    unit = theorem_harness(obj, ScheduleSpec(weight_bounds=(1.0, 1.0)), 400, n_seeds=n_seeds, seed=seed)
    plain = math.sqrt(2 * obj.gap * obj.smoothness / 400) * obj.sigma
    res.add("unit weights reduce to the unweighted bound", abs(unit.bound - plain) <= 1e-12 * plain,
            unit.bound, plain)
    res.add("unit weights: observed <= bound", unit.passed, unit.observed, unit.bound)
    res.seconds = time.perf_counter() - t0
    return res


SUITES = {
    "gradients": suite_gradients,
    "variance": suite_variance,
    "theorem": suite_theorem,
    "advantages": suite_advantages,
}
