"""Convergence-rate harness for importance-weighted SGD ascent.

The objective is a finite sum of concave quadratics
``J_i(theta) = -a_i / 2 * ||theta - c_i||**2`` whose constants are known in
closed form:

* ``grad J = mean(a) * (c_bar - theta)`` so ``J`` is ``mean(a)``-smooth and is
  maximized at the ``a``-weighted centroid ``c_bar``;
* while every step satisfies ``alpha * w * a_i <= 1`` an update is a convex
  combination of ``theta`` and some ``c_i``, so iterates never leave the hull
  of ``{theta_0, c_1, ..., c_n}``; component gradients are then bounded by
  ``sigma = max_i a_i * max_{p in hull} ||p - c_i||``, attained at a vertex.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


class ScheduleKind(str, enum.Enum):
    CONSTANT = "Constant"
    CONST_OVER_SQRT_K = "ConstOverSqrtK"


@dataclass(frozen=True)
class ScheduleSpec:
    """Step-size rule plus importance-weight clamp.

    ``value`` is the constant step for ``Constant`` and ``c`` for
    ``ConstOverSqrtK``; ``value=None`` with ``ConstOverSqrtK`` picks the
    rate-optimal ``c`` from the objective's constants.
    """

    kind: ScheduleKind = ScheduleKind.CONST_OVER_SQRT_K
    value: Optional[float] = None
    weight_bounds: tuple[float, float] = (0.5, 2.0)

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        lo, hi = self.weight_bounds
        if not 0 < lo <= hi:
            raise ValueError("weight bounds need 0 < w_lo <= w_hi")
        if self.value is not None and not self.value > 0:
            raise ValueError("step size constant must be positive")
        if self.kind is ScheduleKind.CONSTANT and self.value is None:
            raise ValueError("Constant schedule needs a step size")


class QuadraticFiniteSum:
    def __init__(self, n: int = 50, d: int = 10, seed: int = 0, curvature=(0.5, 1.5), start_radius: float = 3.0):
        rng = np.random.default_rng(seed)
        self.a = rng.uniform(*curvature, size=n)
        self.centers = rng.standard_normal((n, d))
        direction = rng.standard_normal(d)
        self.theta0 = start_radius * direction / np.linalg.norm(direction)
        self.n, self.d = n, d

    def value(self, theta: np.ndarray) -> np.ndarray:
        diff = theta[..., None, :] - self.centers
        return -0.5 * np.mean(self.a * np.sum(diff**2, axis=-1), axis=-1)

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return np.mean(self.a) * (self.optimum - theta)

    def component_grad(self, theta: np.ndarray, i: np.ndarray) -> np.ndarray:
        return self.a[i, None] * (self.centers[i] - theta)

    @property
    def optimum(self) -> np.ndarray:
        return (self.a[:, None] * self.centers).sum(axis=0) / self.a.sum()

    @property
    def smoothness(self) -> float:
        return float(np.mean(self.a))

    @property
    def sigma(self) -> float:
        verts = np.vstack([self.theta0[None], self.centers])
        dists = np.linalg.norm(verts[:, None, :] - self.centers[None, :, :], axis=-1)
        return float(np.max(self.a[None, :] * dists))

    @property
    def gap(self) -> float:
        """``J(theta*) - J(theta_0)``."""
        return float(self.value(self.optimum) - self.value(self.theta0))


def theorem_c(obj: QuadraticFiniteSum, w_lo: float, w_hi: float) -> float:
    return math.sqrt(2 * obj.gap / (obj.smoothness * obj.sigma**2 * w_lo * w_hi))


def theorem_bound(gap: float, smoothness: float, sigma: float, w_lo: float, w_hi: float, K: int) -> float:
    return math.sqrt(2 * gap * smoothness * w_hi / (K * w_lo)) * sigma


@dataclass
class TheoremReport:
    K: int
    alpha: float
    c: float
    smoothness: float
    sigma: float
    gap: float
    w_lo: float
    w_hi: float
    n_seeds: int
    observed: float  # min over k of the seed-mean of ||grad J(theta_k)||^2
    observed_stderr: float
    argmin_k: int
    bound: float

    @property
    def passed(self) -> bool:
        return self.observed <= self.bound + 3 * self.observed_stderr

    def to_record(self) -> dict:
        out = dict(self.__dict__)
        out["passed"] = self.passed
        return out


def theorem_harness(
    objective: QuadraticFiniteSum,
    schedule: ScheduleSpec,
    K: int,
    n_seeds: int = 20,
    seed: int = 0,
    log_weight_scale: float = 0.5,
) -> TheoremReport:
    """Run ``K`` weighted SGD ascent steps from ``theta_0`` for ``n_seeds`` seeds.

    Per-step weights are lognormal draws clamped to ``schedule.weight_bounds``.
    """
    if K < 1 or n_seeds < 1:
        raise ValueError("K and n_seeds must be positive")
    w_lo, w_hi = schedule.weight_bounds
    c = theorem_c(objective, w_lo, w_hi)
    if schedule.kind is ScheduleKind.CONSTANT:
        alpha = schedule.value
    else:
        if schedule.value is not None:
            c = schedule.value
        alpha = c / math.sqrt(K)
    if alpha * w_hi * objective.a.max() > 1.0:
        raise ValueError("step too large: iterates could leave the region where sigma is certified")

    rng = np.random.default_rng(seed)
    theta = np.repeat(objective.theta0[None], n_seeds, axis=0)
    sq = np.empty((K, n_seeds))
    for k in range(K):
        g = objective.grad(theta)
        sq[k] = np.sum(g**2, axis=1)
        i = rng.integers(objective.n, size=n_seeds)
        w = np.clip(np.exp(log_weight_scale * rng.standard_normal(n_seeds)), w_lo, w_hi)
        theta = theta + alpha * w[:, None] * objective.component_grad(theta, i)

    mean = sq.mean(axis=1)
    k_star = int(np.argmin(mean))
    se = float(sq[k_star].std(ddof=1) / math.sqrt(n_seeds)) if n_seeds > 1 else 0.0
    return TheoremReport(
        K=K, alpha=alpha, c=c, smoothness=objective.smoothness, sigma=objective.sigma,
        gap=objective.gap, w_lo=w_lo, w_hi=w_hi, n_seeds=n_seeds,
        observed=float(mean[k_star]), observed_stderr=se, argmin_k=k_star,
        bound=theorem_bound(objective.gap, objective.smoothness, objective.sigma, w_lo, w_hi, K),
    )
