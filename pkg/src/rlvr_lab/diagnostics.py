"""Per-step metrics, curve smoothing, run comparison, and CSV I/O."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "step",
    "mean_reward_on",
    "mean_reward_group",
    "entropy",
    "grad_norm",
    "clip_fraction_on",
    "mean_off_ratio",
    "loss",
)

FINAL_WINDOW = 0.1


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    mean_reward_on: float
    mean_reward_group: float
    entropy: float
    grad_norm: float
    clip_fraction_on: float
    mean_off_ratio: float
    loss: float

    def __post_init__(self):
        for f in fields(self)[1:]:
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"{f.name} is not finite")
        if not 0.0 <= self.clip_fraction_on <= 1.0:
            raise ValueError("clip_fraction_on outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def curve(series: Sequence[MetricsRecord], field: str, smoothing_window: int = 1):
    """Centred moving average of ``field``; windows are truncated at the ends."""
    if smoothing_window < 1:
        raise ValueError("smoothing_window must be >= 1")
    if field not in CSV_COLUMNS or field == "step":
        raise ValueError(f"unknown metrics field {field!r}")
    steps = [r.step for r in series]
    values = np.array([getattr(r, field) for r in series], dtype=np.float64)
    n = len(values)
    half_lo = (smoothing_window - 1) // 2
    half_hi = smoothing_window - 1 - half_lo
    out = []
    for i in range(n):
        lo, hi = max(0, i - half_lo), min(n, i + half_hi + 1)
        out.append((steps[i], float(values[lo:hi].mean())))
    return out


def final_window(values: Sequence[float], fraction: float = FINAL_WINDOW) -> float:
    """Mean of the last ``fraction`` of a series (at least one point)."""
    values = np.asarray(values, dtype=np.float64)
    k = max(1, int(math.ceil(len(values) * fraction)))
    return float(values[-k:].mean())


@dataclass(frozen=True)
class ComparisonRow:
    label: str
    n_seeds: int
    n_steps: int
    final_reward: float
    peak_reward: float
    auc_reward: float
    final_entropy: float


def _summarize(series: Sequence[MetricsRecord]) -> tuple[float, float, float, float]:
    rewards = [r.mean_reward_on for r in series]
    return (
        final_window(rewards),
        float(np.max(rewards)),
        float(np.mean(rewards)),
        float(series[-1].entropy),
    )


def compare_runs(runs) -> list[ComparisonRow]:
    """One summary row per label; multiple seeds under a label are median-pooled.

    ``runs`` holds ``(label, series)`` pairs; passing several pairs with the
    same label treats them as seeds of one variant. Longer series are trimmed
    to the shortest one. Rows come back sorted by label.
    """
    runs = list(runs)
    if len(runs) < 2:
        raise ValueError("compare_runs needs at least two runs")
    shortest = min(len(s) for _, s in runs)
    if shortest == 0:
        raise ValueError("empty metrics series")
    if any(len(s) != shortest for _, s in runs):
        log.warning("runs have different step counts; trimming to %d", shortest)
    by_label: dict[str, list] = {}
    for label, series in runs:
        by_label.setdefault(label, []).append(_summarize(list(series)[:shortest]))
    rows = []
    for label in sorted(by_label):
        stats = np.median(np.array(by_label[label]), axis=0)
        rows.append(ComparisonRow(label, len(by_label[label]), shortest, *map(float, stats)))
    return rows


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.16e}"


def write_metrics_csv(path, series: Sequence[MetricsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in series:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def read_metrics_csv(path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected CSV header {header}")
        out = []
        for row in reader:
            vals = dict(zip(header, row))
            out.append(MetricsRecord(int(vals["step"]), *(float(vals[c]) for c in CSV_COLUMNS[1:])))
    return out


def write_comparison_csv(path, rows: Sequence[ComparisonRow]) -> None:
    cols = [f.name for f in fields(ComparisonRow)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r.label] + [_fmt(getattr(r, c)) for c in cols[1:]])


def format_summary(rows: Sequence[ComparisonRow]) -> str:
    head = f"{'label':<24} {'seeds':>5} {'steps':>6} {'final':>8} {'peak':>8} {'auc':>8} {'entropy':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r.label:<24} {r.n_seeds:>5d} {r.n_steps:>6d} {r.final_reward:>8.4f} "
            f"{r.peak_reward:>8.4f} {r.auc_reward:>8.4f} {r.final_entropy:>8.4f}"
        )
    return "\n".join(lines) + "\n"
