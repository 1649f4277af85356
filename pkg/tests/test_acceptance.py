"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line that is printed in the pytest terminal
summary (see ``conftest.py``). Run alone with ``pytest tests/test_acceptance.py``.
"""

import csv
import json
import math
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from rlvr_lab.cli import main as cli
from rlvr_lab.diagnostics import read_metrics_csv
from rlvr_lab.env import EnvSpec, TaskSet, oracle_trace
from rlvr_lab.objective import gradient_weight_bound_check
from rlvr_lab.policy import PolicyTable
from rlvr_lab.trainer import load_checkpoint, run_training, save_checkpoint
from rlvr_lab.verify import suite_advantages, suite_gradients, suite_theorem, suite_variance

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
RESULTS: list[str] = []


def report(n, name, ok, detail):
    RESULTS.append(f"[{n}] {'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


def train_dir(tmp_root, cfg_name, *extra):
    out = tmp_root / cfg_name
    t0 = time.perf_counter()
    rc = cli(["train", "--config", str(CONFIGS / f"{cfg_name}.cfg"), "--out", str(out), "--jobs", "5", *extra])
    assert rc == 0
    return out, time.perf_counter() - t0


def seed_series(run_dir):
    return [read_metrics_csv(p) for p in sorted(run_dir.glob("seed_*/metrics.csv"))]


def compare(tmp_root, *dirs):
    out = tmp_root / ("cmp_" + "_".join(d.name for d in dirs))
    assert cli(["compare", *map(str, dirs), "--out", str(out)]) == 0
    with open(out / "compare.csv") as fh:
        return {row["label"]: row for row in csv.DictReader(fh)}


def test_1_gradient_exactness():
    res = suite_gradients(n_instances=50, seed=None)
    worst = max(c.value for c in res.checks)
    ok = res.passed and res.seconds < 60
    report(1, "gradient exactness", ok,
           f"max relative error {worst:.2e} (< 1e-05) over 4 losses x 50 instances, {res.seconds:.1f}s")


def test_2_advantage_properties():
    res = suite_advantages(n_vectors=10_000, seed=None)
    vals = {c.name: c.value for c in res.checks}
    report(2, "advantage properties", res.passed,
           f"|mean| {vals['StdNormalized mean is 0']:.1e}, |std-1| {vals['StdNormalized population std is 1']:.1e}, "
           f"[1,0,0,0] err {vals['[1,0,0,0] -> [sqrt3, -1/sqrt3, ...]']:.1e}, {res.seconds:.1f}s")


def test_3_per_logit_bound():
    rng = np.random.default_rng()
    violations = {"linear": 0, "shaped": 0}
    t0 = time.perf_counter()
    for k in range(1000):
        V, L = int(rng.integers(2, 9)), int(rng.integers(1, 7))
        ts = TaskSet.generate(EnvSpec("CombinationLock", V, L, seed=int(rng.integers(1 << 30))), 1)
        pol = PolicyTable(rng.normal(0, rng.uniform(0.1, 6), (ts.n_states, V)), ts)
        trace = oracle_trace(ts.instances[0])
        adv = float(rng.normal(0, 2))
        violations["linear"] += gradient_weight_bound_check(pol, trace, None, adv).violations
        violations["shaped"] += gradient_weight_bound_check(pol, trace, 0.1, adv).violations
    ok = sum(violations.values()) == 0
    report(3, "per-logit gradient bound", ok,
           f"violations linear={violations['linear']} shaped={violations['shaped']} over 1000 pairs, "
           f"{time.perf_counter() - t0:.1f}s")


def test_4_variance():
    res = suite_variance(n_samples=10**6, seed=int(np.random.SeedSequence().entropy % (1 << 31)))
    worst = max(c.value for c in res.checks if "within 3 se of closed form" in c.name and "Var" in c.name)
    ok = res.passed and res.seconds < 60
    report(4, "shaped-weight variance", ok,
           f"Var[f] < Var[x] at all gamma, worst |MC - closed form| = {worst:.2f} se, {res.seconds:.1f}s")


def test_5_theorem():
    res = suite_theorem(n_seeds=20)
    parts = [f"{c.name.split(':')[0]} obs {c.value:.3g} <= {c.limit:.3g}" for c in res.checks if "bound" in c.name and ":" in c.name and "K=" in c.name]
    ok = res.passed and res.seconds < 300
    report(5, "convergence bound", ok, "; ".join(parts) + f"; bound halves per 4x K, {res.seconds:.1f}s")


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def test_6_hard_lock(runs):
    luffy, t_luffy = train_dir(runs, "lock_luffy")
    on, t_on = train_dir(runs, "lock_onpolicygrpo")
    rows = compare(runs, luffy, on)
    med_luffy = statistics.median(
        float(np.mean([m.mean_reward_on for m in s[-200:]])) for s in seed_series(luffy))
    r_luffy = float(rows["lock_luffy"]["final_reward"])
    r_on = float(rows["lock_onpolicygrpo"]["final_reward"])
    assert r_luffy == pytest.approx(med_luffy)
    ok = r_on < 0.01 and r_luffy > 0.5 and t_luffy < 600 and t_on < 600
    report(6, "hard-exploration lock", ok,
           f"median final-window reward Luffy {r_luffy:.3f} (> 0.5), OnPolicyGRPO {r_on:.4f} (< 0.01), "
           f"{t_luffy:.0f}s / {t_on:.0f}s")


@pytest.fixture(scope="module")
def chain_runs(runs):
    out = {}
    for name in ("chain_mixedpolicy", "chain_luffywithclip", "chain_luffy"):
        out[name], _ = train_dir(runs, name)
    return out


def test_7_entropy_dynamics(chain_runs):
    final = {k: statistics.median(s[-1].entropy for s in seed_series(d)) for k, d in chain_runs.items()}
    initial = max(s[0].entropy for d in chain_runs.values() for s in seed_series(d))
    ln_v = math.log(10)
    mixed, luffy = final["chain_mixedpolicy"], final["chain_luffy"]
    ok = mixed <= luffy and max(mixed, luffy) <= min(initial, ln_v)
    report(7, "entropy dynamics", ok,
           f"median final entropy Mixed {mixed:.3f} <= Luffy {luffy:.3f} <= initial {initial:.3f} <= ln10 {ln_v:.3f}")


def test_8_ablation_ordering(runs, chain_runs):
    rows = compare(runs, *chain_runs.values())
    r = {k: float(rows[k]["final_reward"]) for k in chain_runs}
    luffy, clip, mixed = r["chain_luffy"], r["chain_luffywithclip"], r["chain_mixedpolicy"]
    ok = luffy >= clip >= mixed and luffy >= mixed
    report(8, "ablation ordering", ok,
           f"median final-window reward Luffy {luffy:.4f} >= +Shaping {clip:.4f} >= Mixed {mixed:.4f}")


def test_9_determinism(tmp_path):
    base = ["train", "--config", str(CONFIGS / "chain_luffy.cfg"), "--set", "n_steps=150", "--seeds", "3"]
    assert cli([*base, "--out", str(tmp_path / "a")]) == 0
    assert cli([*base, "--out", str(tmp_path / "b"), "--jobs", "3"]) == 0
    same = all((tmp_path / "a" / f"seed_{s}" / "metrics.csv").read_bytes()
               == (tmp_path / "b" / f"seed_{s}" / "metrics.csv").read_bytes() for s in range(3))
    # Simulate an interruption: overwrite each final checkpoint with the state
    # at step 70 (same schedule), then let the CLI resume from it.
    part = tmp_path / "part"
    assert cli([*base, "--out", str(part), "--set", "checkpoint_every=50"]) == 0
    for s in range(3):
        ck = part / f"seed_{s}" / "checkpoint.json"
        state, cfg, spec, n_tasks, n_steps = load_checkpoint(ck)
        mid = run_training(cfg, spec, n_steps, n_tasks, init_scale=1.0, stop_after=70)
        save_checkpoint(ck, mid, cfg, spec, n_tasks, n_steps)
        (part / f"seed_{s}" / "metrics.csv").unlink()
    assert cli([*base, "--out", str(part), "--set", "checkpoint_every=50", "--resume"]) == 0
    resumed = all((tmp_path / "a" / f"seed_{s}" / "metrics.csv").read_bytes()
                  == (part / f"seed_{s}" / "metrics.csv").read_bytes() for s in range(3))
    ca = json.loads((tmp_path / "a" / "manifest.json").read_text())["artifacts"]
    cp = json.loads((part / "manifest.json").read_text())["artifacts"]
    same_ckpt = all(ca[f"seed_{s}/checkpoint.json"] == cp[f"seed_{s}/checkpoint.json"] for s in range(3))
    ok = same and resumed and same_ckpt
    report(9, "determinism", ok,
           f"rerun byte-identical={same}, resumed-at-step-70 byte-identical={resumed}, "
           f"final checkpoints identical={same_ckpt}")
