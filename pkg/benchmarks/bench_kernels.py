"""Time the numba and numpy kernel paths on training-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 20] [--train-steps 300]

The first numba call (compilation or cache load) is excluded from timings.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from rlvr_lab import kernels
from rlvr_lab.env import EnvSpec, TaskSet


def best_of(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    for family, V, L, n_tasks in (("CombinationLock", 16, 6, 32), ("ModularChain", 10, 4, 5000)):
        ts = TaskSet.generate(EnvSpec(family, V, L), n_tasks)
        logits = rng.normal(size=(ts.n_states, V))
        n = 32 * 8
        rows = rng.integers(0, n_tasks, n)
        u = rng.random((n, L))
        tok, probs_t, states = kernels.rollout_numpy(logits, 1.0, ts.kind, ts.table, rows, u)
        probs = kernels.softmax_numpy(logits, 1.0)
        w = rng.normal(size=(n, L))
        tag = f"{family} V={V} L={L} S={ts.n_states}"
        yield tag, "rollout", (kernels.rollout_loops, kernels.rollout_numpy), (logits, 1.0, ts.kind, ts.table, rows, u)
        yield tag, "softmax", (kernels.softmax_loops, kernels.softmax_numpy), (logits, 1.0)
        yield tag, "scatter", (kernels.scatter_loops, kernels.scatter_numpy), (probs, states, tok, w)


TRAIN_SNIPPET = """
import time
from rlvr_lab.experiments import experiment
from rlvr_lab.trainer import run_training
exp = experiment("chain", "Luffy", n_steps={steps})
run_training(exp.algorithm, exp.env, 5, exp.n_tasks, init_scale=exp.init_scale)
t0 = time.perf_counter()
run_training(exp.algorithm, exp.env, exp.n_steps, exp.n_tasks, init_scale=exp.init_scale)
print(time.perf_counter() - t0)
"""


def time_training(steps, disable_numba):
    env = dict(os.environ, RLVR_LAB_DISABLE_NUMBA="1" if disable_numba else "0")
    out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET.format(steps=steps)],
                         env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--train-steps", type=int, default=300, help="0 skips the end-to-end timing")
    args = ap.parse_args()
    print(f"{'case':<40} {'kernel':<8} {'numba us':>10} {'numpy us':>10} {'speedup':>8}")
    for tag, name, (fast, ref), inputs in cases():
        a = best_of(fast, inputs, args.repeat) * 1e6
        b = best_of(ref, inputs, args.repeat) * 1e6
        print(f"{tag:<40} {name:<8} {a:>10.1f} {b:>10.1f} {b / a:>7.1f}x")
    if args.train_steps:
        fast = time_training(args.train_steps, False)
        slow = time_training(args.train_steps, True)
        print(f"\nchain Luffy training, {args.train_steps} steps: numba {fast:.2f}s, numpy {slow:.2f}s "
              f"({slow / fast:.1f}x)")


if __name__ == "__main__":
    main()
