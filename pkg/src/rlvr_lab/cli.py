"""``rlvr-lab`` command line: train, compare, verify.

Exit codes: 0 success, 1 failed verification, 2 bad configuration or
inputs, 3 training aborted on a non-finite loss.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from ._accel import backend_name
from .config import ConfigError, ExperimentConfig, describe_keys
from .diagnostics import compare_runs, format_summary, read_metrics_csv, write_comparison_csv, write_metrics_csv
from .trainer import TrainingAborted, load_checkpoint, run_training, save_checkpoint
from .verify import SUITES

log = logging.getLogger("rlvr_lab")

OUT_ENV = "RLVR_LAB_OUT"
EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3
MANIFEST = "manifest.json"
METRICS = "metrics.csv"
CHECKPOINT = "checkpoint.json"


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def resolve_run_dir(cfg: ExperimentConfig, out) -> Path:
    if out:
        return Path(out)
    root = os.environ.get(OUT_ENV)
    return Path(root) / cfg.output_dir if root else Path(cfg.output_dir)


def train_seed(cfg: ExperimentConfig, seed: int, seed_dir: Path, resume: bool = False) -> dict:
    seed_dir.mkdir(parents=True, exist_ok=True)
    alg = cfg.for_seed(seed)
    ckpt = seed_dir / CHECKPOINT
    state = None
    if resume and ckpt.exists():
        state, saved_alg, saved_env, n_tasks, n_steps = load_checkpoint(ckpt)
        if (saved_alg, saved_env, n_tasks, n_steps) != (alg, cfg.env, cfg.n_tasks, cfg.n_steps):
            raise ConfigError(str(ckpt), "checkpoint was written by a different configuration")
        log.info("seed %d: resuming at step %d", seed, state.step)
    state = run_training(
        alg, cfg.env, cfg.n_steps, cfg.n_tasks,
        init_scale=cfg.init_scale,
        state=state,
        checkpoint_every=cfg.checkpoint_every,
        checkpoint_path=ckpt,
        dump_dir=seed_dir,
    )
    save_checkpoint(ckpt, state, alg, cfg.env, cfg.n_tasks, cfg.n_steps)
    write_metrics_csv(seed_dir / METRICS, state.metrics)
    last = state.metrics[-1]
    log.info("seed %d: final reward %.4f entropy %.4f", seed, last.mean_reward_on, last.entropy)
    return {"seed": seed, "dir": seed_dir.name}


def _train_seed_job(args):
    cfg_pairs, seed, seed_dir, resume = args
    return train_seed(ExperimentConfig.from_pairs(cfg_pairs), seed, Path(seed_dir), resume)


def cmd_train(config_path, overrides=(), out=None, seeds=None, jobs=1, resume=False) -> int:
    overrides = list(overrides)
    if seeds is not None:
        overrides.append(f"n_seeds={seeds}")
    try:
        cfg = ExperimentConfig.load(config_path, overrides)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        print(f"offending key: {exc.key}", file=sys.stderr)
        return EXIT_USAGE
    run_dir = resolve_run_dir(cfg, out)
    run_dir.mkdir(parents=True, exist_ok=True)
    jobs_args = [(cfg.to_pairs(), s, str(run_dir / f"seed_{s}"), resume) for s in cfg.seeds]
    try:
        if jobs > 1 and len(jobs_args) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                list(pool.map(_train_seed_job, jobs_args))
        else:
            for a in jobs_args:
                _train_seed_job(a)
    except TrainingAborted as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        print(f"diagnostic dump: {exc.dump_path}", file=sys.stderr)
        return EXIT_ABORT
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    artifacts = {}
    for s in cfg.seeds:
        for name in (METRICS, CHECKPOINT):
            rel = f"seed_{s}/{name}"
            artifacts[rel] = sha256(run_dir / rel)
    manifest = {
        "version": __version__,
        "backend": backend_name(),
        "config_file": str(config_path) if config_path else None,
        "overrides": overrides,
        "config": dict(cfg.to_pairs()),
        "label": cfg.algorithm.algorithm.value,
        "seeds": cfg.seeds,
        "artifacts": artifacts,
    }
    (run_dir / "config.cfg").write_text(cfg.to_text())
    (run_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(run_dir)
    return EXIT_OK


def load_run(run_dir) -> tuple[dict, list]:
    run_dir = Path(run_dir)
    mpath = run_dir / MANIFEST
    if not mpath.is_file():
        raise FileNotFoundError(f"{run_dir}: no {MANIFEST}; not a completed run directory")
    manifest = json.loads(mpath.read_text())
    series = [read_metrics_csv(run_dir / f"seed_{s}" / METRICS) for s in manifest["seeds"]]
    return manifest, series


def _labels(run_dirs) -> list[str]:
    names = [Path(d).resolve().name or str(d) for d in run_dirs]
    seen: dict[str, int] = {}
    out = []
    for n in names:
        k = seen.get(n, 0)
        seen[n] = k + 1
        out.append(n if k == 0 else f"{n}#{k}")
    return out


def cmd_compare(run_dirs, out=None) -> int:
    if len(run_dirs) < 2:
        print("error: compare needs at least two run directories", file=sys.stderr)
        return EXIT_USAGE
    runs = []
    try:
        for label, d in zip(_labels(run_dirs), run_dirs):
            _, series = load_run(d)
            runs.extend((label, s) for s in series)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    rows = compare_runs(runs)
    out_dir = Path(out) if out else Path(os.environ.get(OUT_ENV, "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    write_comparison_csv(out_dir / "compare.csv", rows)
    text = format_summary(rows)
    (out_dir / "summary.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(suite: str, out=None, seed=None) -> int:
    names = list(SUITES) if suite.lower() == "all" else [suite.lower()]
    results = []
    for name in names:
        fn = SUITES[name]
        results.append(fn(seed=seed) if seed is not None else fn())
    report = {
        "passed": all(r.passed for r in results),
        "suites": [r.to_record() for r in results],
        "failures": [f"{r.suite}: {c.name}" for r in results for c in r.failures],
    }
    text = json.dumps(report, indent=2, default=float)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    print(text)
    return EXIT_OK if report["passed"] else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlvr-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration over one or more seeds",
                       epilog="configuration keys:\n" + describe_keys(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", metavar="PATH", help="key = value configuration file")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                   help="override a configuration key (repeatable)")
    p.add_argument("--out", metavar="DIR", help=f"run directory (default: output_dir, under ${OUT_ENV} if set)")
    p.add_argument("--seeds", metavar="N", type=int, help="number of seeds (overrides n_seeds)")
    p.add_argument("--jobs", metavar="N", type=int, default=1, help="train seeds in N processes")
    p.add_argument("--resume", action="store_true", help="continue from existing per-seed checkpoints")

    p = sub.add_parser("compare", help="summarize completed run directories")
    p.add_argument("run_dirs", nargs="+", metavar="RUN_DIR")
    p.add_argument("--out", metavar="DIR", help="where to write compare.csv and summary.txt")

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("suite", type=str.lower, choices=[*SUITES, "all"])
    p.add_argument("--out", metavar="FILE", help="also write the JSON report here")
    p.add_argument("--seed", type=int, help="seed for randomized checks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "train":
        return cmd_train(args.config, args.overrides, args.out, args.seeds, args.jobs, args.resume)
    if args.command == "compare":
        return cmd_compare(args.run_dirs, args.out)
    return cmd_verify(args.suite, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
