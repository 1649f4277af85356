import json
import os
from pathlib import Path

import pytest

from rlvr_lab.cli import main
from rlvr_lab.diagnostics import read_metrics_csv

ROOT = Path(__file__).resolve().parents[1]
TINY = ["--set", "env.vocab_size=4", "--set", "env.episode_len=2", "--set", "env.n_tasks=8", "--set", "n_steps=12"]


def train(out, *extra):
    return main(["train", *TINY, "--out", str(out), *extra])


def test_minimal_config(tmp_path):
    assert main(["train", "--config", str(ROOT / "configs" / "minimal.cfg"), "--out", str(tmp_path / "r")]) == 0
    assert len(read_metrics_csv(tmp_path / "r" / "seed_0" / "metrics.csv")) == 50


def test_train_artifacts_and_manifest(tmp_path):
    assert train(tmp_path / "r", "--seeds", "2", "--set", "algorithm=Luffy") == 0
    m = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert "algorithm=Luffy" in m["overrides"]
    assert m["seeds"] == [0, 1] and m["config"]["algorithm"] == "Luffy"
    for s in (0, 1):
        assert len(read_metrics_csv(tmp_path / "r" / f"seed_{s}" / "metrics.csv")) == 12
        assert f"seed_{s}/checkpoint.json" in m["artifacts"]


def test_rerun_byte_identical(tmp_path):
    train(tmp_path / "a", "--seeds", "2")
    train(tmp_path / "b", "--seeds", "2", "--jobs", "2")
    for name in ("seed_0/metrics.csv", "seed_1/metrics.csv", "seed_0/checkpoint.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["artifacts"] == mb["artifacts"]


def test_reproducible_from_manifest(tmp_path):
    train(tmp_path / "a", "--set", "algorithm=MixedPolicy")
    assert main(["train", "--config", str(tmp_path / "a" / "config.cfg"), "--out", str(tmp_path / "b")]) == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["artifacts"] == mb["artifacts"] and ma["config"] == mb["config"]


def test_resume(tmp_path):
    train(tmp_path / "full")
    train(tmp_path / "part", "--set", "checkpoint_every=5", "--set", "n_steps=12")
    assert train(tmp_path / "part", "--resume") == 0
    assert (tmp_path / "full" / "seed_0" / "metrics.csv").read_bytes() == \
        (tmp_path / "part" / "seed_0" / "metrics.csv").read_bytes()


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("RLVR_LAB_OUT", str(tmp_path / "root"))
    assert main(["train", *TINY, "--set", "output_dir=x"]) == 0
    assert (tmp_path / "root" / "x" / "manifest.json").exists()
    assert main(["train", *TINY, "--out", str(tmp_path / "explicit")]) == 0
    assert (tmp_path / "explicit" / "manifest.json").exists()


def test_invalid_config_exit(tmp_path, capsys):
    assert main(["train", "--set", "nope=1", "--out", str(tmp_path)]) == 2
    assert "nope" in capsys.readouterr().err


def test_abort_exit(tmp_path, capsys):
    rc = train(tmp_path / "r", "--set", "algorithm.temperature=1e-320", "--set", "policy.init_scale=1")
    assert rc == 3
    assert "abort_step0.json" in capsys.readouterr().err


def test_compare(tmp_path, capsys):
    train(tmp_path / "a", "--set", "algorithm=Luffy")
    train(tmp_path / "b", "--set", "algorithm=MixedPolicy")
    train(tmp_path / "c", "--set", "algorithm=OnPolicyGRPO")
    assert main(["compare", str(tmp_path / "c"), str(tmp_path / "a"), str(tmp_path / "b"),
                 "--out", str(tmp_path / "cmp")]) == 0
    lines = (tmp_path / "cmp" / "compare.csv").read_text().splitlines()
    assert [l.split(",")[0] for l in lines[1:]] == ["a", "b", "c"]
    assert (tmp_path / "cmp" / "summary.txt").exists()


def test_compare_identical_dirs(tmp_path):
    train(tmp_path / "a")
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "a"), "--out", str(tmp_path / "cmp")]) == 0
    rows = [l.split(",")[1:] for l in (tmp_path / "cmp" / "compare.csv").read_text().splitlines()[1:]]
    assert rows[0] == rows[1]


def test_compare_missing_manifest(tmp_path):
    (tmp_path / "empty").mkdir()
    train(tmp_path / "a")
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "empty")]) == 2


@pytest.mark.parametrize("suite", ["advantages", "theorem", "variance", "Gradients"])
def test_verify(tmp_path, capsys, suite):
    out = tmp_path / "report.json"
    assert main(["verify", suite, "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["passed"] and report["failures"] == []


def test_verify_failure_is_machine_readable(tmp_path, monkeypatch, capsys):
    from rlvr_lab import verify

    def broken(**_):
        res = verify.SuiteResult("advantages")
        res.add("always fails", False, 1.0, 0.0)
        return res

    monkeypatch.setitem(verify.SUITES, "advantages", broken)
    assert main(["verify", "advantages"]) == 1
    report = json.loads(capsys.readouterr().out)
    assert report["failures"] == ["advantages: always fails"]
