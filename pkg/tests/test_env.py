import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlvr_lab.core import OracleStyle, Source, score_reward
from rlvr_lab.env import (
    EnvSpec,
    TaskSet,
    export_tasks,
    generate_tasks,
    import_tasks,
    make_instance,
    oracle_trace,
    transition,
)
from rlvr_lab.policy import PolicyTable, rollout_arrays


def test_lock_generation_contract():
    spec = EnvSpec("CombinationLock", 8, 4, seed=1)
    tasks = generate_tasks(spec, 100)
    assert len(tasks) == 100
    secrets = {t.params for t in tasks}
    assert len(secrets) == 100
    for t in tasks:
        assert len(t.params) == 4 and all(0 <= s < 8 for s in t.params)


def test_generation_deterministic_and_isolated():
    spec = EnvSpec("ModularChain", 10, 3, seed=5)
    a, b = generate_tasks(spec, 20), generate_tasks(spec, 20)
    assert a == b
    assert make_instance(spec, 13) == a[13]


def test_different_seeds_differ():
    a = generate_tasks(EnvSpec("ModularChain", 10, 3, seed=0), 20)
    b = generate_tasks(EnvSpec("ModularChain", 10, 3, seed=1), 20)
    assert a != b


def test_chain_truth_matches_arithmetic():
    spec = EnvSpec("ModularChain", 10, 3, seed=2)
    for t in generate_tasks(spec, 10):
        total = 0
        for operand in t.params:
            total = (total + operand) % 10
        assert t.truth.tokens == (total,)


@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 50))
@settings(max_examples=40, deadline=None)
def test_generation_is_injective(v, l, seed):
    spec = EnvSpec("ModularChain", v, l, seed=seed)
    n = min(spec.capacity, 40)
    tasks = generate_tasks(spec, n)
    assert len({t.params for t in tasks}) == n


def test_count_above_capacity():
    with pytest.raises(ValueError):
        generate_tasks(EnvSpec("CombinationLock", 2, 2), 5)


@pytest.mark.parametrize("family", ["CombinationLock", "ModularChain"])
@pytest.mark.parametrize("style", list(OracleStyle))
def test_oracle_trace_scores_one(family, style):
    spec = EnvSpec(family, 6, 4, seed=9)
    for inst in generate_tasks(spec, 15):
        tr = oracle_trace(inst, style)
        assert tr.source is Source.OFF_POLICY
        assert tr.reward == 1.0
        assert all(p == 1.0 for p in tr.behavior_probs)
        assert score_reward(tr, inst.truth) == 1.0


def test_verbose_longer_than_minimal():
    inst = generate_tasks(EnvSpec("ModularChain", 10, 3), 1)[0]
    assert len(oracle_trace(inst, OracleStyle.VERBOSE)) > len(oracle_trace(inst, OracleStyle.MINIMAL))


def test_lock_trace_is_secret():
    for inst in generate_tasks(EnvSpec("CombinationLock", 16, 6, seed=3), 10):
        assert tuple(oracle_trace(inst).tokens) == inst.params


def test_transitions():
    lock = generate_tasks(EnvSpec("CombinationLock", 4, 3), 1)[0]
    s = lock.initial_state
    for k in range(3):
        assert s.position == k and not s.terminal
        s = transition(s, 1)
    assert s.terminal
    with pytest.raises(RuntimeError):
        transition(s, 0)

    chain = generate_tasks(EnvSpec("ModularChain", 10, 3), 1)[0]
    s = chain.initial_state
    for tok in (7, 5, 9):
        s = transition(s, tok)
    assert s.terminal and s.carry == 9


def test_exactly_one_correct_answer():
    spec = EnvSpec("CombinationLock", 3, 3, seed=4)
    ts = TaskSet.generate(spec, 5)
    seqs = np.array(np.meshgrid(*[range(3)] * 3, indexing="ij")).reshape(3, -1).T
    for row in range(len(ts)):
        r = ts.rewards(np.full(len(seqs), row), seqs)
        assert r.sum() == 1


def test_vectorized_rewards_match_scoring():
    spec = EnvSpec("ModularChain", 5, 3, seed=1)
    ts = TaskSet.generate(spec, 8)
    rng = np.random.default_rng(0)
    rows = rng.integers(0, 8, 200)
    toks = rng.integers(0, 5, (200, 3))
    vec = ts.rewards(rows, toks)
    for k in range(200):
        inst = ts.instances[rows[k]]
        assert vec[k] == (toks[k, -1] == inst.truth.tokens[0])


def test_uniform_success_rate_small_lock():
    spec = EnvSpec("CombinationLock", 2, 3, seed=0)
    ts = TaskSet.generate(spec, 4)
    pol = PolicyTable.uniform(ts)
    n = 100_000
    rows = np.random.default_rng(1).integers(0, 4, n)
    tok, _, _ = rollout_arrays(pol, rows, 1.0, np.random.default_rng(2))
    rate = ts.rewards(rows, tok).mean()
    p = 2.0**-3
    assert abs(rate - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_uniform_success_rate_hard_lock():
    spec = EnvSpec("CombinationLock", 16, 6, seed=0)
    ts = TaskSet.generate(spec, 32)
    pol = PolicyTable.uniform(ts)
    n = 100_000
    rows = np.random.default_rng(1).integers(0, 32, n)
    tok, _, _ = rollout_arrays(pol, rows, 1.0, np.random.default_rng(2))
    rate = ts.rewards(rows, tok).mean()
    p = 16.0**-6
    assert abs(rate - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_export_import_roundtrip(tmp_path):
    spec = EnvSpec("ModularChain", 7, 3, seed=11)
    tasks = generate_tasks(spec, 12)
    path = tmp_path / "tasks.jsonl"
    export_tasks(path, spec, tasks)
    spec2, tasks2 = import_tasks(path)
    assert spec2 == spec and tasks2 == tasks


def test_env_spec_validation():
    with pytest.raises(ValueError):
        EnvSpec("CombinationLock", 1, 3)
    with pytest.raises(ValueError):
        EnvSpec("CombinationLock", 4, 0)
    with pytest.raises(ValueError):
        EnvSpec("Maze", 4, 3)
