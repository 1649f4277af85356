import numpy as np

from rlvr_lab.verify import SUITES, finite_difference_grad, random_instance, relative_error


def test_random_instances_within_limits():
    rng = np.random.default_rng(0)
    for _ in range(30):
        inst = random_instance(rng)
        S, V = inst.policy.logits.shape
        assert S <= 10 and V <= 6 and inst.policy.encoder.spec.episode_len <= 5
        half = len(inst.groups) // 2
        for g in inst.groups[half:]:
            assert (len(g.on_policy), len(g.off_policy)) == (3, 1)


def test_fd_helper_on_quadratic():
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    g = finite_difference_grad(lambda z: float((z**2).sum()), x)
    assert relative_error(2 * x, g) < 1e-9


def test_suites_independent_fresh_seeds():
    # Each suite runs alone; gradients on a seed not used elsewhere.
    for name in ("advantages", "theorem"):
        assert SUITES[name]().passed
    assert SUITES["gradients"](n_instances=10, seed=987654).passed
