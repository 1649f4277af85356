import pytest

from rlvr_lab.core import (
    Algorithm,
    AlgorithmConfig,
    AnswerSpec,
    LengthNorm,
    RolloutGroup,
    Source,
    Trajectory,
    check_tokens,
    score_reward,
)


def traj(tokens, source=Source.ON_POLICY, pid=0, probs=None):
    probs = probs if probs is not None else [0.5] * len(tokens)
    return Trajectory(pid, list(tokens), probs, source)


class TestScoreReward:
    truth = AnswerSpec(positions=(-1,), tokens=(3,))

    def test_correct_final_token(self):
        assert score_reward(traj([1, 2, 3]), self.truth) == 1.0

    def test_wrong_final_token(self):
        assert score_reward(traj([1, 3, 2]), self.truth) == 0.0

    def test_empty_prefix(self):
        assert score_reward(traj([3]), self.truth) == 1.0

    def test_pure_and_stored(self):
        t = traj([0, 3])
        assert score_reward(t, self.truth) == score_reward(t, self.truth) == t.reward == 1.0

    def test_full_sequence_answer(self):
        lock = AnswerSpec(positions=(0, 1, 2), tokens=(4, 0, 1), length=3)
        assert score_reward(traj([4, 0, 1]), lock) == 1.0
        assert score_reward(traj([4, 0, 2]), lock) == 0.0
        assert score_reward(traj([4, 0]), lock) == 0.0


class TestTrajectory:
    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            Trajectory(0, [1, 2], [0.5], Source.ON_POLICY)

    @pytest.mark.parametrize("p", [0.0, -0.1, 1.5, float("nan")])
    def test_bad_prob(self, p):
        with pytest.raises(ValueError):
            Trajectory(0, [1], [p], Source.ON_POLICY)

    def test_reward_binary(self):
        t = traj([1])
        with pytest.raises(ValueError):
            t.reward = 0.5

    def test_check_tokens(self):
        check_tokens([0, 4], 5)
        with pytest.raises(ValueError):
            check_tokens([5], 5)


class TestRolloutGroup:
    def test_needs_two(self):
        with pytest.raises(ValueError):
            RolloutGroup(0, [traj([1])])

    def test_shared_prompt(self):
        with pytest.raises(ValueError):
            RolloutGroup(0, [traj([1]), traj([1], pid=1)])

    def test_order_on_then_off(self):
        on = [traj([0]), traj([1])]
        off = traj([2], Source.OFF_POLICY, probs=[1.0])
        g = RolloutGroup(0, on, [off])
        assert g.trajectories[-1] is off


class TestAlgorithmConfig:
    def test_presets_validate(self):
        for alg in Algorithm:
            AlgorithmConfig.preset(alg)

    def test_fair_budget(self):
        on = AlgorithmConfig.preset("OnPolicyGRPO")
        luffy = AlgorithmConfig.preset("Luffy")
        assert on.n_on + on.n_off == luffy.n_on + luffy.n_off == 8
        assert (luffy.n_on, luffy.n_off) == (7, 1)

    def test_luffy_forbids_clip(self):
        with pytest.raises(ValueError, match="Luffy"):
            AlgorithmConfig.preset("Luffy", use_on_policy_clip=True)
        with pytest.raises(ValueError):
            AlgorithmConfig.preset("Luffy", shaping_gamma=None)

    def test_mixed_is_linear(self):
        with pytest.raises(ValueError):
            AlgorithmConfig.preset("MixedPolicy", shaping_gamma=0.1)

    def test_on_policy_has_no_off(self):
        with pytest.raises(ValueError):
            AlgorithmConfig.preset("OnPolicyGRPO", n_on=7, n_off=1)

    def test_defaults(self):
        cfg = AlgorithmConfig.preset("Luffy")
        assert cfg.clip_epsilon == 0.2
        assert cfg.shaping_gamma == 0.1
        assert cfg.length_norm is LengthNorm.CONSTANT_BUDGET

    def test_roundtrip(self):
        cfg = AlgorithmConfig.preset("LuffyWithClip", seed=4, entropy_coef=0.03)
        assert AlgorithmConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("field,value", [("clip_epsilon", 0.0), ("temperature", -1.0),
                                             ("shaping_gamma", 0.0), ("entropy_coef", -0.1),
                                             ("learning_rate", float("inf"))])
    def test_rejects(self, field, value):
        with pytest.raises(ValueError):
            AlgorithmConfig.preset("LuffyWithClip", **{field: value})
