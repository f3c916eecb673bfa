import math

import numpy as np
import pytest

from frameskip.bandit import (
    Exp3State,
    bernoulli_bandit_run,
    exp3_sample,
    exp3_update,
    meta_run,
    moving_average,
    normalize_return,
)
from frameskip import bandit
from frameskip.control.sarsa import SarsaConfig, SarsaLambda, one_hot, sarsa_lambda_run
from frameskip.envs.gridworld import GridWorld, canonical_spec


def epoch_constants(k, r):
    g = k * math.log(k) / (math.e - 1) * 4**r
    return g, min(1.0, math.sqrt(k * math.log(k) / ((math.e - 1) * g)))


def test_fresh_state_uniform():
    assert np.allclose(Exp3State(3).probs(), 1 / 3)


def test_epoch_constants_match_formula():
    for k in (2, 3, 4, 7):
        for r in (3, 5):
            st = Exp3State(k, epoch=r)
            g, gam = epoch_constants(k, r)
            assert st.epoch == r
            assert st.gain_guess == pytest.approx(g) and st.gamma == pytest.approx(gam)
            assert st.threshold == pytest.approx(g - k / gam)


def test_fresh_state_skips_epochs_with_negative_threshold():
    # with no gain yet, an epoch whose threshold is negative ends at once
    for k in (2, 3, 5):
        st = Exp3State(k)
        assert st.threshold >= 0.0
        r = st.epoch
        if r:
            g, gam = epoch_constants(k, r - 1)
            assert g - k / gam < 0.0
        assert st.restarts == r


def test_dominant_weight_mixture():
    st = Exp3State(2, fixed_gamma=0.1, log_weights=np.array([1e3, 0.0]))
    assert np.allclose(st.probs(), [0.95, 0.05])


def test_sampling_frequencies_match_probs(rng):
    st = Exp3State(4, fixed_gamma=0.2, log_weights=np.array([0.0, 1.0, 2.0, 0.5]))
    p = st.probs()
    n = 100_000
    counts = np.bincount([exp3_sample(st, rng)[0] for _ in range(n)], minlength=4)
    assert np.all(np.abs(counts / n - p) <= 3 * np.sqrt(p * (1 - p) / n) + 1e-12)


def test_zero_reward_leaves_weights():
    st = Exp3State(3)
    before = st.log_weights.copy()
    exp3_update(st, 1, 0.0)
    assert np.array_equal(st.log_weights, before)


def test_unit_reward_multiplies_weight_by_exp_gamma():
    st = Exp3State(3, epoch=4)
    gam = st.gamma
    w0 = np.exp(st.log_weights)
    exp3_update(st, 2, 1.0, np.full(3, 1 / 3))
    assert st.epoch == 4
    w = np.exp(st.log_weights)
    assert w[2] == pytest.approx(w0[2] * math.exp(gam))
    assert np.array_equal(w[:2], w0[:2])


def test_update_argument_checks():
    st = Exp3State(2)
    with pytest.raises(ValueError):
        exp3_update(st, 0, 1.5)
    with pytest.raises(ValueError):
        exp3_update(st, 2, 0.5)
    with pytest.raises(ValueError):
        Exp3State(0)
    with pytest.raises(ValueError):
        Exp3State(2, fixed_gamma=0.0)


def test_epoch_restart_resets_weights():
    st = Exp3State(2)
    r = st.epoch
    p = np.array([0.5, 0.5])
    while st.epoch == r:
        before = st.gains[0]
        exp3_update(st, 0, 1.0, p)
    assert before <= epoch_constants(2, r)[0] - 2 / epoch_constants(2, r)[1] < st.gains[0]
    assert st.epoch == r + 1 and st.restarts == r + 1
    assert np.all(st.log_weights == 0.0)
    assert st.gains[0] == before + 2.0  # gain estimates persist across epochs


def test_exploration_floor_and_finiteness(rng):
    st = Exp3State(3)
    for t in range(5000):
        arm, p = exp3_sample(st, rng)
        assert np.all(p >= st.gamma / 3 - 1e-15) and p.sum() == pytest.approx(1.0)
        assert np.all(p > 0) and np.all(p < 1)
        # adversarial: reward 1 on alternating arms
        exp3_update(st, arm, float(arm == t % 3), p)
        assert np.all(np.isfinite(st.weights)) and np.all(st.weights > 0)


def test_bernoulli_best_arm_majority():
    for seed in range(3):
        res = bernoulli_bandit_run([0.2, 0.5, 0.8], 10_000, seed=seed)
        assert res.share(2) > 0.5
        assert res.histogram.sum() == 10_000


def test_bernoulli_means_checked():
    with pytest.raises(ValueError):
        bernoulli_bandit_run([0.2, 1.2], 10)


def test_normalization_is_affine_and_ordered():
    xs = [normalize_return(v, -200.0, 0.0)[0] for v in (-200.0, -150.0, -50.0, 0.0)]
    assert xs == [0.0, 0.25, 0.75, 1.0]
    assert normalize_return(-300.0, -200.0, 0.0) == (0.0, True)
    assert normalize_return(10.0, -200.0, 0.0) == (1.0, True)
    with pytest.raises(ValueError):
        normalize_return(0.0, 1.0, 1.0)


def test_moving_average():
    ma = moving_average([1.0, 2.0, 3.0, 4.0], window=2)
    assert np.allclose(ma, [1.0, 1.5, 2.5, 3.5])


def _grid():
    spec = canonical_spec(-1.0)
    return GridWorld(spec, max_steps=100), one_hot(len(spec.cells))


def test_single_arm_is_plain_sarsa():
    cfg = SarsaConfig(episodes=40)
    env, feats = _grid()
    res = meta_run(env, feats, [2], 40, cfg, (-200.0, 0.0), seed=3)
    assert np.all(res.chosen == 0)
    # the arm learner's stream is the third child of the seed; replay it directly
    ss = np.random.SeedSequence(3)
    env_ss, _, arm_ss = ss.spawn(3)
    env2, feats2 = _grid()
    env2.rng = np.random.default_rng(env_ss)
    agent = SarsaLambda.fixed_repeat(feats2.size, 4, SarsaConfig(d=2, episodes=40), np.random.default_rng(arm_ss))
    returns = [agent.run_episode(env2, feats2) for _ in range(40)]
    assert np.array_equal(res.raw, returns)


def test_unpulled_learners_untouched(monkeypatch):
    env, feats = _grid()
    seen = []
    original = bandit.ArmLearner.play

    def spy(self, env_, features):
        seen.append([a.fingerprint() for a in arms])
        return original(self, env_, features)

    arms = []
    original_init = bandit.ArmLearner.__init__

    def capture(self, *a, **kw):
        original_init(self, *a, **kw)
        arms.append(self)

    monkeypatch.setattr(bandit.ArmLearner, "__init__", capture)
    monkeypatch.setattr(bandit.ArmLearner, "play", spy)
    res = meta_run(env, feats, [1, 4, 8], 60, SarsaConfig(), (-200.0, 0.0), seed=0)
    seen.append([a.fingerprint() for a in arms])
    for t in range(60):
        for k in range(3):
            if k != res.chosen[t]:
                assert seen[t][k] == seen[t + 1][k]
    assert sum(a.pulls for a in arms) == 60


def test_clamping_counted_and_warned():
    env, feats = _grid()
    with pytest.warns(UserWarning, match="clamped"):
        res = meta_run(env, feats, [1, 2], 20, SarsaConfig(), (-5.0, 0.0), seed=0)
    assert res.clamped > 0
    assert np.all((res.normalized >= 0) & (res.normalized <= 1))


def test_meta_run_curve_and_histogram():
    env, feats = _grid()
    res = meta_run(env, feats, [1, 4], 100, SarsaConfig(), (-200.0, 0.0), seed=1, window=25)
    assert res.histogram.sum() == 100
    assert res.curve.episodes == [25, 50, 75, 100]
    assert res.probs.shape == (100, 2)
    assert list(res.arms) == [1, 4]


def test_meta_run_reproducible():
    runs = []
    for _ in range(2):
        env, feats = _grid()
        runs.append(meta_run(env, feats, [1, 4], 50, SarsaConfig(), (-200.0, 0.0), seed=7))
    assert np.array_equal(runs[0].chosen, runs[1].chosen) and np.array_equal(runs[0].raw, runs[1].raw)


def test_meta_run_needs_arms():
    env, feats = _grid()
    with pytest.raises(ValueError):
        meta_run(env, feats, [], 10, SarsaConfig(), (-200.0, 0.0))


def test_meta_run_leaves_config_unchanged():
    cfg = SarsaConfig(d=1, episodes=5)
    env, feats = _grid()
    meta_run(env, feats, [3], 5, cfg, (-200.0, 0.0), seed=0)
    assert cfg.d == 1
    env, feats = _grid()
    _, r = sarsa_lambda_run(env, feats, cfg, seed=0)
    assert r.shape == (5,)
