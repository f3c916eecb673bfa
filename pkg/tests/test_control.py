import numpy as np
import pytest

from frameskip.acceptance import gradient_check
from frameskip.control.qlearning import (
    AliasedQTable,
    QLearningConfig,
    epsilon_greedy as q_epsilon_greedy,
    q_learning_run,
    random_neighbour_pairs,
    window_curve,
)
from frameskip.control.reinforce import (
    Adam,
    AcrobotEpisodes,
    GenericEpisodes,
    GradientError,
    Reinforce,
    ReinforceConfig,
    SoftmaxLinearPolicy,
    gradient_samples,
    gradient_variance_probe,
)
from frameskip.control.sarsa import (
    SarsaConfig,
    epsilon_greedy,
    figar_sarsa_run,
    one_hot,
    sarsa_acrobot_run,
    sarsa_lambda_run,
    sarsa_update,
)
from frameskip.control.tiles import TileCoder
from frameskip.envs import acrobot as ab
from frameskip.envs.core import Environment, StepOutcome
from frameskip.envs.gridworld import GridWorld, GridWorldSpec, canonical_spec, gridworld_to_tabular, parse_map
from frameskip.tabular import evaluate_policy, value_iteration


class OneShot(Environment):
    """Single decision with observation ``[1]``; reward ``rewards[a]`` then terminal."""

    n_actions = 2
    r_max = 1.0

    def __init__(self, rewards=(1.0, 1.0), noise=0.0):
        super().__init__(0)
        self.rewards = rewards
        self.noise = noise

    def reset(self):
        self.done = False
        return np.array([1.0])

    def step(self, action):
        self._guard(action)
        self.done = True
        r = self.rewards[action] + (self.noise * self.rng.normal() if self.noise else 0.0)
        return StepOutcome(r, np.array([1.0]), True)


def two_cell(**kw):
    return GridWorldSpec(width=2, height=1, goals={(0, 1)}, start_cells=[(0, 0)], action_retention=1.0, **kw)


# --- aliasing and Q-learning --------------------------------------------------


def test_alias_classes_partition_into_adjacent_pairs(rng):
    spec = canonical_spec()
    cells = spec.cells
    for _ in range(5):
        alias_of = random_neighbour_pairs(spec, rng)
        sizes = np.bincount(alias_of)
        assert set(sizes) <= {1, 2}
        assert alias_of.min() == 0 and sizes.size == alias_of.max() + 1
        for k in np.flatnonzero(sizes == 2):
            a, b = (cells[i] for i in np.flatnonzero(alias_of == k))
            assert abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1
            assert a not in spec.goals and b not in spec.goals


def test_alias_fraction_zero_pairs_nothing(rng):
    spec = canonical_spec()
    assert np.array_equal(random_neighbour_pairs(spec, rng, 0.0), np.arange(len(spec.cells)))


def test_aliased_rows_identical_after_training():
    spec = canonical_spec(-1.0)
    table, _ = q_learning_run(spec, QLearningConfig(d=2, episodes=100, eval_every=0), seed=4)
    q = table.state_values()
    for k in range(table.q.shape[0]):
        members = np.flatnonzero(table.alias_of == k)
        assert all(np.array_equal(q[members[0]], q[m]) for m in members)
    assert np.any(np.bincount(table.alias_of) == 2)


def test_identity_table():
    t = AliasedQTable.identity(3, 2)
    t.q[1] = [0.0, 5.0]
    assert t.greedy(1) == 1 and t.greedy(0) == 0
    assert t.row(1)[1] == 5.0


def test_q_learning_two_cell_grid():
    cfg = QLearningConfig(episodes=50, eval_every=10, eval_episodes=5, alias_fraction=None)
    table, curve = q_learning_run(two_cell(), cfg, seed=0)
    assert table.greedy(0) == 3  # right
    assert curve.final == -1.0
    assert curve.episodes[-1] == 50


def test_q_learning_matches_dynamic_programming():
    spec = parse_map("S..\n.P.\n..G\n").with_penalty(-3.0)
    cfg = QLearningConfig(episodes=3000, epsilon=0.2, alpha_decay=0.999, eval_every=0, alias_fraction=None)
    table, _ = q_learning_run(spec, cfg, seed=1)
    mdp = gridworld_to_tabular(spec)
    v_star = value_iteration(mdp).max(axis=1)
    greedy = np.argmax(table.state_values(), axis=1)
    v_greedy = evaluate_policy(mdp, greedy)
    start = spec.state_of((0, 0))
    assert abs(v_greedy[start] - v_star[start]) <= 0.05


def test_q_learning_reproducible():
    cfg = QLearningConfig(d=3, episodes=60, eval_every=20, eval_episodes=3)
    a = q_learning_run(canonical_spec(-1.0), cfg, seed=9)
    b = q_learning_run(canonical_spec(-1.0), cfg, seed=9)
    assert np.array_equal(a[0].q, b[0].q) and a[1].mean == b[1].mean


def test_window_curve_blocks():
    curve = window_curve(np.arange(10.0), window=4)
    assert curve.episodes == [4, 8]
    assert curve.mean == [1.5, 5.5]
    assert curve.stderr[0] == pytest.approx(np.std([0, 1, 2, 3], ddof=1) / 2)


@pytest.mark.parametrize("greedy", [epsilon_greedy, q_epsilon_greedy])
def test_zero_epsilon_is_argmax_lowest_index(greedy, rng):
    q = np.array([1.0, 3.0, 3.0, -1.0])
    assert all(greedy(q, 0.0, rng) == 1 for _ in range(20))


def test_epsilon_one_is_uniform(rng):
    q = np.array([0.0, 1.0, 0.0])
    counts = np.bincount([epsilon_greedy(q, 1.0, rng) for _ in range(30_000)], minlength=3)
    assert np.all(np.abs(counts / 30_000 - 1 / 3) < 4 * np.sqrt(2 / 9 / 30_000))


# --- tile coding and Sarsa -----------------------------------------------------


def test_tile_coder_active_count(rng):
    coder = TileCoder(ab.FEATURE_LOW, ab.FEATURE_HIGH, 8, 8)
    assert coder.n_active == 48 and coder.size == 6 * 8 * 9
    for _ in range(50):
        obs = rng.uniform(ab.FEATURE_LOW * 1.2, ab.FEATURE_HIGH * 1.2)
        idx = coder(obs)
        assert len(set(idx)) == 48
        assert idx.min() >= 0 and idx.max() < coder.size
        assert coder.dense(obs).sum() == 48


def test_tile_coder_offsets():
    coder = TileCoder([0.0], [1.0], n_tilings=2, n_tiles=2)
    # tiling 0 splits at 0.5; tiling 1 is shifted by half a tile
    assert list(coder([0.3])) == [0, 3 + 1]
    assert list(coder([0.6])) == [1, 3 + 1]
    assert list(coder([0.8])) == [1, 3 + 2]


def test_tile_coder_bad_range():
    with pytest.raises(ValueError):
        TileCoder([0.0], [0.0])


def test_sarsa_update_reduces_to_tabular_backup():
    w = np.array([[0.5, -1.0], [2.0, 0.25]])
    e = np.zeros_like(w)
    alpha, g, gk = 0.3, -1.0, 0.9
    expected = w.copy()
    expected[0, 1] += alpha * (g + gk * w[1, 0] - w[0, 1])
    delta = sarsa_update(w, e, 0, np.array([1]), g, False, 1, np.array([0]), gk, 0.0, alpha, True)
    assert delta == pytest.approx(g + gk * 2.0 - (-1.0), abs=1e-12)
    assert np.allclose(w, expected, atol=1e-12, rtol=0)
    assert np.all(e == 0.0)  # lambda = 0 clears the trace


def test_sarsa_update_terminal_and_traces():
    w = np.zeros((1, 3))
    e = np.zeros_like(w)
    sarsa_update(w, e, 0, np.array([0]), 1.0, True, 0, np.array([2]), 1.0, 0.5, 1.0, False)
    assert w[0, 0] == 1.0 and e[0, 0] == 0.5
    sarsa_update(w, e, 0, np.array([0]), 0.0, True, 0, np.array([0]), 1.0, 0.5, 1.0, False)
    # accumulating trace: 0.5 + 1
    assert w[0, 0] == pytest.approx(1.0 + (0.0 - 1.0) * 1.5)


def test_sarsa_solves_adjacent_goal():
    env = GridWorld(two_cell())
    agent, returns = sarsa_lambda_run(env, one_hot(2), SarsaConfig(episodes=100), seed=0)
    assert returns.shape == (100,)
    assert np.all(returns[-20:] >= -2.0)
    assert agent.greedy_option(np.array([0])) == (3, 1)


@pytest.mark.parametrize("k", [1, 3])
def test_figar_singleton_equals_fixed_repeat(k):
    spec = canonical_spec(-2.0)
    cfg = SarsaConfig(d=k, episodes=30)
    a, ra = sarsa_lambda_run(GridWorld(spec, max_steps=200), one_hot(len(spec.cells)), cfg, seed=5)
    b, rb = figar_sarsa_run(GridWorld(spec, max_steps=200), one_hot(len(spec.cells)), [k], cfg, seed=5)
    assert np.array_equal(ra, rb)
    assert np.array_equal(a.w, b.w)


def test_figar_option_set():
    spec = canonical_spec()
    agent, _ = figar_sarsa_run(GridWorld(spec, max_steps=50), one_hot(len(spec.cells)), [1, 2, 4], SarsaConfig(episodes=2), seed=0)
    assert len(agent.options) == 12 and (3, 4) in agent.options


def test_acrobot_kernel_matches_generic_loop():
    cfg = SarsaConfig(d=3, episodes=3)
    a, ra = sarsa_acrobot_run(cfg, seed=2, max_steps=120)
    b, rb = sarsa_acrobot_run(cfg, seed=2, max_steps=120, fast=False)
    assert np.array_equal(ra, rb)
    assert np.array_equal(a.w, b.w)


def test_acrobot_kernel_requires_normalized_alpha():
    with pytest.raises(ValueError):
        sarsa_acrobot_run(SarsaConfig(episodes=1, normalize_alpha=False), seed=0)


def test_sarsa_epsilon_decays():
    env = GridWorld(two_cell())
    agent, _ = sarsa_lambda_run(env, one_hot(2), SarsaConfig(episodes=10, epsilon=0.1, epsilon_decay=0.5), seed=0)
    assert agent.epsilon == pytest.approx(0.1 * 0.5**10)


# --- REINFORCE -----------------------------------------------------------------


def test_softmax_probabilities(rng):
    pol = SoftmaxLinearPolicy(6, 3, rng.normal(size=(7, 3)))
    assert pol.w.size == 21
    for _ in range(20):
        p = pol.probs(rng.normal(size=6))
        assert np.all(p > 0) and p.sum() == pytest.approx(1.0)


def test_policy_weight_shape_checked():
    with pytest.raises(ValueError):
        SoftmaxLinearPolicy(2, 3, np.zeros((2, 3)))


def test_score_function_mean_zero(rng):
    pol = SoftmaxLinearPolicy(4, 3, rng.normal(size=(5, 3)))
    for _ in range(20):
        x = rng.normal(size=4)
        p = pol.probs(x)
        total = sum(p[a] * pol.score(x, a) for a in range(3))
        assert np.abs(total).max() <= 1e-10


def test_score_matches_finite_difference(rng):
    pol = SoftmaxLinearPolicy(3, 3, rng.normal(size=(4, 3)))
    x = rng.normal(size=3)
    h = 1e-6
    fd = np.zeros_like(pol.w)
    for idx in np.ndindex(pol.w.shape):
        w0 = pol.w[idx]
        pol.w[idx] = w0 + h
        up = pol.log_prob(x, 1)
        pol.w[idx] = w0 - h
        down = pol.log_prob(x, 1)
        pol.w[idx] = w0
        fd[idx] = (up - down) / (2 * h)
    assert np.allclose(pol.score(x, 1), fd, atol=1e-8)


def test_episode_gradient_matches_finite_differences():
    assert gradient_check(0) <= 1e-4
    assert gradient_check(1) <= 1e-4


def test_symmetric_rewards_give_zero_mean_gradient():
    pol = SoftmaxLinearPolicy(1, 2)
    source = GenericEpisodes(OneShot((1.0, 1.0)), seed=0)
    g = np.array([source(pol, 1, 0.99).gradient().ravel() for _ in range(10_000)])
    se = g.std(axis=0, ddof=1) / np.sqrt(len(g))
    assert np.all(np.abs(g.mean(axis=0)) <= 3 * se)


def test_deterministic_policy_has_no_gradient_variance():
    pol = SoftmaxLinearPolicy(1, 2, [[0.0, 0.0], [40.0, -40.0]])
    agent = Reinforce(pol, ReinforceConfig(d=1))
    agent.baseline = 0.0
    trace = gradient_variance_probe(agent, GenericEpisodes(OneShot((1.0, -1.0)), seed=0), 100)
    assert trace == pytest.approx(0.0, abs=1e-20)


def test_variance_probe_consistent_when_doubling_samples():
    agent = Reinforce(SoftmaxLinearPolicy(1, 2), ReinforceConfig(d=1))
    env = OneShot((1.0, 0.0), noise=0.5)
    small = gradient_variance_probe(agent, GenericEpisodes(env, seed=1), 2000)
    large = gradient_variance_probe(agent, GenericEpisodes(env, seed=2), 4000)
    assert large == pytest.approx(small, rel=0.15)


def test_gradient_samples_shape():
    agent = Reinforce(SoftmaxLinearPolicy(1, 2), ReinforceConfig())
    assert gradient_samples(agent, GenericEpisodes(OneShot(), seed=0), 7).shape == (7, 4)


def test_baseline_is_moving_average():
    agent = Reinforce(SoftmaxLinearPolicy(1, 2), ReinforceConfig(baseline_decay=0.5))
    source = GenericEpisodes(OneShot((1.0, 3.0)), seed=0)
    returns = []
    for _ in range(3):
        ep = source(agent.policy, 1, 0.99)
        returns.append(ep.discounted)
        agent.learn(ep)
    expected = returns[0]
    for r in returns[1:]:
        expected = 0.5 * expected + 0.5 * r
    assert agent.baseline_value() == pytest.approx(expected)


def test_non_finite_gradient_aborts():
    agent = Reinforce(SoftmaxLinearPolicy(1, 2), ReinforceConfig(baseline=False))
    ep = GenericEpisodes(OneShot((np.inf, np.inf)), seed=0)(agent.policy, 1, 0.99)
    with pytest.raises(GradientError):
        agent.learn(ep)


def test_adam_first_step_is_learning_rate():
    w = np.zeros(3)
    Adam(3, lr=0.01).step(w, np.array([5.0, -0.2, 0.0]))
    assert np.allclose(w, [0.01, -0.01, 0.0], atol=1e-9)


def test_acrobot_episode_kernel_matches_generic():
    pol = SoftmaxLinearPolicy(6, 3, np.random.default_rng(0).normal(scale=0.1, size=(7, 3)))
    a = AcrobotEpisodes(seed=4, max_steps=90)
    b = AcrobotEpisodes(seed=4, max_steps=90, fast=False)
    for d in (1, 3):
        ea, eb = a(pol, d, 0.99), b(pol, d, 0.99)
        assert ea.total == eb.total and ea.steps == eb.steps
        assert np.allclose(ea.s1, eb.s1, atol=1e-9) and np.allclose(ea.s0, eb.s0, atol=1e-12)
