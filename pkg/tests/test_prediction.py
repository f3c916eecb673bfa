import itertools

import numpy as np
import pytest

from frameskip.envs.chain import canonical_chain, chain_mrp
from frameskip.envs.core import TabularEnv
from frameskip.prediction import (
    DivergenceError,
    LinearEstimator,
    annealed_alpha,
    error_bound_factor,
    optimal_weights,
    run_td,
    td_fixed_point,
    td_update,
    value_error,
)
from frameskip.tabular import ModelError, TabularMRP, evaluate_mrp, induce_mrp, random_mrp, stationary_distribution

CYCLE = np.roll(np.eye(3), 1, axis=1)  # s -> s + 1 mod 3


# --- single updates -----------------------------------------------------------


def test_first_update_by_hand():
    est = LinearEstimator(np.ones((1, 1)), alpha=0.3, lam=0.7, gamma_d=0.5)
    delta = td_update(est, 0, 1.0, 0, False)
    assert delta == 1.0
    assert est.e[0] == 1.0
    assert est.w[0] == pytest.approx(0.3)


def test_paper_order_first_update_is_noop():
    est = LinearEstimator(np.ones((1, 1)), alpha=0.3, lam=0.7, gamma_d=0.5, trace_first=False)
    td_update(est, 0, 1.0, 0, False)
    assert est.w[0] == 0.0 and est.e[0] == 1.0


def test_consistent_target_leaves_weights():
    phi = np.array([[1.0, 2.0], [0.5, -1.0]])
    est = LinearEstimator(phi, alpha=0.1, lam=0.5, gamma_d=0.8, w=[0.3, -0.2])
    g = est.value(0) - 0.8 * est.value(1)
    before = est.w.copy()
    assert td_update(est, 0, g, 1, False) == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(est.w, before, atol=1e-15)


def test_terminal_drops_bootstrap():
    est = LinearEstimator(np.eye(2), alpha=1.0, lam=0.0, gamma_d=0.9, w=[0.0, 5.0])
    assert td_update(est, 0, 2.0, 1, True) == 2.0


def test_non_finite_update_raises():
    est = LinearEstimator(np.ones((1, 1)), alpha=0.1, lam=0.0, gamma_d=0.5)
    with pytest.raises(DivergenceError):
        td_update(est, 0, np.inf, 0, False)


def test_estimator_argument_checks():
    with pytest.raises(ValueError):
        LinearEstimator(np.ones(2), alpha=0.0, lam=0.5, gamma_d=0.5)
    with pytest.raises(ValueError):
        LinearEstimator(np.ones(2), alpha=0.1, lam=1.5, gamma_d=0.5)


def test_scripted_transitions_match_straight_line_reference(rng):
    phi = rng.normal(size=(3, 2))
    tuples = [(int(rng.integers(3)), float(rng.normal()), int(rng.integers(3))) for _ in range(10)]
    alpha, lam, gd = 0.05, 0.8, 0.9**3
    est = LinearEstimator(phi, alpha, lam, gd)
    for s, g, s2 in tuples:
        td_update(est, s, g, s2, False)

    w = [0.0, 0.0]
    e = [0.0, 0.0]
    for s, g, s2 in tuples:
        v = w[0] * phi[s, 0] + w[1] * phi[s, 1]
        v2 = w[0] * phi[s2, 0] + w[1] * phi[s2, 1]
        delta = g + gd * v2 - v
        e = [gd * lam * e[0] + phi[s, 0], gd * lam * e[1] + phi[s, 1]]
        w = [w[0] + alpha * delta * e[0], w[1] + alpha * delta * e[1]]
    assert np.allclose(est.w, w, atol=1e-12, rtol=0)


def test_skip_updates_equal_induced_chain_updates(rng):
    """Same tuples, discount gamma^d vs the induced chain's own discount."""
    p = random_mrp(rng, 4, gamma=0.9)
    d = 3
    phi = rng.normal(size=(4, 2))
    a = LinearEstimator(phi, 0.1, 0.6, 0.9**d)
    b = LinearEstimator(phi, 0.1, 0.6, induce_mrp(p, d).gamma)
    for _ in range(20):
        s, s2, g = int(rng.integers(4)), int(rng.integers(4)), float(rng.normal())
        assert td_update(a, s, g, s2, False) == pytest.approx(td_update(b, s, g, s2, False), abs=1e-12)
    assert np.allclose(a.w, b.w, atol=1e-12)


# --- runs ---------------------------------------------------------------------


def test_annealed_step_size():
    assert annealed_alpha(0.1, 0, 1e4) == 0.1
    assert annealed_alpha(0.1, 1e4, 1e4) == pytest.approx(0.05)
    assert annealed_alpha(0.1, 1e6, 0.0) == 0.1


def test_one_update_when_steps_equal_d():
    task = canonical_chain()
    run = run_td(TabularEnv(task.mrp), task.phi, 7, 0.5, 0.01, 7, seed=0)
    assert list(run.updates) == [1] and list(run.steps) == [7]


def test_run_argument_checks():
    task = canonical_chain()
    with pytest.raises(ValueError):
        run_td(TabularEnv(task.mrp), task.phi, 0, 0.5, 0.01, 10)
    with pytest.raises(ValueError):
        run_td(TabularEnv(task.mrp), task.phi, 8, 0.5, 0.01, 7)


@pytest.mark.parametrize("fast", [True, False])
def test_lambda_zero_update_is_d_step_backup(fast):
    p = TabularMRP([1.0, 2.0, 3.0], CYCLE, 0.5)
    run = run_td(TabularEnv(p, start=0), np.eye(3), 4, 0.0, 0.2, 4, tau=0, seed=0, fast=fast)
    target = 1 + 0.5 * 2 + 0.25 * 3 + 0.125 * 1
    assert np.allclose(run.final, [0.2 * target, 0.0, 0.0], atol=1e-15)

    run = run_td(TabularEnv(p, start=0), np.eye(3), 4, 0.0, 0.2, 8, tau=0, seed=0, fast=fast)
    # second update starts in state 1 and bootstraps from state 2 (weight 0)
    second = 2 + 0.5 * 3 + 0.25 * 1 + 0.125 * 2
    assert np.allclose(run.final, [0.2 * target, 0.2 * second, 0.0], atol=1e-15)


@pytest.mark.parametrize("d,lam", [(1, 0.0), (3, 0.5), (4, 1.0)])
def test_fast_kernel_matches_reference_loop(d, lam):
    task = chain_mrp(7, 0.9, "linear", noise=0.2)
    kw = dict(seed=11, record_every=50)
    a = run_td(TabularEnv(task.mrp), task.phi, d, lam, 0.05, 3000, **kw)
    b = run_td(TabularEnv(task.mrp), task.phi, d, lam, 0.05, 3000, fast=False, **kw)
    assert np.array_equal(a.updates, b.updates)
    assert np.array_equal(a.weights, b.weights)


def test_snapshots_cover_the_run():
    task = canonical_chain()
    run = run_td(TabularEnv(task.mrp), task.phi, 2, 0.0, 0.01, 1001, seed=1, record_every=100)
    assert list(run.updates) == [100, 200, 300, 400, 500]
    assert run.weights.shape == (5, 1)


def test_divergence_flagged_and_truncated():
    task = chain_mrp(5, 0.99, "linear")
    phi = task.phi * 1e3
    run = run_td(TabularEnv(task.mrp), phi, 1, 1.0, 10.0, 100_000, tau=0, seed=0, record_every=1)
    assert run.diverged
    assert len(run.updates) < 100_000
    ref = run_td(TabularEnv(task.mrp), phi, 1, 1.0, 10.0, 100_000, tau=0, seed=0, record_every=1, fast=False)
    assert ref.diverged


def _realizable_limit(tau, seed):
    # scaled so the exact weight is the feature scale; small annealed steps
    task = canonical_chain(realizable=True)
    scale = np.abs(task.phi).max()
    run = run_td(TabularEnv(task.mrp), task.phi / scale, 1, 1.0, 0.003, 2_000_000, tau=tau, seed=seed)
    return run.final[0] / scale


def test_realizable_chain_converges_to_one():
    assert _realizable_limit(1e4, 3) == pytest.approx(1.0, abs=1e-2)


def test_lambda_one_limit_independent_of_anneal_schedule():
    finals = [_realizable_limit(tau, s) for tau, s in [(1e3, 0), (3e3, 1), (1e4, 2)]]
    assert max(finals) - min(finals) <= 1e-2


def test_short_run_respects_error_bound():
    task = canonical_chain()
    e_opt = value_error(task.mrp, task.phi, optimal_weights(task.mrp, task.phi))
    for d in (1, 4):
        run = run_td(TabularEnv(task.mrp), task.phi, d, 0.0, 0.005, 200_000, seed=d)
        err = value_error(task.mrp, task.phi, run.final)
        assert err <= 1.1 * error_bound_factor(0.95, d, 0.0) * e_opt


# --- exact error and least squares -------------------------------------------


def test_error_bound_factor_endpoints():
    assert error_bound_factor(0.9, 3, 1.0) == pytest.approx(1.0)
    assert error_bound_factor(0.9, 3, 0.0) == pytest.approx(1 / (1 - 0.729))
    assert error_bound_factor(0.9, 1, 0.5) == pytest.approx(0.55 / 0.1)


def test_value_error_at_zero_weights():
    task = canonical_chain()
    mu = stationary_distribution(task.mrp)
    v = evaluate_mrp(task.mrp)
    assert value_error(task.mrp, task.phi, [0.0]) == pytest.approx(sum(m * x * x for m, x in zip(mu, v)), rel=1e-12)


def test_realizable_error_zero():
    task = canonical_chain(realizable=True)
    assert value_error(task.mrp, task.phi, [1.0]) == pytest.approx(0.0, abs=1e-20)
    assert value_error(task.mrp, task.phi, optimal_weights(task.mrp, task.phi)) == pytest.approx(0.0, abs=1e-18)


def test_scalar_closed_form():
    task = canonical_chain()
    mu = stationary_distribution(task.mrp)
    v = evaluate_mrp(task.mrp)
    x = task.phi[:, 0]
    assert optimal_weights(task.mrp, task.phi)[0] == pytest.approx((mu * x * v).sum() / (mu * x * x).sum(), rel=1e-12)


def test_optimal_weights_are_local_minimum(rng):
    p = random_mrp(rng, 6)
    phi = rng.normal(size=(6, 2))
    w = optimal_weights(p, phi)
    base = value_error(p, phi, w)
    for dw in itertools.product((-1e-3, 0.0, 1e-3), repeat=2):
        assert value_error(p, phi, w + np.array(dw)) >= base - 1e-15


def test_optimal_weights_match_grid_search(rng):
    p = random_mrp(rng, 8)
    phi = rng.normal(size=(8, 3))
    mu, v = stationary_distribution(p), evaluate_mrp(p)
    w = optimal_weights(p, phi)
    best = np.zeros(3)
    width = 10.0
    for _ in range(12):  # coarse-to-fine grid search
        axes = [np.linspace(c - width, c + width, 21) for c in best]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
        errs = ((v[:, None] - phi @ grid.T) ** 2 * mu[:, None]).sum(axis=0)
        best = grid[int(np.argmin(errs))]
        width /= 4
    assert np.allclose(best, w, atol=1e-4)
    assert value_error(p, phi, best) >= value_error(p, phi, w)


def test_dependent_features_rejected():
    task = canonical_chain()
    phi = np.hstack([task.phi, 2 * task.phi, np.ones((19, 1))])
    with pytest.raises(ModelError, match=r"\[1\]"):
        optimal_weights(task.mrp, phi)


def test_feature_rows_must_match_states():
    task = canonical_chain()
    with pytest.raises(ValueError):
        value_error(task.mrp, np.ones((3, 1)), [1.0])


def test_lambda_one_fixed_point_is_least_squares(rng):
    p = random_mrp(rng, 6)
    phi = rng.normal(size=(6, 2))
    assert np.allclose(td_fixed_point(p, phi, 1.0), optimal_weights(p, phi), atol=1e-9)


@pytest.mark.parametrize("lam", [0.0, 0.5, 0.9])
def test_fixed_point_error_bound(lam, rng):
    """Norm-form contraction bound at the TD fixed point, on induced chains."""
    for _ in range(10):
        p = random_mrp(rng, 6, gamma=0.9)
        phi = rng.normal(size=(6, 2))
        for d in (1, 2, 4):
            q = induce_mrp(p, d)
            e_fix = value_error(q, phi, td_fixed_point(q, phi, lam))
            e_opt = value_error(q, phi, optimal_weights(q, phi))
            factor = (1 - lam * q.gamma) / (1 - q.gamma)
            assert e_fix <= factor**2 * e_opt * (1 + 1e-9) + 1e-15
