"""Linear TD_d(lambda) prediction and exact value-error evaluation.

An update is made once every ``d`` steps from the tuple (state, discounted
``d``-step return, state ``d`` steps later), which is plain TD(lambda) on the
induced chain with discount ``gamma**d``. The arithmetic of one update lives
in :func:`td_step`; the compiled chain kernel calls the same function, so the
reference loop and the fast loop produce identical weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from ._jit import discount_pow
from .envs.core import TabularEnv, skip_step
from .tabular import ModelError, TabularMRP, evaluate_mrp, stationary_distribution

DEFAULT_TAU = 1.0e4


class DivergenceError(FloatingPointError):
    pass


@numba.njit(cache=True)
def td_step(w, e, x, x2, g, gamma_d, lam, alpha, terminal, trace_first):
    """One TD_d(lambda) update in place; returns the TD error."""
    v = 0.0
    v2 = 0.0
    for i in range(w.shape[0]):
        v += w[i] * x[i]
        if not terminal:
            v2 += w[i] * x2[i]
    delta = g + gamma_d * v2 - v
    decay = gamma_d * lam
    if trace_first:
        for i in range(w.shape[0]):
            e[i] = decay * e[i] + x[i]
            w[i] += alpha * delta * e[i]
    else:
        for i in range(w.shape[0]):
            w[i] += alpha * delta * e[i]
            e[i] = decay * e[i] + x[i]
    return delta


@numba.njit(cache=True)
def annealed_alpha(alpha0, t, tau):
    if tau > 0.0:
        return alpha0 / (1.0 + t / tau)
    return alpha0


@dataclass
class LinearEstimator:
    """Weights, trace and step parameters of a linear value estimate.

    ``phi[s]`` is the feature vector of state ``s``. ``trace_first`` applies
    the trace increment before the weight step (the usual accumulating-trace
    order); with ``False`` the weight step uses the previous trace.
    """

    phi: np.ndarray
    alpha: float
    lam: float
    gamma_d: float
    w: np.ndarray = None
    e: np.ndarray = None
    trace_first: bool = True

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        if self.phi.ndim == 1:
            self.phi = self.phi[:, None]
        k = self.phi.shape[1]
        self.w = np.zeros(k) if self.w is None else np.array(self.w, dtype=float)
        self.e = np.zeros(k) if self.e is None else np.array(self.e, dtype=float)
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")

    def value(self, s: int) -> float:
        return float(self.phi[s] @ self.w)

    def reset_trace(self) -> None:
        self.e[:] = 0.0


def td_update(
    est: LinearEstimator, s: int, return_d: float, s_next: int, next_terminal: bool, alpha=None
) -> float:
    """Apply one update to ``est`` in place and return the TD error."""
    delta = td_step(
        est.w, est.e, est.phi[s], est.phi[s_next], float(return_d), est.gamma_d, est.lam,
        est.alpha if alpha is None else alpha, bool(next_terminal), est.trace_first,
    )
    if not (np.isfinite(delta) and np.all(np.isfinite(est.w))):
        raise DivergenceError(f"non-finite TD update (delta={delta})")
    return delta


# ---------------------------------------------------------------------------
# runs


@dataclass
class TDRun:
    """Weight snapshots taken every ``record_every`` updates (and at the end)."""

    d: int
    lam: float
    alpha0: float
    updates: np.ndarray
    weights: np.ndarray
    diverged: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def steps(self) -> np.ndarray:
        return self.updates * self.d

    @property
    def final(self) -> np.ndarray:
        return self.weights[-1]


@numba.njit(cache=True)
def _td_kernel(
    cdf, rewards, terminal, starts, phi, gamma, d, lam, alpha0, tau, n_updates,
    record_every, trace_first, rng, w, snap_w, snap_t,
):
    k = phi.shape[1]
    e = np.zeros(k)
    gamma_d = discount_pow(gamma, d)
    s = starts[int(rng.random() * starts.shape[0])]
    n_snap = 0
    for t in range(n_updates):
        g = 0.0
        disc = 1.0
        cur = s
        term = False
        for _ in range(d):
            u = rng.random()
            g += disc * rewards[cur]
            disc *= gamma
            cur = np.searchsorted(cdf[cur], u, side="right")
            if terminal[cur]:
                term = True
                break
        nxt = cur
        delta = td_step(w, e, phi[s], phi[nxt], g, gamma_d, lam, annealed_alpha(alpha0, t, tau), term, trace_first)
        if not np.isfinite(delta):
            return t, n_snap, True
        if term:
            e[:] = 0.0
            nxt = starts[int(rng.random() * starts.shape[0])]
        s = nxt
        if (t + 1) % record_every == 0 or t + 1 == n_updates:
            snap_w[n_snap] = w
            snap_t[n_snap] = t + 1
            n_snap += 1
    return n_updates, n_snap, False


def run_td(
    env: TabularEnv,
    phi,
    d: int,
    lam: float,
    alpha: float,
    steps: int,
    tau: float = DEFAULT_TAU,
    seed=None,
    record_every: int | None = None,
    trace_first: bool = True,
    fast: bool = True,
) -> TDRun:
    """TD_d(lambda) on a sampled tabular chain for ``steps`` time steps.

    Makes ``steps // d`` updates with step size ``alpha / (1 + t / tau)``
    (``tau <= 0`` keeps it constant). Terminal states end the episode, clear
    the trace and restart from the environment's start law. ``fast=False``
    runs the reference loop through :func:`skip_step` and :func:`td_update`;
    both paths consume the random stream identically.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    n_updates = steps // d
    if n_updates < 1:
        raise ValueError("steps must be at least d")
    record_every = record_every or n_updates
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    env.rng = rng
    gamma = float(env.gamma)
    tau = float(tau) if tau else 0.0
    n_snap_max = -(-n_updates // record_every) + 1
    if fast:
        w = np.zeros(phi.shape[1])
        snap_w = np.zeros((n_snap_max, phi.shape[1]))
        snap_t = np.zeros(n_snap_max, dtype=np.int64)
        _, n_snap, diverged = _td_kernel(
            env._cdf[0], env.rewards[:, 0].copy(), env.terminal, env.starts.astype(np.int64), phi,
            gamma, d, lam, alpha, tau, n_updates, record_every, trace_first, rng, w, snap_w, snap_t,
        )
        return TDRun(d, lam, alpha, snap_t[:n_snap].copy(), snap_w[:n_snap].copy(), bool(diverged))

    est = LinearEstimator(phi, alpha, lam, discount_pow(gamma, d), trace_first=trace_first)
    snaps_t, snaps_w = [], []
    s = env.reset()
    diverged = False
    for t in range(n_updates):
        res = skip_step(env, 0, d, gamma)
        try:
            td_update(est, s, res.return_d, res.next, res.terminal, annealed_alpha(alpha, t, tau))
        except DivergenceError:
            diverged = True
            break
        if res.terminal:
            est.reset_trace()
            s = env.reset()
        else:
            s = res.next
        if (t + 1) % record_every == 0 or t + 1 == n_updates:
            snaps_t.append(t + 1)
            snaps_w.append(est.w.copy())
    return TDRun(
        d, lam, alpha, np.array(snaps_t, dtype=np.int64), np.array(snaps_w).reshape(-1, phi.shape[1]), diverged
    )


# ---------------------------------------------------------------------------
# exact error


def _features(phi, n):
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    if phi.shape[0] != n:
        raise ValueError(f"feature matrix has {phi.shape[0]} rows for {n} states")
    return phi


def value_error(p: TabularMRP, phi, w, mu=None, v=None) -> float:
    """``sum_s mu(s) (V(s) - w . phi(s))^2`` under the stationary distribution."""
    phi = _features(phi, p.n_states)
    mu = stationary_distribution(p) if mu is None else mu
    v = evaluate_mrp(p) if v is None else v
    err = v - phi @ np.atleast_1d(np.asarray(w, dtype=float))
    return float(mu @ err**2)


def _dependent_columns(a: np.ndarray, tol: float) -> list[int]:
    dep = []
    kept: list[int] = []
    for j in range(a.shape[1]):
        trial = a[:, kept + [j]]
        if np.linalg.matrix_rank(trial, tol=tol) < len(kept) + 1:
            dep.append(j)
        else:
            kept.append(j)
    return dep


def optimal_weights(p: TabularMRP, phi, mu=None, v=None) -> np.ndarray:
    """Minimizer of :func:`value_error` via the weighted normal equations."""
    phi = _features(phi, p.n_states)
    mu = stationary_distribution(p) if mu is None else mu
    v = evaluate_mrp(p) if v is None else v
    a = phi * np.sqrt(mu)[:, None]
    tol = max(a.shape) * np.finfo(float).eps * max(np.abs(a).max(), 1.0)
    if np.linalg.matrix_rank(a, tol=tol) < phi.shape[1]:
        raise ModelError(f"features are linearly dependent under mu: columns {_dependent_columns(a, tol)}")
    gram = phi.T @ (mu[:, None] * phi)
    rhs = phi.T @ (mu * v)
    w = np.linalg.solve(gram, rhs)
    # one step of iterative refinement keeps the normal-equation residual tiny
    w += np.linalg.solve(gram, rhs - gram @ w)
    return w


def td_fixed_point(p: TabularMRP, phi, lam: float, mu=None) -> np.ndarray:
    """Limit of linear TD(lambda) on ``p`` (on-policy, stationary sampling)."""
    phi = _features(phi, p.n_states)
    mu = stationary_distribution(p) if mu is None else mu
    n = p.n_states
    t, g = p.transitions, p.gamma
    resolvent = np.linalg.inv(np.eye(n) - g * lam * t)
    dphi = phi.T * mu
    a = dphi @ resolvent @ (np.eye(n) - g * t) @ phi
    b = dphi @ resolvent @ p.rewards
    return np.linalg.solve(a, b)


def error_bound_factor(gamma: float, d: int, lam: float) -> float:
    """``(1 - gamma^d lam) / (1 - gamma^d)``, the limit-error multiplier."""
    gd = gamma**d
    return (1.0 - gd * lam) / (1.0 - gd)
