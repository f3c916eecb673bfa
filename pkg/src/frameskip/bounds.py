"""Closed-form action-repetition bounds and exact checks against them.

Each ``*_check`` / ``verify_*`` function solves the relevant models exactly
and returns a :class:`BoundReport` comparing the measured gap with the bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tabular import (
    TabularMDP,
    evaluate_policy,
    evaluate_policy_with_repeat,
    greedy_policy,
    induce_mdp,
    max_norm,
    price_of_inertia,
    value_iteration,
)

HOLD_TOL = 1e-9

STAY, MOVE = 0, 1


@dataclass(frozen=True)
class BoundReport:
    bound_value: float
    exact_value: float
    context: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        return self.bound_value - self.exact_value

    @property
    def holds(self) -> bool:
        return self.slack >= -HOLD_TOL

    def row(self) -> dict:
        out = {
            "bound": self.bound_value,
            "exact": self.exact_value,
            "slack": self.slack,
            "holds": self.holds,
        }
        out.update(self.context)
        return out


def geometric_terms(m: int, n: int | float, gamma: float) -> tuple[float, float]:
    """``G_m = sum_{i<m-1} gamma^i`` and ``H_{m,n} = sum_{i<n} gamma^(m i)``.

    ``n`` may be ``math.inf``, in which case the closed form
    ``1 / (1 - gamma^m)`` is used.
    """
    if m < 2 or n < 1:
        raise ValueError("need m >= 2 and n >= 1")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    g = float(sum(gamma**i for i in range(m - 1)))
    if math.isinf(n):
        if gamma >= 1.0:
            raise ValueError("H_{m,inf} diverges for gamma >= 1")
        h = 1.0 / (1.0 - gamma**m)
    else:
        h = float(sum(gamma ** (m * i) for i in range(int(n))))
    return g, h


def repetition_factor(gamma: float, d: int) -> float:
    """``(1 - gamma^(d-1)) / ((1 - gamma)(1 - gamma^d))``; zero at ``d == 1``."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"repetition bound needs gamma in [0, 1), got {gamma}")
    if d < 1:
        raise ValueError("d must be a positive integer")
    return (1.0 - gamma ** (d - 1)) / ((1.0 - gamma) * (1.0 - gamma**d))


def deficit_bound(delta: float, gamma: float, d: int) -> float:
    if delta < 0:
        raise ValueError("price of inertia is nonnegative")
    return delta * repetition_factor(gamma, d)


def greedy_loss_bound(eps: float, gamma: float) -> float:
    if not 0.0 <= gamma < 1.0:
        raise ValueError("greedy-loss bound needs gamma < 1")
    return 2.0 * eps * gamma / (1.0 - gamma)


def aggregate_constants(gamma: float, d: int) -> tuple[float, float]:
    """``(C1, C3)`` for the aggregate bound; ``C2`` depends on the estimate."""
    c3 = repetition_factor(gamma, d)
    gd = gamma**d
    return c3 * (1.0 + 2.0 * gd / (1.0 - gd)), c3


# ---------------------------------------------------------------------------
# exact verifications


def _require_discounted(m: TabularMDP) -> None:
    if not m.gamma < 1.0:
        raise ValueError("bound checks need gamma < 1")


def verify_value_deficit(
    m: TabularMDP, d: int, q_star: np.ndarray | None = None
) -> tuple[BoundReport, BoundReport]:
    """Exact V- and Q-deficits of ``d``-fold repetition versus the bound."""
    _require_discounted(m)
    if q_star is None:
        q_star = value_iteration(m, tol=1e-12)
    q_d = value_iteration(induce_mdp(m, d), tol=1e-12)
    inertia = price_of_inertia(m, q_star)
    bound = deficit_bound(max(inertia.delta, 0.0), m.gamma, d)
    ctx = {"gamma": m.gamma, "d": d, "delta_m": inertia.delta}
    v_gap = max_norm(q_star.max(axis=1) - q_d.max(axis=1))
    q_gap = max_norm(q_star - q_d)
    return (
        BoundReport(bound, v_gap, {**ctx, "kind": "value"}),
        BoundReport(bound, q_gap, {**ctx, "kind": "action_value"}),
    )


def lower_bound_mdp(delta: float, gamma: float, d: int) -> TabularMDP:
    """Deterministic ``d``-state ring on which the deficit bound is attained.

    Action 0 (stay) self-loops, action 1 (move) advances around the ring.
    Moving out of state 0 and staying anywhere else pays ``delta / gamma``;
    every other transition pays 0.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if d < 2:
        raise ValueError("lower-bound construction needs d >= 2")
    x = delta / gamma
    rewards = np.zeros((d, 2))
    trans = np.zeros((2, d, d))
    for s in range(d):
        trans[STAY, s, s] = 1.0
        trans[MOVE, s, (s + 1) % d] = 1.0
        rewards[s, STAY] = 0.0 if s == 0 else x
    rewards[0, MOVE] = x
    return TabularMDP(rewards, trans, gamma, r_max=x)


@dataclass(frozen=True)
class Reversibility:
    reversible: bool
    witness: tuple[int, int, int] | None = None


def deterministic_successors(m: TabularMDP) -> np.ndarray:
    """``next[s, a]`` for a deterministic MDP; raises for stochastic ones."""
    t = m.transitions
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError("MDP is not deterministic")
    return np.argmax(t, axis=2).T


def reversibility(m: TabularMDP) -> Reversibility:
    nxt = deterministic_successors(m)
    for s in range(m.n_states):
        for a in range(m.n_actions):
            s2 = int(nxt[s, a])
            if not np.any(nxt[s2] == s):
                return Reversibility(False, (s, a, s2))
    return Reversibility(True)


def check_reversible_inertia(m: TabularMDP) -> BoundReport:
    """Price of inertia against ``2 gamma (1 + gamma) r_max`` (at most 4 r_max)."""
    rev = reversibility(m)
    ctx = {"gamma": m.gamma, "r_max": m.r_max, "reversible": rev.reversible, "witness": rev.witness}
    delta = price_of_inertia(m).delta
    ctx["delta_m"] = delta
    ctx["coarse_bound"] = 4.0 * m.r_max
    if not rev.reversible:
        return BoundReport(-math.inf, delta, ctx)
    return BoundReport(2.0 * m.gamma * (1.0 + m.gamma) * m.r_max, delta, ctx)


def greedy_loss_bound_check(
    m: TabularMDP, q_hat: np.ndarray, q_star: np.ndarray | None = None
) -> BoundReport:
    """Loss of acting greedily on ``q_hat`` versus ``2 eps gamma / (1 - gamma)``."""
    _require_discounted(m)
    if q_star is None:
        q_star = value_iteration(m, tol=1e-12)
    eps = max_norm(q_star - q_hat)
    loss = max_norm(q_star.max(axis=1) - evaluate_policy(m, greedy_policy(q_hat)))
    return BoundReport(greedy_loss_bound(eps, m.gamma), loss, {"gamma": m.gamma, "d": 1, "eps": eps})


def aggregate_bound_check(
    m: TabularMDP, q_hat: np.ndarray, d: int, q_star: np.ndarray | None = None
) -> BoundReport:
    """Loss of the greedy policy run with ``d``-fold repetition versus the
    aggregate bound ``delta C1 + gamma^d / (1 - gamma^d) C2``."""
    _require_discounted(m)
    if q_star is None:
        q_star = value_iteration(m, tol=1e-12)
    delta = max(price_of_inertia(m, q_star).delta, 0.0)
    c1, c3 = aggregate_constants(m.gamma, d)
    c2 = 2.0 * max_norm(q_star - q_hat)
    gd = m.gamma**d
    inertia_term = delta * c1
    estimate_term = gd / (1.0 - gd) * c2
    v_d = evaluate_policy_with_repeat(m, greedy_policy(q_hat), d)
    loss = max_norm(q_star.max(axis=1) - v_d)
    ctx = {
        "gamma": m.gamma,
        "d": d,
        "delta_m": delta,
        "eps": c2 / 2.0,
        "c1": c1,
        "c2": c2,
        "c3": c3,
        "inertia_term": inertia_term,
        "estimate_term": estimate_term,
    }
    return BoundReport(inertia_term + estimate_term, loss, ctx)


# ---------------------------------------------------------------------------
# instance families for the property suites


def random_reversible_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float) -> TabularMDP:
    """Deterministic MDP whose actions come in inverse pairs.

    Actions ``2i`` and ``2i + 1`` are a random permutation of the states and
    its inverse, so every edge can be walked back. Rewards are uniform in
    ``[-1, 1]``. An odd ``n_actions`` adds a self-loop action.
    """
    if n_actions < 1:
        raise ValueError("need at least one action")
    trans = np.zeros((n_actions, n_states, n_states))
    states = np.arange(n_states)
    for a in range(0, n_actions - 1, 2):
        perm = rng.permutation(n_states)
        trans[a, states, perm] = 1.0
        trans[a + 1, perm, states] = 1.0
    if n_actions % 2:
        trans[n_actions - 1, states, states] = 1.0
    rewards = rng.uniform(-1.0, 1.0, (n_states, n_actions))
    return TabularMDP(rewards, trans, gamma, r_max=1.0)


def gradual_chain_mdp(
    rng: np.random.Generator, n_states: int = 20, gamma: float = 0.9, p: float = 0.9, width: int = 9
) -> TabularMDP:
    """Noisy left/right walk whose state rewards vary slowly along the line.

    Rewards are a moving average of ``width`` uniform draws in ``[-1, 1]``,
    so neighbouring states look alike and repeating an action costs little:
    the price of inertia stays small. A move succeeds with probability ``p``
    and otherwise leaves the agent in place.
    """
    raw = rng.uniform(-1.0, 1.0, n_states + width - 1)
    r = np.convolve(raw, np.ones(width) / width, mode="valid")
    trans = np.zeros((2, n_states, n_states))
    for s in range(n_states):
        trans[0, s, max(s - 1, 0)] += p
        trans[1, s, min(s + 1, n_states - 1)] += p
        trans[:, s, s] += 1.0 - p
    return TabularMDP(np.stack([r, r], axis=1), trans, gamma, r_max=1.0)
