"""Finite Markov reward/decision processes and exact dynamic programming.

Everything here is a pure function of immutable inputs. Arrays stored on the
model classes are made read-only at construction time.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

ROW_SUM_TOL = 1e-12
DIRECT_SOLVE_MAX_STATES = 2000


class ModelError(ValueError):
    """Raised when a model violates a structural requirement."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver runs out of iterations."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_stochastic(t: np.ndarray, what: str) -> None:
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ModelError(f"{what}: transition entries must lie in [0, 1]")
    dev = np.abs(t.sum(axis=-1) - 1.0)
    if np.any(dev > ROW_SUM_TOL):
        raise ModelError(f"{what}: rows must sum to 1 (max deviation {dev.max():.3e})")


@dataclass(frozen=True)
class TabularMRP:
    """Markov reward process; ``rewards[s]`` is received on exiting ``s``."""

    rewards: np.ndarray
    transitions: np.ndarray
    gamma: float
    r_max: float | None = None
    terminal_states: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        r = _frozen(self.rewards)
        t = _frozen(self.transitions)
        if r.ndim != 1 or r.size == 0:
            raise ModelError("rewards must be a nonempty vector")
        n = r.size
        if t.shape != (n, n):
            raise ModelError(f"transitions must be {n}x{n}, got {t.shape}")
        if not np.all(np.isfinite(r)):
            raise ModelError("rewards must be finite")
        _check_stochastic(t, "TabularMRP")
        if not 0.0 <= self.gamma <= 1.0:
            raise ModelError(f"gamma must lie in [0, 1], got {self.gamma}")
        r_max = float(np.abs(r).max()) if self.r_max is None else float(self.r_max)
        if np.abs(r).max() > r_max + 1e-12:
            raise ModelError(f"|reward| exceeds r_max={r_max}")
        term = frozenset(int(s) for s in self.terminal_states)
        for s in term:
            if t[s, s] != 1.0 or r[s] != 0.0:
                raise ModelError(f"terminal state {s} must be a zero-reward self-loop")
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "transitions", t)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", r_max)
        object.__setattr__(self, "terminal_states", term)

    @property
    def n_states(self) -> int:
        return self.rewards.size


@dataclass(frozen=True)
class TabularMDP:
    """Finite MDP with ``rewards[s, a]`` and ``transitions[a, s, s']``."""

    rewards: np.ndarray
    transitions: np.ndarray
    gamma: float
    r_max: float | None = None
    terminal_states: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        r = _frozen(self.rewards)
        t = _frozen(self.transitions)
        if r.ndim != 2 or r.size == 0:
            raise ModelError("rewards must be an (n_states, n_actions) array")
        n, k = r.shape
        if t.shape != (k, n, n):
            raise ModelError(f"transitions must have shape {(k, n, n)}, got {t.shape}")
        if not np.all(np.isfinite(r)):
            raise ModelError("rewards must be finite")
        _check_stochastic(t, "TabularMDP")
        if not 0.0 <= self.gamma <= 1.0:
            raise ModelError(f"gamma must lie in [0, 1], got {self.gamma}")
        r_max = float(max(np.abs(r).max(), 0.0)) if self.r_max is None else float(self.r_max)
        if r_max <= 0.0:
            r_max = 1.0
        if np.abs(r).max() > r_max + 1e-12:
            raise ModelError(f"|reward| exceeds r_max={r_max}")
        term = frozenset(int(s) for s in self.terminal_states)
        for s in term:
            if np.any(t[:, s, s] != 1.0) or np.any(r[s] != 0.0):
                raise ModelError(f"terminal state {s} must be a zero-reward self-loop")
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "transitions", t)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", r_max)
        object.__setattr__(self, "terminal_states", term)

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]

    def policy_mrp(self, policy) -> TabularMRP:
        """MRP obtained by fixing the deterministic ``policy``."""
        a = np.asarray(policy, dtype=int)
        s = np.arange(self.n_states)
        return TabularMRP(
            self.rewards[s, a],
            self.transitions[a, s, :],
            self.gamma,
            r_max=self.r_max,
            terminal_states=self.terminal_states,
        )


# Values and policies are plain ndarrays: V has shape (n_states,), Q has shape
# (n_states, n_actions) and a deterministic policy is an int vector of actions.
StateValues = np.ndarray
ActionValues = np.ndarray
DeterministicPolicy = np.ndarray


def max_norm(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.abs(x).max()) if x.size else 0.0


# ---------------------------------------------------------------------------
# induced models


def _check_skip(d) -> int:
    if int(d) != d or d < 1:
        raise ValueError(f"frame-skip d must be a positive integer, got {d!r}")
    return int(d)


def induce_mrp(p: TabularMRP, d: int) -> TabularMRP:
    """The MRP seen when sensing only every ``d``-th state.

    Rewards become the expected discounted ``d``-step return, transitions
    become ``T**d`` and the discount becomes ``gamma**d``.
    """
    d = _check_skip(d)
    if d == 1:
        return p
    t = p.transitions
    r_d = np.zeros_like(p.rewards)
    term = p.rewards.copy()
    t_pow = np.eye(p.n_states)
    for j in range(d):
        r_d += term
        t_pow = t_pow @ t
        term = p.gamma * (t @ term)
    r_max = p.r_max * sum(p.gamma**j for j in range(d))
    return TabularMRP(
        r_d, _renormalize(t_pow), p.gamma**d, r_max=r_max, terminal_states=p.terminal_states
    )


def induce_mdp(m: TabularMDP, d: int) -> TabularMDP:
    """The MDP whose actions are ``d``-fold repetitions of the atomic ones."""
    d = _check_skip(d)
    if d == 1:
        return m
    n, k = m.rewards.shape
    r_d = np.zeros((n, k))
    t_d = np.empty((k, n, n))
    for a in range(k):
        ta = m.transitions[a]
        term = m.rewards[:, a].copy()
        acc = np.zeros(n)
        for _ in range(d):
            acc += term
            term = m.gamma * (ta @ term)
        r_d[:, a] = acc
        t_d[a] = _renormalize(np.linalg.matrix_power(ta, d))
    r_max = m.r_max * sum(m.gamma**j for j in range(d))
    return TabularMDP(r_d, t_d, m.gamma**d, r_max=r_max, terminal_states=m.terminal_states)


def _renormalize(t: np.ndarray) -> np.ndarray:
    # matrix powers drift off the simplex by a few ulps
    t = np.clip(t, 0.0, 1.0)
    return t / t.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# chain structure


@dataclass(frozen=True)
class ErgodicityReport:
    ergodic: bool
    irreducible: bool
    period: int
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ergodic


def _adjacency(t: np.ndarray) -> list[np.ndarray]:
    return [np.flatnonzero(row > 0.0) for row in t]


def _reachable(adj: list[np.ndarray], start: int) -> np.ndarray:
    seen = np.zeros(len(adj), dtype=bool)
    seen[start] = True
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(int(v))
    return seen


def check_ergodic(p: TabularMRP | np.ndarray) -> ErgodicityReport:
    """Strong connectivity plus aperiodicity of the transition graph.

    The period is the gcd of ``level[u] + 1 - level[v]`` over all edges, with
    levels taken from a breadth-first search; for a strongly connected graph
    this equals the gcd of all cycle lengths.
    """
    t = p.transitions if isinstance(p, TabularMRP) else np.asarray(p, dtype=float)
    n = t.shape[0]
    adj = _adjacency(t)
    fwd = _reachable(adj, 0)
    radj: list[list[int]] = [[] for _ in range(n)]
    for u, vs in enumerate(adj):
        for v in vs:
            radj[v].append(u)
    bwd = _reachable([np.asarray(x, dtype=int) for x in radj], 0)
    if not (fwd.all() and bwd.all()):
        missing = int(np.flatnonzero(~(fwd & bwd))[0])
        return ErgodicityReport(False, False, 0, f"not irreducible: state {missing} not strongly connected to state 0")

    level = np.full(n, -1)
    level[0] = 0
    queue = [0]
    for u in queue:
        for v in adj[u]:
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(int(v))
    g = 0
    for u, vs in enumerate(adj):
        for v in vs:
            g = math.gcd(g, int(level[u] + 1 - level[v]))
    g = abs(g)
    if g != 1:
        return ErgodicityReport(False, True, g, f"periodic with period {g}")
    return ErgodicityReport(True, True, 1)


def stationary_distribution(
    p: TabularMRP, tol: float = 1e-12, max_iter: int = 1_000_000
) -> np.ndarray:
    """Stationary distribution of an ergodic chain by power iteration."""
    report = check_ergodic(p)
    if not report:
        raise ModelError(f"stationary distribution requires an ergodic chain: {report.reason}")
    t = p.transitions
    mu = np.full(p.n_states, 1.0 / p.n_states)
    for _ in range(max_iter):
        nxt = mu @ t
        nxt /= nxt.sum()
        if np.abs(nxt - mu).max() <= tol:
            return nxt
        mu = nxt
    raise ConvergenceError("power iteration did not converge", float(np.abs(mu @ t - mu).max()))


# ---------------------------------------------------------------------------
# evaluation and optimal control


def _absorbing_zero(rewards: np.ndarray, t: np.ndarray) -> np.ndarray:
    diag = np.diagonal(t, axis1=-2, axis2=-1)
    if rewards.ndim == 1:
        return (diag == 1.0) & (rewards == 0.0)
    return np.all(diag == 1.0, axis=0) & np.all(rewards == 0.0, axis=1)


def evaluate_mrp(p: TabularMRP, tol: float = 1e-10) -> np.ndarray:
    """Solve ``V = R + gamma T V``.

    With ``gamma == 1`` the chain must be episodic: a zero-reward absorbing
    state has to be reachable from every state, and those states get value 0.
    """
    n = p.n_states
    t, r = p.transitions, p.rewards
    if p.gamma < 1.0:
        if n <= DIRECT_SOLVE_MAX_STATES:
            return np.linalg.solve(np.eye(n) - p.gamma * t, r)
        return _fixed_point(r, t, p.gamma, tol)

    absorbing = _absorbing_zero(r, t)
    if not absorbing.any():
        raise ValueError("gamma = 1 requires an episodic chain (no absorbing terminal state)")
    radj: list[list[int]] = [[] for _ in range(n)]
    for u, vs in enumerate(_adjacency(t)):
        for v in vs:
            radj[v].append(u)
    reach = np.zeros(n, dtype=bool)
    stack = list(np.flatnonzero(absorbing))
    reach[stack] = True
    while stack:
        u = stack.pop()
        for v in radj[u]:
            if not reach[v]:
                reach[v] = True
                stack.append(v)
    if not reach.all():
        bad = int(np.flatnonzero(~reach)[0])
        raise ValueError(f"gamma = 1 but no terminal state is reachable from state {bad}")
    v = np.zeros(n)
    live = ~absorbing
    if live.any():
        a = np.eye(live.sum()) - t[np.ix_(live, live)]
        v[live] = np.linalg.solve(a, r[live])
    return v


def _fixed_point(r, t, gamma, tol, max_iter=10_000_000):
    v = np.zeros_like(r)
    for _ in range(max_iter):
        nxt = r + gamma * (t @ v)
        res = np.abs(nxt - v).max()
        v = nxt
        if res <= tol:
            return v
    raise ConvergenceError("fixed-point evaluation did not converge", res)


def bellman_backup(m: TabularMDP, q: np.ndarray) -> np.ndarray:
    v = q.max(axis=1)
    return m.rewards + m.gamma * np.einsum("ast,t->sa", m.transitions, v)


def bellman_residual(m: TabularMDP, q: np.ndarray) -> float:
    return max_norm(bellman_backup(m, q) - q)


def value_iteration(m: TabularMDP, tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """Optimal action values ``Q*`` with Bellman residual at most ``tol``.

    Plain value iteration is followed by exact evaluation of its greedy
    policy; the polished ``Q`` is kept whenever its residual is smaller.
    """
    q = np.zeros_like(m.rewards)
    res = math.inf
    for _ in range(max_iter):
        nxt = bellman_backup(m, q)
        res = max_norm(nxt - q)
        q = nxt
        if res <= tol:
            break
    else:
        raise ConvergenceError("value iteration did not converge", res)

    # policy-iteration polish: exact up to linear-solve round-off
    for _ in range(50):
        pi = greedy_policy(q)
        try:
            v = evaluate_mrp(m.policy_mrp(pi))
        except (ValueError, np.linalg.LinAlgError):
            break
        cand = m.rewards + m.gamma * np.einsum("ast,t->sa", m.transitions, v)
        cand_res = bellman_residual(m, cand)
        if cand_res > bellman_residual(m, q):
            break
        q = cand
        if np.array_equal(greedy_policy(q), pi):
            break
    return q


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Per-state argmax; ties go to the lowest action index."""
    return np.argmax(np.asarray(q), axis=1)


def repeated_action_values(m: TabularMDP, q_star: np.ndarray, d: int) -> np.ndarray:
    """``Q*(s, a^d)`` for every state and action.

    Value of repeating ``a`` for ``d`` steps from ``s`` and acting optimally
    afterwards, via ``Q(s, a^k) = R(s, a) + gamma T^a Q(., a^(k-1))``.
    """
    d = _check_skip(d)
    out = np.array(q_star, dtype=float, copy=True)
    for _ in range(d - 1):
        out = m.rewards + m.gamma * np.einsum("ast,ta->sa", m.transitions, out)
    return out


def q_star_repeat(m: TabularMDP, q_star: np.ndarray, s: int, a: int, d: int) -> float:
    return float(repeated_action_values(m, q_star, d)[s, a])


class Inertia(NamedTuple):
    delta: float
    state: int
    action: int


def price_of_inertia(m: TabularMDP, q_star: np.ndarray | None = None) -> Inertia:
    """Largest loss from one forced extra repetition of an action.

    Returns the value together with the maximizing (state, action) pair.
    """
    if q_star is None:
        q_star = value_iteration(m)
    gap = q_star - repeated_action_values(m, q_star, 2)
    s, a = np.unravel_index(int(np.argmax(gap)), gap.shape)
    return Inertia(float(gap[s, a]), int(s), int(a))


def evaluate_policy(m: TabularMDP, policy) -> np.ndarray:
    return evaluate_mrp(m.policy_mrp(policy))


def evaluate_policy_with_repeat(m: TabularMDP, policy, d: int) -> np.ndarray:
    """Value in ``m`` of executing each chosen action ``d`` times in a row."""
    return evaluate_policy(induce_mdp(m, d), policy)


def optimal_values(m: TabularMDP, tol: float = 1e-10) -> np.ndarray:
    return value_iteration(m, tol).max(axis=1)


# ---------------------------------------------------------------------------
# random instances


def random_mrp(rng: np.random.Generator, n_states: int, gamma: float = 0.9) -> TabularMRP:
    """Dense Dirichlet(1) rows (hence ergodic) and uniform rewards in [-1, 1]."""
    t = rng.dirichlet(np.ones(n_states), size=n_states)
    r = rng.uniform(-1.0, 1.0, size=n_states)
    return TabularMRP(r, t, gamma, r_max=1.0)


def random_mdp(
    rng: np.random.Generator, n_states: int, n_actions: int, gamma: float = 0.9
) -> TabularMDP:
    t = rng.dirichlet(np.ones(n_states), size=(n_actions, n_states))
    r = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return TabularMDP(r, t, gamma, r_max=1.0)


# ---------------------------------------------------------------------------
# text format
#
#   mdp <n_states> <n_actions> <gamma> <r_max>
#   <reward> <p_0> ... <p_{n-1}>        one line per (state, action), state-major
#
#   mrp <n_states> <gamma> <r_max>
#   <reward> <p_0> ... <p_{n-1}>        one line per state


def dumps(model: TabularMDP | TabularMRP) -> str:
    buf = io.StringIO()
    fmt = lambda x: repr(float(x))  # noqa: E731  exact round trip
    if isinstance(model, TabularMDP):
        buf.write(f"mdp {model.n_states} {model.n_actions} {fmt(model.gamma)} {fmt(model.r_max)}\n")
        for s in range(model.n_states):
            buf.write(f"# state {s}\n")
            for a in range(model.n_actions):
                row = model.transitions[a, s]
                buf.write(" ".join([fmt(model.rewards[s, a])] + [fmt(x) for x in row]) + "\n")
    else:
        buf.write(f"mrp {model.n_states} {fmt(model.gamma)} {fmt(model.r_max)}\n")
        for s in range(model.n_states):
            row = model.transitions[s]
            buf.write(" ".join([fmt(model.rewards[s])] + [fmt(x) for x in row]) + "\n")
    return buf.getvalue()


def loads(text: str) -> TabularMDP | TabularMRP:
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line.split())
    if not lines:
        raise ModelError("empty model file")
    head, body = lines[0], lines[1:]
    kind = head[0].lower()
    if kind == "mdp":
        n, k = int(head[1]), int(head[2])
        gamma, r_max = float(head[3]), float(head[4])
        if len(body) != n * k:
            raise ModelError(f"expected {n * k} (state, action) rows, found {len(body)}")
        rewards = np.empty((n, k))
        trans = np.empty((k, n, n))
        for i, row in enumerate(body):
            if len(row) != n + 1:
                raise ModelError(f"row {i + 1}: expected {n + 1} numbers, found {len(row)}")
            s, a = divmod(i, k)
            rewards[s, a] = float(row[0])
            trans[a, s] = [float(x) for x in row[1:]]
        return TabularMDP(rewards, trans, gamma, r_max=r_max, terminal_states=_detect_terminal(rewards, trans))
    if kind == "mrp":
        n = int(head[1])
        gamma, r_max = float(head[2]), float(head[3])
        if len(body) != n:
            raise ModelError(f"expected {n} state rows, found {len(body)}")
        rewards = np.array([float(row[0]) for row in body])
        trans = np.array([[float(x) for x in row[1:]] for row in body])
        return TabularMRP(rewards, trans, gamma, r_max=r_max)
    raise ModelError(f"unknown model kind {head[0]!r}")


def _detect_terminal(rewards, trans) -> frozenset:
    return frozenset(int(s) for s in np.flatnonzero(_absorbing_zero(rewards, trans)))


def save(model, path) -> None:
    Path(path).write_text(dumps(model))


def load(path):
    return loads(Path(path).read_text())
