"""Tabular Q-learning over d-step tuples, with optional state aliasing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..envs.core import skip_step
from ..envs.gridworld import MOVES, GridWorld, GridWorldSpec


@dataclass
class AliasedQTable:
    """Q-values indexed by alias class; states in one class share a row."""

    q: np.ndarray
    alias_of: np.ndarray

    @classmethod
    def identity(cls, n_states: int, n_actions: int) -> "AliasedQTable":
        return cls(np.zeros((n_states, n_actions)), np.arange(n_states))

    def row(self, s: int) -> np.ndarray:
        return self.q[self.alias_of[s]]

    def state_values(self) -> np.ndarray:
        """Expanded ``(n_states, n_actions)`` view."""
        return self.q[self.alias_of]

    def greedy(self, s: int) -> int:
        return int(np.argmax(self.q[self.alias_of[s]]))


def random_neighbour_pairs(
    spec: GridWorldSpec, rng: np.random.Generator, fraction: float = 1.0
) -> np.ndarray:
    """Alias map pairing randomly chosen grid-adjacent non-goal states.

    States are visited in random order; each still-unpaired state is joined
    with a random unpaired neighbour (if any) with probability ``fraction``.
    Returns ``alias_of`` with classes numbered densely from 0.
    """
    cells = spec.cells
    index = {c: i for i, c in enumerate(cells)}
    n = len(cells)
    partner = np.full(n, -1)
    eligible = np.array([c not in spec.goals for c in cells])
    for s in rng.permutation(n):
        if partner[s] >= 0 or not eligible[s]:
            continue
        if rng.random() >= fraction:
            continue
        r, c = cells[s]
        nbrs = []
        for dr, dc in MOVES:
            j = index.get((r + dr, c + dc))
            if j is not None and eligible[j] and partner[j] < 0:
                nbrs.append(j)
        if nbrs:
            j = nbrs[int(rng.random() * len(nbrs))]
            partner[s], partner[j] = j, s
    alias_of = np.full(n, -1)
    k = 0
    for s in range(n):
        if alias_of[s] >= 0:
            continue
        alias_of[s] = k
        if partner[s] >= 0:
            alias_of[partner[s]] = k
        k += 1
    return alias_of


@dataclass
class QLearningConfig:
    d: int = 1
    episodes: int = 6000
    epsilon: float = 0.05
    alpha0: float = 0.5
    alpha_decay: float = 0.9995
    gamma: float = 1.0
    max_steps: int = 200
    eval_every: int = 100
    eval_episodes: int = 50
    alias_fraction: float | None = 1.0


@dataclass
class LearningCurve:
    episodes: list = field(default_factory=list)
    mean: list = field(default_factory=list)
    stderr: list = field(default_factory=list)

    def add(self, episode: int, returns) -> None:
        r = np.asarray(returns, dtype=float)
        self.episodes.append(int(episode))
        self.mean.append(float(r.mean()))
        self.stderr.append(float(r.std(ddof=1) / np.sqrt(r.size)) if r.size > 1 else 0.0)

    @property
    def final(self) -> float:
        return self.mean[-1]


def window_curve(returns, window: int = 100) -> LearningCurve:
    """Mean and standard error of consecutive blocks of episode returns."""
    curve = LearningCurve()
    returns = np.asarray(returns, dtype=float)
    for start in range(0, len(returns) - window + 1, window):
        curve.add(start + window, returns[start : start + window])
    return curve


def epsilon_greedy(row: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.random() * row.size)
    return int(np.argmax(row))


def greedy_rollouts(env, policy_fn, d: int, gamma: float, episodes: int, max_steps: int) -> np.ndarray:
    """Undiscounted returns of ``episodes`` runs, deciding every ``d`` steps."""
    out = np.empty(episodes)
    for i in range(episodes):
        s = env.reset()
        total, t = 0.0, 0
        while t < max_steps:
            k = min(d, max_steps - t)
            res = skip_step(env, policy_fn(s), k, 1.0)
            total += res.return_d
            t += res.steps_taken
            s = res.next
            if res.terminal:
                break
        out[i] = total
    return out


def q_learning_run(
    spec: GridWorldSpec,
    config: QLearningConfig,
    seed: np.random.SeedSequence | int | None = None,
) -> tuple[AliasedQTable, LearningCurve]:
    """Q-learning on the pitted grid with frame-skip ``config.d``.

    Each decision repeats its action for ``d`` steps; the update target is
    ``G + gamma^d max_a Q(s', a)`` (no bootstrap at termination). Training,
    evaluation and aliasing use independent random streams.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_train, s_eval, s_alias, s_env = ss.spawn(4)
    rng = np.random.default_rng(s_train)
    env = GridWorld(spec, seed=s_env)
    eval_env = GridWorld(spec, seed=s_eval)
    n = env.n_states
    if config.alias_fraction:
        alias_of = random_neighbour_pairs(spec, np.random.default_rng(s_alias), config.alias_fraction)
    else:
        alias_of = np.arange(n)
    table = AliasedQTable(np.zeros((alias_of.max() + 1, 4)), alias_of)
    q, d = table.q, config.d
    curve = LearningCurve()

    def evaluate(ep):
        rets = greedy_rollouts(
            eval_env, table.greedy, d, config.gamma, config.eval_episodes, config.max_steps
        )
        curve.add(ep, rets)

    for ep in range(config.episodes):
        if config.eval_every and ep % config.eval_every == 0:
            evaluate(ep)
        alpha = config.alpha0 * config.alpha_decay**ep
        s = env.reset()
        t = 0
        while t < config.max_steps:
            cs = alias_of[s]
            a = epsilon_greedy(q[cs], config.epsilon, rng)
            res = skip_step(env, a, min(d, config.max_steps - t), config.gamma)
            t += res.steps_taken
            target = res.return_d
            if not res.terminal:
                target += config.gamma**res.steps_taken * q[alias_of[res.next]].max()
            q[cs, a] += alpha * (target - q[cs, a])
            s = res.next
            if res.terminal:
                break
    evaluate(config.episodes)
    return table, curve
