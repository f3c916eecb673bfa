"""Sarsa_d(lambda) and FiGAR-Sarsa over sparse binary features.

A decision picks an *option* ``(action, repeat)``; plain Sarsa_d uses the
options ``(a, d)`` for every atomic action while FiGAR-Sarsa uses the full
product with a set of repeat counts. All arithmetic on the weights goes
through the jitted helpers below, which the compiled Acrobot kernel calls
too; the generic and compiled paths therefore agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .._jit import discount_pow
from ..envs import acrobot as ab
from ..envs.core import Environment, skip_step
from .qlearning import window_curve  # noqa: F401  (re-exported)
from .tiles import TileCoder, tile_indices


class DivergenceError(FloatingPointError):
    pass


@numba.njit(cache=True)
def option_values(w, active, out):
    for o in range(w.shape[0]):
        acc = 0.0
        for i in active:
            acc += w[o, i]
        out[o] = acc


@numba.njit(cache=True)
def argmax_first(v):
    best = 0
    for i in range(1, v.shape[0]):
        if v[i] > v[best]:
            best = i
    return best


@numba.njit(cache=True)
def epsilon_greedy(q, epsilon, rng):
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.random() * q.shape[0])
    return argmax_first(q)


@numba.njit(cache=True)
def sarsa_update(w, e, o, active, g, terminal, o2, active2, gk, lam, step_alpha, replacing):
    """One Sarsa(lambda) backup on a ``k``-step tuple; returns the TD error.

    ``gk`` is ``gamma**k`` for the ``k`` steps actually taken.
    """
    delta = g
    for i in active:
        delta -= w[o, i]
        if replacing:
            e[o, i] = 1.0
        else:
            e[o, i] += 1.0
    if not terminal:
        for i in active2:
            delta += gk * w[o2, i]
    scale = step_alpha * delta
    decay = gk * lam
    for a in range(w.shape[0]):
        for j in range(w.shape[1]):
            w[a, j] += scale * e[a, j]
            e[a, j] *= decay
    return delta


@dataclass
class SarsaConfig:
    d: int = 1
    lam: float = 0.9
    alpha: float = 0.1
    epsilon: float = 0.1
    epsilon_decay: float = 0.999
    gamma: float = 1.0
    episodes: int = 8000
    replacing: bool = True
    normalize_alpha: bool = True  # divide alpha by the active-feature count


class SarsaLambda:
    """Linear Sarsa(lambda) over options ``(atomic_action, repeat)``."""

    def __init__(self, n_features: int, options, config: SarsaConfig, rng: np.random.Generator):
        self.options = [(int(a), int(k)) for a, k in options]
        self.config = config
        self.rng = rng
        self.w = np.zeros((len(self.options), n_features))
        self.e = np.zeros_like(self.w)
        self.episodes_done = 0
        self._q = np.empty(len(self.options))

    @classmethod
    def fixed_repeat(cls, n_features, n_actions, config, rng):
        return cls(n_features, [(a, config.d) for a in range(n_actions)], config, rng)

    @property
    def epsilon(self) -> float:
        return self.config.epsilon * self.config.epsilon_decay ** float(self.episodes_done)

    def values(self, active) -> np.ndarray:
        option_values(self.w, active, self._q)
        return self._q.copy()

    def select(self, active, epsilon: float) -> int:
        option_values(self.w, active, self._q)
        return int(epsilon_greedy(self._q, epsilon, self.rng))

    def run_episode(self, env: Environment, features) -> float:
        """Play and learn from one episode; returns its undiscounted return."""
        cfg = self.config
        eps = self.epsilon
        x = features(env.reset())
        step_alpha = cfg.alpha / len(x) if cfg.normalize_alpha else cfg.alpha
        o = self.select(x, eps)
        self.e[:] = 0.0
        total = 0.0
        while True:
            a, k = self.options[o]
            res = skip_step(env, a, k, cfg.gamma)
            total += res.reward_sum
            gk = discount_pow(cfg.gamma, res.steps_taken)
            if res.terminal:
                delta = sarsa_update(self.w, self.e, o, x, res.return_d, True, o, x, gk, cfg.lam, step_alpha, cfg.replacing)
                self._check(delta)
                break
            x2 = features(res.next)
            o2 = self.select(x2, eps)
            delta = sarsa_update(self.w, self.e, o, x, res.return_d, False, o2, x2, gk, cfg.lam, step_alpha, cfg.replacing)
            self._check(delta)
            if res.truncated:
                break
            x, o = x2, o2
        self.episodes_done += 1
        return total

    def greedy_option(self, active) -> tuple[int, int]:
        return self.options[int(np.argmax(self.values(active)))]

    def fingerprint(self) -> int:
        return hash((self.w.tobytes(), self.episodes_done))

    @staticmethod
    def _check(delta):
        if not np.isfinite(delta):
            raise DivergenceError("non-finite TD error")


def one_hot(n_states: int):
    def features(s):
        return np.array([int(s)], dtype=np.int64)

    features.size = n_states
    return features


# ---------------------------------------------------------------------------
# Acrobot


def acrobot_tile_coder(n_tilings: int = 8, n_tiles: int = 8) -> TileCoder:
    return TileCoder(ab.FEATURE_LOW, ab.FEATURE_HIGH, n_tilings, n_tiles)


_TORQUES = np.array(ab.TORQUES)


@numba.njit(cache=True)
def _sarsa_acrobot(
    w, env_rng, agent_rng, d, gamma, lam, alpha, eps0, eps_decay, episodes, first_episode,
    max_steps, substeps, low, high, n_tilings, n_tiles, replacing, returns,
):
    n_active = low.shape[0] * n_tilings
    step_alpha = alpha / n_active
    e = np.zeros_like(w)
    active = np.empty(n_active, dtype=np.int64)
    active2 = np.empty(n_active, dtype=np.int64)
    q = np.empty(w.shape[0])
    obs = np.empty(low.shape[0])
    for ep in range(episodes):
        eps = eps0 * eps_decay ** float(first_episode + ep)
        state = ab.reset_state(env_rng)
        ab.observe(state, obs)
        tile_indices(obs, low, high, n_tilings, n_tiles, active)
        option_values(w, active, q)
        o = epsilon_greedy(q, eps, agent_rng)
        e[:, :] = 0.0
        t = 0
        total = 0.0
        while True:
            torque = _TORQUES[o]
            g = 0.0
            disc = 1.0
            k = 0
            terminal = False
            truncated = False
            for _ in range(d):
                state = ab.integrate(state, torque, substeps)
                t += 1
                k += 1
                terminal = ab.is_terminal(state)
                r = 0.0 if terminal else -1.0
                g += disc * r
                total += r
                disc *= gamma
                if terminal:
                    break
                if t >= max_steps:
                    truncated = True
                    break
            gk = discount_pow(gamma, k)
            if terminal:
                delta = sarsa_update(w, e, o, active, g, True, o, active, gk, lam, step_alpha, replacing)
                if not np.isfinite(delta):
                    return -1
                break
            ab.observe(state, obs)
            tile_indices(obs, low, high, n_tilings, n_tiles, active2)
            option_values(w, active2, q)
            o2 = epsilon_greedy(q, eps, agent_rng)
            delta = sarsa_update(w, e, o, active, g, False, o2, active2, gk, lam, step_alpha, replacing)
            if not np.isfinite(delta):
                return -1
            if truncated:
                break
            active, active2 = active2, active
            o = o2
        returns[ep] = total
    return 0


def _streams(seed):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    env_ss, agent_ss = ss.spawn(2)
    return np.random.default_rng(env_ss), np.random.default_rng(agent_ss)


def sarsa_acrobot_run(
    config: SarsaConfig,
    seed=None,
    coder: TileCoder | None = None,
    substeps: int = 4,
    max_steps: int = ab.MAX_EPISODE_STEPS,
    fast: bool = True,
) -> tuple[SarsaLambda, np.ndarray]:
    """Sarsa_d(lambda) on Acrobot; returns the learner and per-episode returns.

    ``fast=False`` runs the generic Python loop on the :class:`Acrobot`
    environment, which consumes the random streams identically.
    """
    coder = coder or acrobot_tile_coder()
    env_rng, agent_rng = _streams(seed)
    agent = SarsaLambda.fixed_repeat(coder.size, 3, config, agent_rng)
    returns = np.empty(config.episodes)
    if fast:
        if not config.normalize_alpha:
            raise ValueError("compiled Acrobot kernel always normalizes alpha")
        status = _sarsa_acrobot(
            agent.w, env_rng, agent_rng, config.d, config.gamma, config.lam, config.alpha,
            config.epsilon, config.epsilon_decay, config.episodes, 0, max_steps, substeps,
            coder.low, coder.high, coder.n_tilings, coder.n_tiles, config.replacing, returns,
        )
        if status != 0:
            raise DivergenceError("non-finite TD error in Acrobot Sarsa run")
        agent.episodes_done = config.episodes
    else:
        env = ab.Acrobot(seed=None, substeps=substeps, max_steps=max_steps)
        env.rng = env_rng
        for ep in range(config.episodes):
            returns[ep] = agent.run_episode(env, coder)
    return agent, returns


def sarsa_lambda_run(env: Environment, features, config: SarsaConfig, seed=None):
    """Generic Sarsa_d(lambda) on any environment with a feature function.

    ``features(obs)`` returns active binary-feature indices and must carry a
    ``size`` attribute. The environment's random stream is replaced by one
    derived from ``seed``.
    """
    env_rng, agent_rng = _streams(seed)
    env.rng = env_rng
    agent = SarsaLambda.fixed_repeat(features.size, env.n_actions, config, agent_rng)
    returns = np.array([agent.run_episode(env, features) for _ in range(config.episodes)])
    return agent, returns


def figar_sarsa_run(env: Environment, features, d_set, config: SarsaConfig, seed=None):
    """FiGAR-Sarsa: every (action, repeat) pair has its own independent values."""
    env_rng, agent_rng = _streams(seed)
    env.rng = env_rng
    options = [(a, k) for a in range(env.n_actions) for k in d_set]
    agent = SarsaLambda(features.size, options, config, agent_rng)
    returns = np.array([agent.run_episode(env, features) for _ in range(config.episodes)])
    return agent, returns
