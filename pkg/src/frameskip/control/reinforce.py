"""REINFORCE with action repetition and a linear softmax policy.

A decision is taken every ``d`` steps; the chosen action is held for those
steps and the accrued discounted reward is the decision's reward. The episode
gradient is ``sum_i score_i * (ret_i - b)`` where ``ret_i`` is the discounted
return from decision ``i`` and ``b`` a running baseline. Episodes report the
two sums ``sum_i score_i * ret_i`` and ``sum_i score_i`` separately so that
any baseline can be applied afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .._jit import discount_pow
from ..envs import acrobot as ab
from ..envs.core import Environment, skip_step


class GradientError(FloatingPointError):
    pass


@numba.njit(cache=True)
def softmax_probs(w, x, out):
    """Action probabilities for features ``x``; the last weight row is the bias."""
    n_in = x.shape[0]
    n_act = w.shape[1]
    top = -np.inf
    for a in range(n_act):
        z = w[n_in, a]
        for i in range(n_in):
            z += x[i] * w[i, a]
        out[a] = z
        if z > top:
            top = z
    total = 0.0
    for a in range(n_act):
        out[a] = np.exp(out[a] - top)
        total += out[a]
    for a in range(n_act):
        out[a] /= total


@numba.njit(cache=True)
def sample_action(p, u):
    acc = 0.0
    for a in range(p.shape[0] - 1):
        acc += p[a]
        if u < acc:
            return a
    return p.shape[0] - 1


@numba.njit(cache=True)
def add_score(grad, x, p, a, coef):
    """``grad += coef * d/dw log pi(a | x)``."""
    n_in = x.shape[0]
    for b in range(p.shape[0]):
        g = ((1.0 if b == a else 0.0) - p[b]) * coef
        for i in range(n_in):
            grad[i, b] += x[i] * g
        grad[n_in, b] += g


@numba.njit(cache=True)
def accumulate_episode(xs, probs, actions, rewards, steps, n, gamma, weight_by_discount, s1, s0):
    """Fill ``s1 = sum score*ret`` and ``s0 = sum score``; returns ``ret_0``.

    ``rewards[i]`` is the discounted reward of decision ``i`` and ``steps[i]``
    the number of time steps it lasted.
    """
    s1[:, :] = 0.0
    s0[:, :] = 0.0
    ret = 0.0
    rets = np.empty(n)
    for i in range(n - 1, -1, -1):
        ret = rewards[i] + discount_pow(gamma, steps[i]) * ret
        rets[i] = ret
    elapsed = 0
    for i in range(n):
        c = discount_pow(gamma, elapsed) if weight_by_discount else 1.0
        add_score(s1, xs[i], probs[i], actions[i], c * rets[i])
        add_score(s0, xs[i], probs[i], actions[i], c)
        elapsed += steps[i]
    return ret


@dataclass
class ReinforceConfig:
    d: int = 1
    gamma: float = 0.99
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    episodes: int = 5000
    baseline: bool = True
    baseline_decay: float = 0.99
    weight_by_discount: bool = False  # multiply decision i's score by gamma^t_i


class Adam:
    """Adaptive moment step for gradient ascent."""

    def __init__(self, shape, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        params += self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SoftmaxLinearPolicy:
    """``pi(a | x) ∝ exp([x, 1] . w[:, a])``."""

    def __init__(self, n_features: int, n_actions: int, w=None):
        self.w = np.zeros((n_features + 1, n_actions)) if w is None else np.array(w, dtype=float)
        if self.w.shape != (n_features + 1, n_actions):
            raise ValueError(f"weights must have shape {(n_features + 1, n_actions)}")
        self._p = np.empty(n_actions)

    @property
    def n_features(self) -> int:
        return self.w.shape[0] - 1

    @property
    def n_actions(self) -> int:
        return self.w.shape[1]

    def probs(self, x) -> np.ndarray:
        softmax_probs(self.w, np.asarray(x, dtype=float), self._p)
        return self._p.copy()

    def score(self, x, a: int) -> np.ndarray:
        """Gradient of ``log pi(a | x)`` with respect to the weights."""
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(self.w)
        add_score(g, x, self.probs(x), a, 1.0)
        return g

    def log_prob(self, x, a: int) -> float:
        return float(np.log(self.probs(x)[a]))


@dataclass
class EpisodeSums:
    s1: np.ndarray
    s0: np.ndarray
    discounted: float  # discounted return from the start
    total: float  # undiscounted return
    steps: int

    def gradient(self, baseline: float = 0.0) -> np.ndarray:
        return self.s1 - baseline * self.s0


def play_episode(policy, env: Environment, d: int, gamma: float, rng, weight_by_discount=False, max_decisions=100_000):
    """One episode on a generic environment with feature observations."""
    x = np.asarray(env.reset(), dtype=float)
    xs, ps, acts, rews, steps = [], [], [], [], []
    total = 0.0
    for _ in range(max_decisions):
        p = policy.probs(x)
        a = int(sample_action(p, rng.random()))
        res = skip_step(env, a, d, gamma)
        xs.append(x)
        ps.append(p)
        acts.append(a)
        rews.append(res.return_d)
        steps.append(res.steps_taken)
        total += res.reward_sum
        if res.terminal or res.truncated:
            break
        x = np.asarray(res.next, dtype=float)
    return _sums(policy, xs, ps, acts, rews, steps, gamma, weight_by_discount, total)


def _sums(policy, xs, ps, acts, rews, steps, gamma, weight_by_discount, total):
    s1 = np.zeros_like(policy.w)
    s0 = np.zeros_like(policy.w)
    ret0 = accumulate_episode(
        np.array(xs, dtype=float), np.array(ps), np.array(acts, dtype=np.int64),
        np.array(rews, dtype=float), np.array(steps, dtype=np.int64), len(acts), gamma,
        weight_by_discount, s1, s0,
    )
    return EpisodeSums(s1, s0, float(ret0), float(total), int(sum(steps)))


# ---------------------------------------------------------------------------
# Acrobot


@numba.njit(cache=True)
def _acrobot_episode(w, env_rng, agent_rng, d, gamma, substeps, max_steps, weight_by_discount, s1, s0):
    n_act = w.shape[1]
    xs = np.empty((max_steps, ab.N_FEATURES))
    probs = np.empty((max_steps, n_act))
    actions = np.empty(max_steps, dtype=np.int64)
    rewards = np.empty(max_steps)
    steps = np.empty(max_steps, dtype=np.int64)
    state = ab.reset_state(env_rng)
    obs = np.empty(ab.N_FEATURES)
    ab.observe(state, obs)
    t = 0
    n = 0
    total = 0.0
    while True:
        xs[n] = obs
        softmax_probs(w, obs, probs[n])
        a = sample_action(probs[n], agent_rng.random())
        actions[n] = a
        torque = ab.TORQUES[a]
        g = 0.0
        disc = 1.0
        k = 0
        done = False
        for _ in range(d):
            state = ab.integrate(state, torque, substeps)
            t += 1
            k += 1
            terminal = ab.is_terminal(state)
            r = 0.0 if terminal else -1.0
            g += disc * r
            total += r
            disc *= gamma
            if terminal or t >= max_steps:
                done = True
                break
        rewards[n] = g
        steps[n] = k
        n += 1
        if done:
            break
        ab.observe(state, obs)
    ret0 = accumulate_episode(xs, probs, actions, rewards, steps, n, gamma, weight_by_discount, s1, s0)
    return ret0, total, t


def _streams(seed):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    env_ss, agent_ss = ss.spawn(2)
    return np.random.default_rng(env_ss), np.random.default_rng(agent_ss)


class AcrobotEpisodes:
    """Episode source on Acrobot; ``fast`` selects the compiled loop."""

    def __init__(self, seed=None, substeps=4, max_steps=ab.MAX_EPISODE_STEPS, fast=True):
        self.env_rng, self.agent_rng = _streams(seed)
        self.substeps, self.max_steps, self.fast = substeps, max_steps, fast
        self.env = ab.Acrobot(substeps=substeps, max_steps=max_steps)
        self.env.rng = self.env_rng

    def __call__(self, policy, d, gamma, weight_by_discount=False) -> EpisodeSums:
        if not self.fast:
            return play_episode(policy, self.env, d, gamma, self.agent_rng, weight_by_discount)
        s1 = np.zeros_like(policy.w)
        s0 = np.zeros_like(policy.w)
        ret0, total, t = _acrobot_episode(
            policy.w, self.env_rng, self.agent_rng, d, gamma, self.substeps, self.max_steps,
            weight_by_discount, s1, s0,
        )
        return EpisodeSums(s1, s0, float(ret0), float(total), int(t))


class GenericEpisodes:
    """Episode source for any environment with vector observations."""

    def __init__(self, env: Environment, seed=None):
        env_rng, self.agent_rng = _streams(seed)
        self.env = env
        env.rng = env_rng

    def __call__(self, policy, d, gamma, weight_by_discount=False) -> EpisodeSums:
        return play_episode(policy, self.env, d, gamma, self.agent_rng, weight_by_discount)


class Reinforce:
    """Policy, optimizer and baseline; :meth:`learn` applies one episode."""

    def __init__(self, policy: SoftmaxLinearPolicy, config: ReinforceConfig):
        self.policy = policy
        self.config = config
        self.adam = Adam(policy.w.shape, config.lr, config.beta1, config.beta2, config.adam_eps)
        self.baseline: float | None = None

    def baseline_value(self) -> float:
        return 0.0 if (not self.config.baseline or self.baseline is None) else self.baseline

    def learn(self, ep: EpisodeSums) -> np.ndarray:
        cfg = self.config
        if cfg.baseline:
            if self.baseline is None:
                self.baseline = ep.discounted
            else:
                self.baseline = cfg.baseline_decay * self.baseline + (1.0 - cfg.baseline_decay) * ep.discounted
        grad = ep.gradient(self.baseline_value())
        if not np.all(np.isfinite(grad)):
            raise GradientError(f"non-finite policy gradient after {self.adam.t} updates (return {ep.total})")
        self.adam.step(self.policy.w, grad)
        return grad


def reinforce_run(episodes_source, n_features, n_actions, config: ReinforceConfig):
    """Train for ``config.episodes``; returns the learner and undiscounted returns."""
    agent = Reinforce(SoftmaxLinearPolicy(n_features, n_actions), config)
    returns = np.empty(config.episodes)
    for i in range(config.episodes):
        ep = episodes_source(agent.policy, config.d, config.gamma, config.weight_by_discount)
        agent.learn(ep)
        returns[i] = ep.total
    return agent, returns


def reinforce_acrobot_run(config: ReinforceConfig, seed=None, fast=True, substeps=4):
    source = AcrobotEpisodes(seed, substeps=substeps, fast=fast)
    return reinforce_run(source, ab.N_FEATURES, 3, config)


def gradient_samples(agent: Reinforce, episodes_source, n_samples: int = 100) -> np.ndarray:
    """Per-episode sample gradients under the frozen policy and baseline."""
    cfg = agent.config
    b = agent.baseline_value()
    out = np.empty((n_samples, agent.policy.w.size))
    for i in range(n_samples):
        ep = episodes_source(agent.policy, cfg.d, cfg.gamma, cfg.weight_by_discount)
        out[i] = ep.gradient(b).ravel()
    return out


def gradient_variance_probe(agent: Reinforce, episodes_source, n_samples: int = 100) -> float:
    """Trace of the sample covariance of per-episode gradients."""
    g = gradient_samples(agent, episodes_source, n_samples)
    if n_samples < 2:
        return 0.0
    return float(g.var(axis=0, ddof=1).sum())
