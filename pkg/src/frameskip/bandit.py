"""EXP3.1 over frame-skip values, with one persistent learner per arm.

Each meta episode samples an arm, plays one full episode with that arm's
own learner at its fixed ``d``, maps the episode return affinely into
``[0, 1]`` and feeds it back to the bandit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .control.qlearning import LearningCurve
from .control.reinforce import sample_action
from .control.sarsa import SarsaConfig, SarsaLambda
from .envs.core import Environment


@dataclass
class Exp3State:
    """Log-weights, epoch counter and gain estimates for ``n_arms`` arms.

    With ``fixed_gamma`` set the state runs plain EXP3 with that exploration
    rate and never restarts. Otherwise it follows EXP3.1: epoch ``r`` uses the
    gain guess ``g_r = (K ln K / (e - 1)) 4^r`` and exploration
    ``gamma_r = min(1, sqrt(K ln K / ((e - 1) g_r)))``, and ends as soon as
    some arm's estimated cumulative gain exceeds ``g_r - K / gamma_r``.
    """

    n_arms: int
    fixed_gamma: float | None = None
    log_weights: np.ndarray = None
    gains: np.ndarray = None  # estimated cumulative gains over the whole game
    epoch: int = 0
    restarts: int = 0

    def __post_init__(self):
        if self.n_arms < 1:
            raise ValueError("need at least one arm")
        if self.fixed_gamma is not None and not 0.0 < self.fixed_gamma <= 1.0:
            raise ValueError("fixed_gamma must lie in (0, 1]")
        if self.log_weights is None:
            self.log_weights = np.zeros(self.n_arms)
        if self.gains is None:
            self.gains = np.zeros(self.n_arms)
        self._advance()

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_weights.max())

    @property
    def gain_guess(self) -> float:
        k = self.n_arms
        return k * math.log(k) / (math.e - 1.0) * 4.0**self.epoch

    @property
    def gamma(self) -> float:
        if self.fixed_gamma is not None:
            return self.fixed_gamma
        if self.n_arms == 1:
            return 1.0
        k = self.n_arms
        return min(1.0, math.sqrt(k * math.log(k) / ((math.e - 1.0) * self.gain_guess)))

    @property
    def threshold(self) -> float:
        return self.gain_guess - self.n_arms / self.gamma

    def probs(self) -> np.ndarray:
        w = self.weights
        g = self.gamma
        return (1.0 - g) * w / w.sum() + g / self.n_arms

    def _advance(self) -> None:
        if self.fixed_gamma is not None or self.n_arms == 1:
            return
        while self.gains.max() > self.threshold:
            self.epoch += 1
            self.restarts += 1
            self.log_weights[:] = 0.0


def exp3_sample(state: Exp3State, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    p = state.probs()
    return int(sample_action(p, rng.random())), p


def exp3_update(state: Exp3State, arm: int, reward: float, p: np.ndarray | None = None) -> Exp3State:
    """Importance-weighted exponential update of the pulled arm, in place."""
    if not 0.0 <= reward <= 1.0:
        raise ValueError(f"reward {reward} outside [0, 1]")
    if not 0 <= arm < state.n_arms:
        raise ValueError(f"invalid arm {arm}")
    p = state.probs() if p is None else p
    x_hat = reward / p[arm]
    state.gains[arm] += x_hat
    state.log_weights[arm] += state.gamma * x_hat / state.n_arms
    state._advance()
    return state


def normalize_return(value: float, lo: float, hi: float) -> tuple[float, bool]:
    """Affine map of ``[lo, hi]`` onto ``[0, 1]``; returns (value, clamped)."""
    if not hi > lo:
        raise ValueError("reward range must have hi > lo")
    x = (value - lo) / (hi - lo)
    if x < 0.0 or x > 1.0:
        return min(max(x, 0.0), 1.0), True
    return x, False


@dataclass
class ArmLearner:
    """A fixed-``d`` Sarsa learner whose state persists across its pulls."""

    d: int
    learner: SarsaLambda
    pulls: int = 0

    def play(self, env, features) -> float:
        self.pulls += 1
        return self.learner.run_episode(env, features)

    def fingerprint(self) -> int:
        return self.learner.fingerprint()


@dataclass
class MetaResult:
    arms: np.ndarray  # d value of each arm
    chosen: np.ndarray  # arm index per episode
    raw: np.ndarray
    normalized: np.ndarray
    probs: np.ndarray  # (episodes, K) sampling distribution
    clamped: int
    curve: LearningCurve = field(default_factory=LearningCurve)

    @property
    def histogram(self) -> np.ndarray:
        return np.bincount(self.chosen, minlength=len(self.arms))

    def share(self, arm: int) -> float:
        return float(self.histogram[arm] / len(self.chosen))


def moving_average(x, window: int = 500) -> np.ndarray:
    """Trailing means over ``window`` values; shorter at the start."""
    x = np.asarray(x, dtype=float)
    c = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def meta_run(
    env: Environment,
    features,
    d_arms,
    episodes: int,
    config: SarsaConfig,
    reward_range: tuple[float, float],
    seed=None,
    window: int = 500,
    fixed_gamma: float | None = None,
) -> MetaResult:
    """EXP3.1 choosing ``d`` per episode among ``d_arms``.

    Random streams: the environment, the bandit and each arm's learner get
    independent children of ``seed``.
    """
    d_arms = [int(d) for d in d_arms]
    if not d_arms:
        raise ValueError("need at least one arm")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    env_ss, bandit_ss, *arm_ss = ss.spawn(2 + len(d_arms))
    env.rng = np.random.default_rng(env_ss)
    rng = np.random.default_rng(bandit_ss)
    arms = []
    for d, s in zip(d_arms, arm_ss):
        cfg = SarsaConfig(**{**config.__dict__, "d": d})
        arms.append(ArmLearner(d, SarsaLambda.fixed_repeat(features.size, env.n_actions, cfg, np.random.default_rng(s))))
    state = Exp3State(len(arms), fixed_gamma=fixed_gamma)
    lo, hi = reward_range
    chosen = np.empty(episodes, dtype=np.int64)
    raw = np.empty(episodes)
    normed = np.empty(episodes)
    probs = np.empty((episodes, len(arms)))
    clamped = 0
    for ep in range(episodes):
        arm, p = exp3_sample(state, rng)
        ret = arms[arm].play(env, features)
        x, was_clamped = normalize_return(ret, lo, hi)
        clamped += was_clamped
        exp3_update(state, arm, x, p)
        chosen[ep], raw[ep], normed[ep], probs[ep] = arm, ret, x, p
    if clamped:
        warnings.warn(f"{clamped} episode returns fell outside {reward_range} and were clamped", stacklevel=2)
    curve = LearningCurve()
    ma = moving_average(raw, window)
    for ep in range(window - 1, episodes, window):
        curve.episodes.append(ep + 1)
        curve.mean.append(float(ma[ep]))
        curve.stderr.append(0.0)
    return MetaResult(np.array(d_arms), chosen, raw, normed, probs, clamped, curve)


def bernoulli_bandit_run(means, pulls: int, seed=None, fixed_gamma: float | None = None) -> MetaResult:
    """EXP3.1 on arms paying 1 with probability ``means[k]`` and 0 otherwise."""
    means = np.asarray(means, dtype=float)
    if means.ndim != 1 or means.size < 1 or np.any((means < 0) | (means > 1)):
        raise ValueError("means must be a nonempty vector of probabilities")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    env_ss, bandit_ss = ss.spawn(2)
    env_rng, rng = np.random.default_rng(env_ss), np.random.default_rng(bandit_ss)
    state = Exp3State(means.size, fixed_gamma=fixed_gamma)
    chosen = np.empty(pulls, dtype=np.int64)
    raw = np.empty(pulls)
    probs = np.empty((pulls, means.size))
    for t in range(pulls):
        arm, p = exp3_sample(state, rng)
        x = float(env_rng.random() < means[arm])
        exp3_update(state, arm, x, p)
        chosen[t], raw[t], probs[t] = arm, x, p
    return MetaResult(np.arange(means.size), chosen, raw, raw.copy(), probs, 0)
