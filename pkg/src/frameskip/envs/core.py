from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from ..tabular import TabularMDP, TabularMRP


class EpisodeOver(RuntimeError):
    """Stepping an environment whose episode has already terminated."""


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    next: Any
    terminal: bool


@dataclass(frozen=True)
class SkipOutcome:
    return_d: float
    next: Any
    terminal: bool
    steps_taken: int
    truncated: bool = False
    reward_sum: float = 0.0  # undiscounted


class Environment:
    """Minimal episodic interface shared by every simulator here.

    Subclasses own their random stream, so a run is a deterministic function
    of the seed and the actions fed in.
    """

    n_actions: int
    r_max: float

    def __init__(self, seed=None):
        self.rng = np.random.default_rng(seed)
        self.done = True

    def reset(self):
        raise NotImplementedError

    def step(self, action: int) -> StepOutcome:
        raise NotImplementedError

    def _guard(self, action: int) -> None:
        if self.done:
            raise EpisodeOver("episode has terminated; call reset()")
        if not 0 <= action < self.n_actions:
            raise ValueError(f"invalid action {action}")


def skip_step(env: Environment, action: int, d: int, gamma: float) -> SkipOutcome:
    """Repeat ``action`` up to ``d`` times, accumulating the discounted return.

    Stops early if the episode terminates or the environment truncates it.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    g = 0.0
    total = 0.0
    disc = 1.0
    out = None
    for k in range(d):
        out = env.step(action)
        g += disc * out.reward
        total += out.reward
        disc *= gamma
        if out.terminal:
            return SkipOutcome(g, out.next, True, k + 1, False, total)
        if env.done:
            return SkipOutcome(g, out.next, False, k + 1, True, total)
    return SkipOutcome(g, out.next, False, d, False, total)


class TabularEnv(Environment):
    """Samples trajectories from a :class:`TabularMDP` (or an MRP, one action).

    Observations are state indices. ``start`` is a state index, a list of
    indices to draw uniformly from, or ``None`` for uniform over all states.
    """

    def __init__(self, model: TabularMDP | TabularMRP, start=None, seed=None):
        super().__init__(seed)
        if isinstance(model, TabularMRP):
            self.rewards = model.rewards[:, None]
            self.transitions = model.transitions[None]
        else:
            self.rewards = model.rewards
            self.transitions = model.transitions
        self.model = model
        self.n_states = self.rewards.shape[0]
        self.n_actions = self.rewards.shape[1]
        self.r_max = model.r_max
        self.gamma = model.gamma
        self.terminal = np.zeros(self.n_states, dtype=bool)
        self.terminal[list(model.terminal_states)] = True
        self._cdf = np.cumsum(self.transitions, axis=2)
        self._cdf[..., -1] = 1.0
        if start is None:
            self.starts = np.flatnonzero(~self.terminal)
        else:
            self.starts = np.atleast_1d(np.asarray(start, dtype=int))
        self.state = int(self.starts[0])

    def reset(self):
        self.state = int(self.starts[int(self.rng.random() * len(self.starts))])
        self.done = bool(self.terminal[self.state])
        return self.state

    def step(self, action: int = 0) -> StepOutcome:
        self._guard(action)
        s = self.state
        nxt = int(np.searchsorted(self._cdf[action, s], self.rng.random(), side="right"))
        self.state = nxt
        self.done = bool(self.terminal[nxt])
        return StepOutcome(float(self.rewards[s, action]), nxt, self.done)
