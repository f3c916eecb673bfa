"""Continuing random-walk chain with a single scalar feature per state."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tabular import TabularMRP, check_ergodic, evaluate_mrp

PROFILES = {
    "linear": lambda x: x,
    "quadratic": lambda x: x**2,
    "cubic": lambda x: x**3,
    "step": lambda x: (x > 0.5).astype(float),
}


@dataclass(frozen=True)
class ChainTask:
    """An MRP with its feature matrix ``phi[s, k]``."""

    mrp: TabularMRP
    phi: np.ndarray

    @property
    def n_features(self) -> int:
        return self.phi.shape[1]


def chain_position(n_states: int) -> np.ndarray:
    return (np.arange(n_states) + 1.0) / n_states


def chain_mrp(
    n_states: int = 19,
    gamma: float = 0.95,
    reward_profile="quadratic",
    noise: float = 0.0,
    realizable: bool = False,
) -> ChainTask:
    """Reflecting random walk: left or right with equal probability.

    ``noise`` is the probability of staying put on a step. Rewards are
    ``profile(x)`` at position ``x = (s+1)/n``; ``reward_profile`` is a name
    in :data:`PROFILES`, a callable, or an explicit reward vector. The single
    feature is ``x`` itself, unless ``realizable`` is set, in which case it is
    the exact value function (so a weight of 1 is exact).
    """
    if n_states < 2:
        raise ValueError("chain needs at least 2 states")
    if not 0.0 <= noise < 1.0:
        raise ValueError("noise must lie in [0, 1)")
    x = chain_position(n_states)
    if isinstance(reward_profile, str):
        rewards = PROFILES[reward_profile](x)
    elif callable(reward_profile):
        rewards = np.asarray(reward_profile(x), dtype=float)
    else:
        rewards = np.asarray(reward_profile, dtype=float)
    move = (1.0 - noise) / 2.0
    t = np.zeros((n_states, n_states))
    for s in range(n_states):
        t[s, s] += noise
        t[s, max(s - 1, 0)] += move
        t[s, min(s + 1, n_states - 1)] += move
    mrp = TabularMRP(rewards, t, gamma)
    report = check_ergodic(mrp)
    if not report:
        raise ValueError(f"chain is not ergodic: {report.reason}")
    phi = evaluate_mrp(mrp) if realizable else x
    return ChainTask(mrp, np.asarray(phi, dtype=float).reshape(n_states, 1))


def canonical_chain(realizable: bool = False) -> ChainTask:
    return chain_mrp(19, 0.95, "quadratic", 0.0, realizable)
