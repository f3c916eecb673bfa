"""One-dimensional tile coding: each input feature gets its own tilings."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np


@numba.njit(cache=True)
def tile_indices(obs, low, high, n_tilings, n_tiles, out):
    """Fill ``out`` with the active tile of every (feature, tiling) pair.

    Tiling ``t`` is shifted by ``t / n_tilings`` of a tile width, so each
    tiling needs ``n_tiles + 1`` tiles to cover the range.
    """
    per_tiling = n_tiles + 1
    k = 0
    for f in range(obs.shape[0]):
        span = high[f] - low[f]
        scaled = (obs[f] - low[f]) / span * n_tiles
        if scaled < 0.0:
            scaled = 0.0
        elif scaled > n_tiles:
            scaled = float(n_tiles)
        for t in range(n_tilings):
            idx = int(np.floor(scaled + t / n_tilings))
            if idx > n_tiles:
                idx = n_tiles
            out[k] = (f * n_tilings + t) * per_tiling + idx
            k += 1


@dataclass(frozen=True)
class TileCoder:
    low: np.ndarray
    high: np.ndarray
    n_tilings: int = 8
    n_tiles: int = 8

    def __post_init__(self):
        object.__setattr__(self, "low", np.asarray(self.low, dtype=float))
        object.__setattr__(self, "high", np.asarray(self.high, dtype=float))
        if np.any(self.high <= self.low):
            raise ValueError("each feature range needs high > low")

    @property
    def n_inputs(self) -> int:
        return self.low.size

    @property
    def n_active(self) -> int:
        return self.n_inputs * self.n_tilings

    @property
    def size(self) -> int:
        return self.n_inputs * self.n_tilings * (self.n_tiles + 1)

    def __call__(self, obs) -> np.ndarray:
        out = np.empty(self.n_active, dtype=np.int64)
        tile_indices(np.asarray(obs, dtype=float), self.low, self.high, self.n_tilings, self.n_tiles, out)
        return out

    def dense(self, obs) -> np.ndarray:
        v = np.zeros(self.size)
        v[self(obs)] = 1.0
        return v
