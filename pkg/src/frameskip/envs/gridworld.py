"""Pitted grid world: noisy four-way moves, -1 per step, extra penalty in pits."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..tabular import TabularMDP, price_of_inertia, value_iteration
from .core import Environment, StepOutcome

UP, DOWN, LEFT, RIGHT = range(4)
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
ACTION_NAMES = ("up", "down", "left", "right")

Cell = tuple[int, int]


@dataclass(frozen=True)
class GridWorldSpec:
    """Cells are ``(row, col)`` with row 0 at the top."""

    width: int
    height: int
    walls: frozenset = frozenset()
    pits: frozenset = frozenset()
    goals: frozenset = frozenset()
    start_cells: tuple = ()
    pit_penalty: float = 0.0
    step_reward: float = -1.0
    action_retention: float = 0.85
    # True: the replacement action is drawn from all four (it may be the
    # chosen one again); False: from the other three only.
    redraw_includes_chosen: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "walls", frozenset(map(tuple, self.walls)))
        object.__setattr__(self, "pits", frozenset(map(tuple, self.pits)))
        object.__setattr__(self, "goals", frozenset(map(tuple, self.goals)))
        object.__setattr__(self, "start_cells", tuple(sorted(map(tuple, self.start_cells))))
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        if not self.goals:
            raise ValueError("at least one goal cell is required")
        if not self.start_cells:
            raise ValueError("at least one start cell is required")
        if self.pit_penalty > 0:
            raise ValueError("pit_penalty must be <= 0")
        if not 0.0 <= self.action_retention <= 1.0:
            raise ValueError("action_retention must be a probability")
        for name, cells in (("pit", self.pits), ("goal", self.goals), ("start", self.start_cells)):
            for c in cells:
                if not self.in_bounds(c):
                    raise ValueError(f"{name} cell {c} out of bounds")
                if c in self.walls:
                    raise ValueError(f"{name} cell {c} is a wall")
        if set(self.start_cells) & self.goals:
            raise ValueError("start cells cannot be goals")

    def in_bounds(self, c: Cell) -> bool:
        return 0 <= c[0] < self.height and 0 <= c[1] < self.width

    def with_penalty(self, pit_penalty: float) -> "GridWorldSpec":
        return replace(self, pit_penalty=pit_penalty)

    @property
    def cells(self) -> list[Cell]:
        """Non-wall cells in row-major order; their position is the state index."""
        return [
            (r, c) for r in range(self.height) for c in range(self.width) if (r, c) not in self.walls
        ]

    def action_noise(self) -> np.ndarray:
        """``P[chosen, executed]``."""
        keep = self.action_retention
        if self.redraw_includes_chosen:
            p = np.full((4, 4), (1.0 - keep) / 4.0)
            p[np.diag_indices(4)] += keep
        else:
            p = np.full((4, 4), (1.0 - keep) / 3.0)
            p[np.diag_indices(4)] = keep
        return p

    def successor_table(self) -> np.ndarray:
        """``next[s, executed_action]`` with wall/edge blocking."""
        cells = self.cells
        index = {c: i for i, c in enumerate(cells)}
        nxt = np.empty((len(cells), 4), dtype=np.int64)
        for i, (r, c) in enumerate(cells):
            for a, (dr, dc) in enumerate(MOVES):
                tgt = (r + dr, c + dc)
                nxt[i, a] = index[tgt] if self.in_bounds(tgt) and tgt not in self.walls else i
        return nxt

    def landing_rewards(self) -> np.ndarray:
        """Reward for a transition that lands in each state."""
        return np.array(
            [self.step_reward + (self.pit_penalty if c in self.pits else 0.0) for c in self.cells]
        )

    def state_of(self, cell: Cell) -> int:
        return self.cells.index(tuple(cell))


def gridworld_to_tabular(spec: GridWorldSpec) -> TabularMDP:
    """Exact undiscounted episodic MDP matching :class:`GridWorld` dynamics."""
    cells = spec.cells
    n = len(cells)
    nxt = spec.successor_table()
    land = spec.landing_rewards()
    noise = spec.action_noise()
    goal_idx = [spec.state_of(g) for g in spec.goals]
    rewards = np.zeros((n, 4))
    trans = np.zeros((4, n, n))
    for s in range(n):
        if s in goal_idx:
            trans[:, s, s] = 1.0
            continue
        for a in range(4):
            for b in range(4):
                p = noise[a, b]
                if p == 0.0:
                    continue
                trans[a, s, nxt[s, b]] += p
                rewards[s, a] += p * land[nxt[s, b]]
    r_max = abs(spec.step_reward) + abs(spec.pit_penalty)
    mdp = TabularMDP(rewards, trans, 1.0, r_max=r_max, terminal_states=frozenset(goal_idx))
    _warn_unreachable(spec, mdp)
    return mdp


def _warn_unreachable(spec: GridWorldSpec, mdp: TabularMDP) -> None:
    reach = np.zeros(mdp.n_states, dtype=bool)
    reach[list(mdp.terminal_states)] = True
    uniform = mdp.transitions.mean(axis=0)
    for _ in range(mdp.n_states):
        grown = reach | (uniform[:, reach].sum(axis=1) > 0)
        if np.array_equal(grown, reach):
            break
        reach = grown
    if not reach.all():
        cells = [spec.cells[i] for i in np.flatnonzero(~reach)]
        warnings.warn(f"goal unreachable under the uniform policy from {cells}", stacklevel=3)


class GridWorld(Environment):
    """Simulator for a :class:`GridWorldSpec`; observations are state indices."""

    n_actions = 4

    def __init__(self, spec: GridWorldSpec, seed=None, max_steps: int | None = None):
        super().__init__(seed)
        self.spec = spec
        self.r_max = abs(spec.step_reward) + abs(spec.pit_penalty)
        self.next_state = spec.successor_table()
        self.land = spec.landing_rewards()
        self.n_states = len(self.next_state)
        self.goal = np.zeros(self.n_states, dtype=bool)
        self.goal[[spec.state_of(g) for g in spec.goals]] = True
        self.starts = np.array([spec.state_of(c) for c in spec.start_cells])
        self.keep = spec.action_retention
        self.include_chosen = spec.redraw_includes_chosen
        self.max_steps = max_steps
        self.state = int(self.starts[0])
        self.t = 0

    def reset(self) -> int:
        self.state = int(self.starts[int(self.rng.random() * len(self.starts))])
        self.done = False
        self.t = 0
        return self.state

    def executed_action(self, action: int, u: float) -> int:
        """Map a chosen action and a uniform draw to the executed action."""
        if u < self.keep:
            return action
        v = (u - self.keep) / (1.0 - self.keep)
        if self.include_chosen:
            return min(int(v * 4), 3)
        other = min(int(v * 3), 2)
        return other if other < action else other + 1

    def step(self, action: int) -> StepOutcome:
        self._guard(action)
        b = self.executed_action(action, self.rng.random())
        s2 = int(self.next_state[self.state, b])
        self.state = s2
        self.t += 1
        self.done = bool(self.goal[s2]) or (self.max_steps is not None and self.t >= self.max_steps)
        return StepOutcome(float(self.land[s2]), s2, bool(self.goal[s2]))


# ---------------------------------------------------------------------------
# calibration


class CalibrationError(RuntimeError):
    pass


def inertia_at(spec: GridWorldSpec, pit_penalty: float) -> float:
    m = gridworld_to_tabular(spec.with_penalty(pit_penalty))
    return price_of_inertia(m, value_iteration(m, tol=1e-10)).delta


def calibrate_pit_penalty(
    spec: GridWorldSpec,
    target_delta: float,
    tol: float = 1e-3,
    bracket: tuple[float, float] = (0.0, -1000.0),
    max_iter: int = 200,
) -> float:
    """Bisection on the pit penalty until the price of inertia hits the target."""
    lo, hi = bracket
    d_lo, d_hi = inertia_at(spec, lo), inertia_at(spec, hi)
    if abs(d_lo - target_delta) <= tol:
        return lo
    if not d_lo <= target_delta <= d_hi:
        raise CalibrationError(
            f"target {target_delta} outside bracket: delta({lo})={d_lo:.4f}, delta({hi})={d_hi:.4f}"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        d_mid = inertia_at(spec, mid)
        if abs(d_mid - target_delta) <= tol:
            return mid
        if d_mid < target_delta:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"bisection did not reach tolerance {tol}")


# ---------------------------------------------------------------------------
# text maps
#
#   key = value                 header lines (pit_penalty, action_retention, ...)
#   #  wall   .  floor   P  pit   G  goal   S  start

_HEADER_TYPES = {
    "pit_penalty": float,
    "step_reward": float,
    "action_retention": float,
    "redraw_includes_chosen": lambda s: s.strip().lower() in ("1", "true", "yes"),
}


def parse_map(text: str) -> GridWorldSpec:
    header: dict = {}
    rows: list[str] = []
    for raw in text.splitlines():
        line = raw.rstrip()
        if not line:
            continue
        if "=" in line and not rows:
            key, val = (x.strip() for x in line.split("=", 1))
            if key not in _HEADER_TYPES:
                raise ValueError(f"unknown map header key {key!r}")
            header[key] = _HEADER_TYPES[key](val)
            continue
        if set(line) - set("#.PGS"):
            raise ValueError(f"bad map row {line!r}")
        rows.append(line)
    if not rows:
        raise ValueError("map has no rows")
    width = max(len(r) for r in rows)
    cells: dict[str, list] = {"#": [], "P": [], "G": [], "S": []}
    for i, row in enumerate(rows):
        for j, ch in enumerate(row.ljust(width, "#")):
            if ch in cells:
                cells[ch].append((i, j))
    return GridWorldSpec(
        width=width,
        height=len(rows),
        walls=frozenset(cells["#"]),
        pits=frozenset(cells["P"]),
        goals=frozenset(cells["G"]),
        start_cells=tuple(cells["S"]),
        **header,
    )


def format_map(spec: GridWorldSpec) -> str:
    lines = [f"{k} = {getattr(spec, k)!r}" for k in _HEADER_TYPES]
    for r in range(spec.height):
        row = []
        for c in range(spec.width):
            cell = (r, c)
            if cell in spec.walls:
                row.append("#")
            elif cell in spec.pits:
                row.append("P")
            elif cell in spec.goals:
                row.append("G")
            elif cell in spec.start_cells:
                row.append("S")
            else:
                row.append(".")
        lines.append("".join(row))
    return "\n".join(lines) + "\n"


def load_map(path) -> GridWorldSpec:
    return parse_map(Path(path).read_text())


# A long three-lane corridor: starts down the left edge, goal at the far
# right, a short pit stretch in the middle lane. Long straight runs are what
# make neighbour aliasing costly for single-step control.
CANONICAL_MAP = """\
S...............
S.....PP........
S..............G
"""

# Pit penalties putting the canonical layout's price of inertia at each
# target (bisection to 1e-4, rounded to 4 decimals).
CANONICAL_PENALTIES = {2.13: -0.0852, 10.12: -9.527, 55.26: -64.1482}


def canonical_spec(pit_penalty: float = 0.0, **kw) -> GridWorldSpec:
    spec = parse_map(CANONICAL_MAP)
    return replace(spec, pit_penalty=pit_penalty, **kw)


def calibrated_spec(target_delta: float, **kw) -> GridWorldSpec:
    """Canonical layout at a stored calibration (see :data:`CANONICAL_PENALTIES`)."""
    return canonical_spec(CANONICAL_PENALTIES[target_delta], **kw)


def policy_arrows(spec: GridWorldSpec, policy) -> str:
    glyph = "^v<>"
    out = []
    cells = {c: i for i, c in enumerate(spec.cells)}
    for r in range(spec.height):
        row = ""
        for c in range(spec.width):
            cell = (r, c)
            if cell in spec.walls:
                row += "#"
            elif cell in spec.goals:
                row += "G"
            else:
                row += glyph[int(policy[cells[cell]])]
        out.append(row)
    return "\n".join(out)
