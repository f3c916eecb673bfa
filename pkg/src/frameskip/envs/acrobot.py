"""Two-link Acrobot with the classic-control "book" dynamics.

The integrator is compiled with numba so that the learning kernels in
``frameskip.control`` can step it without leaving native code.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .core import Environment, StepOutcome

LINK_LENGTH_1 = 1.0
LINK_MASS_1 = 1.0
LINK_MASS_2 = 1.0
LINK_COM_POS_1 = 0.5
LINK_COM_POS_2 = 0.5
LINK_MOI = 1.0
GRAVITY = 9.8
MAX_VEL_1 = 4.0 * math.pi
MAX_VEL_2 = 9.0 * math.pi
TORQUES = (-1.0, 0.0, 1.0)
DT = 0.2
N_FEATURES = 6
MAX_EPISODE_STEPS = 500


@numba.njit(cache=True)
def _derivs(th1, th2, dth1, dth2, torque):
    m1, m2 = LINK_MASS_1, LINK_MASS_2
    l1 = LINK_LENGTH_1
    lc1, lc2 = LINK_COM_POS_1, LINK_COM_POS_2
    i1 = i2 = LINK_MOI
    g = GRAVITY
    d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2.0 * l1 * lc2 * math.cos(th2)) + i1 + i2
    d2 = m2 * (lc2**2 + l1 * lc2 * math.cos(th2)) + i2
    phi2 = m2 * lc2 * g * math.cos(th1 + th2 - math.pi / 2.0)
    phi1 = (
        -m2 * l1 * lc2 * dth2**2 * math.sin(th2)
        - 2.0 * m2 * l1 * lc2 * dth2 * dth1 * math.sin(th2)
        + (m1 * lc1 + m2 * l1) * g * math.cos(th1 - math.pi / 2.0)
        + phi2
    )
    ddth2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dth1**2 * math.sin(th2) - phi2) / (
        m2 * lc2**2 + i2 - d2**2 / d1
    )
    ddth1 = -(d2 * ddth2 + phi1) / d1
    return dth1, dth2, ddth1, ddth2


@numba.njit(cache=True)
def _wrap(x):
    two_pi = 2.0 * math.pi
    while x > math.pi:
        x -= two_pi
    while x < -math.pi:
        x += two_pi
    return x


@numba.njit(cache=True)
def integrate(state, torque, substeps):
    """Advance ``state = (th1, th2, dth1, dth2)`` by one control interval.

    Classic fourth-order Runge-Kutta with ``substeps`` equal steps; angles
    are wrapped and velocities clipped afterwards. Returns a new array.
    """
    s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
    h = DT / substeps
    for _ in range(substeps):
        k1 = _derivs(s0, s1, s2, s3, torque)
        k2 = _derivs(s0 + 0.5 * h * k1[0], s1 + 0.5 * h * k1[1], s2 + 0.5 * h * k1[2], s3 + 0.5 * h * k1[3], torque)
        k3 = _derivs(s0 + 0.5 * h * k2[0], s1 + 0.5 * h * k2[1], s2 + 0.5 * h * k2[2], s3 + 0.5 * h * k2[3], torque)
        k4 = _derivs(s0 + h * k3[0], s1 + h * k3[1], s2 + h * k3[2], s3 + h * k3[3], torque)
        s0 += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        s1 += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        s2 += h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        s3 += h / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
    out = np.empty(4)
    out[0] = _wrap(s0)
    out[1] = _wrap(s1)
    out[2] = min(max(s2, -MAX_VEL_1), MAX_VEL_1)
    out[3] = min(max(s3, -MAX_VEL_2), MAX_VEL_2)
    return out


@numba.njit(cache=True)
def is_terminal(state):
    return -math.cos(state[0]) - math.cos(state[1] + state[0]) > 1.0


@numba.njit(cache=True)
def observe(state, out):
    out[0] = math.cos(state[0])
    out[1] = math.sin(state[0])
    out[2] = math.cos(state[1])
    out[3] = math.sin(state[1])
    out[4] = state[2]
    out[5] = state[3]


@numba.njit(cache=True)
def reset_state(rng):
    s = np.empty(4)
    for i in range(4):
        s[i] = -0.1 + 0.2 * rng.random()
    return s


def energy(state) -> float:
    """Total mechanical energy; conserved under zero torque."""
    th1, th2, dth1, dth2 = state
    m1, m2, l1 = LINK_MASS_1, LINK_MASS_2, LINK_LENGTH_1
    lc1, lc2, i1, i2 = LINK_COM_POS_1, LINK_COM_POS_2, LINK_MOI, LINK_MOI
    d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * math.cos(th2)) + i1 + i2
    d2 = m2 * (lc2**2 + l1 * lc2 * math.cos(th2)) + i2
    d3 = m2 * lc2**2 + i2
    kinetic = 0.5 * (d1 * dth1**2 + 2 * d2 * dth1 * dth2 + d3 * dth2**2)
    potential = -(m1 * lc1 + m2 * l1) * GRAVITY * math.cos(th1) - m2 * lc2 * GRAVITY * math.cos(th1 + th2)
    return kinetic + potential


FEATURE_LOW = np.array([-1.0, -1.0, -1.0, -1.0, -MAX_VEL_1, -MAX_VEL_2])
FEATURE_HIGH = -FEATURE_LOW


class Acrobot(Environment):
    """Observations are ``(cos th1, sin th1, cos th2, sin th2, dth1, dth2)``.

    Reward is -1 per step and 0 on the step that reaches the goal height.
    Episodes are truncated (not terminated) after ``max_steps`` steps.
    """

    n_actions = 3
    r_max = 1.0
    n_features = N_FEATURES

    def __init__(self, seed=None, substeps: int = 4, max_steps: int = MAX_EPISODE_STEPS):
        super().__init__(seed)
        self.substeps = substeps
        self.max_steps = max_steps
        self.state = np.zeros(4)
        self.t = 0
        self.truncated = False

    def _obs(self):
        out = np.empty(N_FEATURES)
        observe(self.state, out)
        return out

    def reset(self):
        self.state = reset_state(self.rng)
        self.t = 0
        self.done = False
        self.truncated = False
        return self._obs()

    def step(self, action: int) -> StepOutcome:
        self._guard(action)
        self.state = integrate(self.state, TORQUES[action], self.substeps)
        self.t += 1
        terminal = bool(is_terminal(self.state))
        self.truncated = not terminal and self.t >= self.max_steps
        self.done = terminal or self.truncated
        return StepOutcome(0.0 if terminal else -1.0, self._obs(), terminal)
