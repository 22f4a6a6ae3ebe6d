"""Unactuated two-link pendulum (Acrobot equations of motion, zero torque).

Angles are measured from the downward vertical; image y points down, so a
hanging pendulum has its links along +y.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LINK_LENGTH_1 = 0.8
LINK_LENGTH_2 = 0.8
LINK_MASS_1 = 1.0
LINK_MASS_2 = 1.0
LINK_COM_1 = 0.4
LINK_COM_2 = 0.4
LINK_MOI = 1.0
GRAVITY = 9.8
DT = 0.08
# world units -> normalized image coordinates; keeps the full reach inside the frame
WORLD_SCALE = 1.0 / (LINK_LENGTH_1 + LINK_LENGTH_2 + 0.2)
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PendulumState:
    theta1: float
    theta2: float
    dtheta1: float = 0.0
    dtheta2: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2, self.dtheta1, self.dtheta2])


def random_pendulum_state(rng: np.random.Generator) -> PendulumState:
    t1, t2 = rng.uniform(0.0, TWO_PI, size=2)
    return PendulumState(float(t1), float(t2), 0.0, 0.0)


def _derivatives(s: np.ndarray) -> np.ndarray:
    m1, m2 = LINK_MASS_1, LINK_MASS_2
    l1, lc1, lc2 = LINK_LENGTH_1, LINK_COM_1, LINK_COM_2
    i1 = i2 = LINK_MOI
    g = GRAVITY
    t1, t2, dt1, dt2 = s
    d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * math.cos(t2)) + i1 + i2
    d2 = m2 * (lc2**2 + l1 * lc2 * math.cos(t2)) + i2
    phi2 = m2 * lc2 * g * math.sin(t1 + t2)
    phi1 = (-m2 * l1 * lc2 * dt2**2 * math.sin(t2)
            - 2 * m2 * l1 * lc2 * dt2 * dt1 * math.sin(t2)
            + (m1 * lc1 + m2 * l1) * g * math.sin(t1) + phi2)
    ddt2 = ((d2 / d1) * phi1 - m2 * l1 * lc2 * dt1**2 * math.sin(t2) - phi2) \
        / (m2 * lc2**2 + i2 - d2**2 / d1)
    ddt1 = -(d2 * ddt2 + phi1) / d1
    return np.array([dt1, dt2, ddt1, ddt2])


def accelerations(state: PendulumState) -> tuple[float, float]:
    d = _derivatives(state.as_array())
    return float(d[2]), float(d[3])


def rk4(s: np.ndarray, dt: float) -> np.ndarray:
    k1 = _derivatives(s)
    k2 = _derivatives(s + 0.5 * dt * k1)
    k3 = _derivatives(s + 0.5 * dt * k2)
    k4 = _derivatives(s + dt * k3)
    return s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def pendulum_step(state: PendulumState, dt: float = DT, wrap: bool = True) -> PendulumState:
    t1, t2, dt1, dt2 = rk4(state.as_array(), dt)
    if wrap:
        t1, t2 = t1 % TWO_PI, t2 % TWO_PI
    return PendulumState(float(t1), float(t2), float(dt1), float(dt2))


def pendulum_energy(state: PendulumState) -> float:
    """Total mechanical energy, zero when hanging at rest."""
    m1, m2 = LINK_MASS_1, LINK_MASS_2
    l1, lc1, lc2 = LINK_LENGTH_1, LINK_COM_1, LINK_COM_2
    i1 = i2 = LINK_MOI
    g = GRAVITY
    t1, t2, dt1, dt2 = state.as_array()
    d11 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * math.cos(t2)) + i1 + i2
    d12 = m2 * (lc2**2 + l1 * lc2 * math.cos(t2)) + i2
    d22 = m2 * lc2**2 + i2
    kinetic = 0.5 * (d11 * dt1**2 + 2 * d12 * dt1 * dt2 + d22 * dt2**2)
    potential = ((m1 * lc1 + m2 * l1) * g * (1 - math.cos(t1))
                 + m2 * lc2 * g * (1 - math.cos(t1 + t2)))
    return kinetic + potential


def pendulum_keypoints(state: PendulumState, scale: float = WORLD_SCALE) -> np.ndarray:
    """(3, 2) base, middle joint and end effector in normalized coordinates."""
    t1, t2 = state.theta1, state.theta2
    base = np.zeros(2)
    middle = base + scale * LINK_LENGTH_1 * np.array([math.sin(t1), math.cos(t1)])
    end = middle + scale * LINK_LENGTH_2 * np.array([math.sin(t1 + t2), math.cos(t1 + t2)])
    return np.stack([base, middle, end])
