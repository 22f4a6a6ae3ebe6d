"""Three-armed 'spider': revolute-prismatic root joints plus revolute elbows.

Geometry is expressed on a 500x500 px canvas and converted to normalized
coordinates ((px - 250) / 250) for labels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

CANVAS = 500.0
HALF = CANVAS / 2
DT = 0.01
LINK_WIDTH = 20.0
LINK_HEIGHT = 80.0
JOINT_RADIUS = 10.0
EXT_LIMITS = (20.0, 80.0)
ELBOW_LIMITS = (-math.radians(35.0), math.radians(35.0))
SECTOR_HALF_WIDTH = math.radians(60.0)
SECTOR_LIMITS = (-SECTOR_HALF_WIDTH, SECTOR_HALF_WIDTH)
SECTOR_BISECTORS = (math.radians(90.0), math.radians(210.0), math.radians(330.0))
ROOT_WINDOW = 180.0


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class SpiderState:
    root: np.ndarray            # (2,) px
    orientation: float          # rad
    rotation: np.ndarray        # (3,) offset from each sector bisector, rad
    extension: np.ndarray       # (3,) prismatic extension, px
    elbow: np.ndarray           # (3,) elbow angle, rad
    root_vel: np.ndarray = field(default_factory=lambda: np.zeros(2))
    orientation_vel: float = 0.0
    rotation_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    extension_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    elbow_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))


def _mixture(rng: np.random.Generator, mean: float, std: float, size=None) -> np.ndarray:
    """Equal-weight two-component Gaussian mixture with means +mean and -mean."""
    sign = np.where(rng.random(size) < 0.5, 1.0, -1.0)
    return sign * mean + std * rng.standard_normal(size)


def random_spider_state(rng: np.random.Generator) -> SpiderState:
    lo, hi = HALF - ROOT_WINDOW / 2, HALF + ROOT_WINDOW / 2
    root = rng.uniform(lo, hi, size=2)
    orientation = float(rng.uniform(0, 2 * math.pi))
    rotation = rng.uniform(*SECTOR_LIMITS, size=3)
    extension = rng.uniform(*EXT_LIMITS, size=3)
    elbow = rng.uniform(*ELBOW_LIMITS, size=3)
    return SpiderState(
        root=root, orientation=orientation, rotation=rotation, extension=extension, elbow=elbow,
        root_vel=_mixture(rng, 24.0, 15.0, 2),
        orientation_vel=float(_mixture(rng, 0.3, 0.1)),
        rotation_vel=_mixture(rng, 0.3, 0.1, 3),
        extension_vel=_mixture(rng, 500.0, 60.0, 3),
        elbow_vel=_mixture(rng, 0.3, 0.1, 3),
    )


def _reflect(value: np.ndarray, vel: np.ndarray, dt: float, lo: float, hi: float):
    """Integrate one step; mirror at a limit and reverse the velocity."""
    new = value + vel * dt
    vel = vel.copy()
    over, under = new > hi, new < lo
    new = np.where(over, 2 * hi - new, new)
    new = np.where(under, 2 * lo - new, new)
    vel[over | under] *= -1.0
    return np.clip(new, lo, hi), vel


def spider_step(state: SpiderState, dt: float = DT) -> SpiderState:
    rot, rot_v = _reflect(state.rotation, state.rotation_vel, dt, *SECTOR_LIMITS)
    ext, ext_v = _reflect(state.extension, state.extension_vel, dt, *EXT_LIMITS)
    elb, elb_v = _reflect(state.elbow, state.elbow_vel, dt, *ELBOW_LIMITS)
    return replace(
        state,
        root=state.root + state.root_vel * dt,
        orientation=(state.orientation + state.orientation_vel * dt) % (2 * math.pi),
        rotation=rot, rotation_vel=rot_v,
        extension=ext, extension_vel=ext_v,
        elbow=elb, elbow_vel=elb_v,
    )


def within_constraints(state: SpiderState) -> bool:
    return bool(np.all((state.rotation >= SECTOR_LIMITS[0]) & (state.rotation <= SECTOR_LIMITS[1]))
                and np.all((state.extension >= EXT_LIMITS[0]) & (state.extension <= EXT_LIMITS[1]))
                and np.all((state.elbow >= ELBOW_LIMITS[0]) & (state.elbow <= ELBOW_LIMITS[1])))


def _unit(angle) -> np.ndarray:
    angle = _arr(angle)
    return np.stack([np.cos(angle), np.sin(angle)], -1)


def arm_angles(state: SpiderState) -> np.ndarray:
    return state.orientation + _arr(SECTOR_BISECTORS) + state.rotation


def spider_keypoints_px(state: SpiderState) -> np.ndarray:
    """(7, 2) in canvas pixels: root, three elbows, three tips."""
    a = arm_angles(state)
    elbows = state.root + (state.extension + LINK_HEIGHT)[:, None] * _unit(a)
    tips = elbows + LINK_HEIGHT * _unit(a + state.elbow)
    return np.concatenate([state.root[None], elbows, tips])


def to_normalized(px: np.ndarray) -> np.ndarray:
    return (_arr(px) - HALF) / HALF


def spider_keypoints(state: SpiderState) -> np.ndarray:
    return to_normalized(spider_keypoints_px(state))
