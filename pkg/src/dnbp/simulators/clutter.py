"""Distractor shapes drawn beneath or above the tracked structure.

Items are generated in each task's native units and stored in normalized
image coordinates; velocities are per-frame displacements.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from dnbp.simulators import pendulum, spider

PENDULUM_RECT_COLORS = ((0, 204, 204), (245, 87, 77))
PENDULUM_CIRCLE_COLORS = ((204, 204, 0), (96, 217, 63))
SPIDER_ARM_COLORS = ((220, 40, 40), (40, 180, 60), (40, 80, 220))
JOINT_YELLOW = (204, 204, 0)


@dataclass(frozen=True)
class ClutterItem:
    kind: str               # rectangle | circle
    width: float            # rectangle short side, or 0
    height: float           # rectangle long side, or 0
    radius: float           # circle radius, or 0
    color: tuple[int, int, int]
    x: float
    y: float
    theta: float
    vx: float = 0.0
    vy: float = 0.0
    vtheta: float = 0.0
    layer: str = "beneath"  # beneath | above


@dataclass(frozen=True)
class ClutterSpec:
    """Sampling distributions in task-native units; ``unit`` converts to normalized."""
    rect_prob: float
    rect_width: tuple[float, float]
    rect_height: tuple[float, float]
    radius: tuple[float, float]
    rect_colors: tuple
    circle_colors: tuple
    position_std: float
    angle_std: float
    init_half_extent: float   # normalized
    unit: float


PENDULUM_CLUTTER = ClutterSpec(
    rect_prob=0.8, rect_width=(0.2, 0.05), rect_height=(0.8, 0.2), radius=(0.1, 0.1),
    rect_colors=PENDULUM_RECT_COLORS, circle_colors=PENDULUM_CIRCLE_COLORS,
    position_std=0.025, angle_std=0.05, init_half_extent=1.5, unit=pendulum.WORLD_SCALE,
)
SPIDER_CLUTTER = ClutterSpec(
    rect_prob=0.7, rect_width=(20.0, 3.0), rect_height=(80.0, 5.0), radius=(10.0, 3.0),
    rect_colors=SPIDER_ARM_COLORS, circle_colors=(JOINT_YELLOW,),
    position_std=3.0, angle_std=0.05, init_half_extent=1.0, unit=1.0 / spider.HALF,
)
CLUTTER_SPECS = {"pendulum": PENDULUM_CLUTTER, "spider": SPIDER_CLUTTER}


def _one(spec: ClutterSpec, layer: str, dynamic: bool, rng: np.random.Generator) -> ClutterItem:
    is_rect = rng.random() < spec.rect_prob
    if is_rect:
        w = max(0.0, rng.normal(*spec.rect_width)) * spec.unit
        h = max(0.0, rng.normal(*spec.rect_height)) * spec.unit
        r = 0.0
        colors = spec.rect_colors
    else:
        w = h = 0.0
        r = max(0.0, rng.normal(*spec.radius)) * spec.unit
        colors = spec.circle_colors
    color = colors[int(rng.integers(len(colors)))]
    x, y = rng.uniform(-spec.init_half_extent, spec.init_half_extent, size=2)
    theta = rng.uniform(0.0, 2 * math.pi)
    vx = vy = vt = 0.0
    if dynamic:
        vx, vy = rng.normal(0.0, spec.position_std, size=2) * spec.unit
        vt = rng.normal(0.0, spec.angle_std)
    return ClutterItem("rectangle" if is_rect else "circle", float(w), float(h), float(r),
                       tuple(int(c) for c in color), float(x), float(y), float(theta),
                       float(vx), float(vy), float(vt), layer)


def gen_clutter(task: str, count_beneath: int, count_above: int, dynamic: bool,
                rng: np.random.Generator) -> list[ClutterItem]:
    if count_beneath < 0 or count_above < 0:
        raise ValueError("clutter counts must be non-negative")
    spec = CLUTTER_SPECS[task]
    items = [_one(spec, "beneath", dynamic, rng) for _ in range(count_beneath)]
    items += [_one(spec, "above", dynamic, rng) for _ in range(count_above)]
    return items


def step_clutter(items: list[ClutterItem]) -> list[ClutterItem]:
    return [replace(c, x=c.x + c.vx, y=c.y + c.vy, theta=c.theta + c.vtheta)
            if (c.vx or c.vy or c.vtheta) else c for c in items]


def is_static(items: list[ClutterItem]) -> bool:
    return all(c.vx == 0 and c.vy == 0 and c.vtheta == 0 for c in items)
