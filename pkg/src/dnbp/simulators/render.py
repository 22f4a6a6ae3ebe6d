"""Frame rendering: beneath-layer clutter, structure, above-layer clutter."""
from __future__ import annotations

import numpy as np

from dnbp.simulators import pendulum, spider
from dnbp.simulators.clutter import JOINT_YELLOW, SPIDER_ARM_COLORS, ClutterItem
from dnbp.simulators.raster import SIZE, circle_mask, paint, rect_mask, segment_rect

BACKGROUND = (255, 255, 255)
PENDULUM_LINK_COLORS = ((0, 204, 204), (245, 87, 77))
PENDULUM_LINK_WIDTH = 0.2 * pendulum.WORLD_SCALE
PENDULUM_JOINT_RADIUS = 0.1 * pendulum.WORLD_SCALE
SPIDER_UNIT = 1.0 / spider.HALF


def clutter_shape(c: ClutterItem, size: int = SIZE):
    if c.kind == "rectangle":
        return rect_mask(c.x, c.y, c.width, c.height, c.theta, size)
    return circle_mask(c.x, c.y, c.radius, size)


def render_layer(items: list[ClutterItem], size: int = SIZE):
    """(rgb, mask) of the items painted in order onto an empty layer."""
    rgb = np.zeros((size, size, 3), np.uint8)
    mask = np.zeros((size, size), bool)
    for c in items:
        paint(rgb, clutter_shape(c, size), c.color, mask)
    return rgb, mask


def structure_shapes(task: str, state, size: int = SIZE):
    """List of (shape, color) making up the tracked structure, in paint order."""
    out = []
    if task == "pendulum":
        base, middle, end = pendulum.pendulum_keypoints(state)
        out.append((segment_rect(base, middle, PENDULUM_LINK_WIDTH, size), PENDULUM_LINK_COLORS[0]))
        out.append((segment_rect(middle, end, PENDULUM_LINK_WIDTH, size), PENDULUM_LINK_COLORS[1]))
        for p in (base, middle):
            out.append((circle_mask(p[0], p[1], PENDULUM_JOINT_RADIUS, size), JOINT_YELLOW))
    elif task == "spider":
        kp = spider.spider_keypoints(state)
        root = kp[0]
        angles = spider.arm_angles(state)
        for i in range(3):
            u = np.array([np.cos(angles[i]), np.sin(angles[i])])
            start = root + state.extension[i] * SPIDER_UNIT * u
            color = SPIDER_ARM_COLORS[i]
            out.append((segment_rect(start, kp[1 + i], spider.LINK_WIDTH * SPIDER_UNIT, size), color))
            out.append((segment_rect(kp[1 + i], kp[4 + i], spider.LINK_WIDTH * SPIDER_UNIT, size), color))
        r = spider.JOINT_RADIUS * SPIDER_UNIT
        for p in kp[:4]:
            out.append((circle_mask(p[0], p[1], r, size), JOINT_YELLOW))
    else:
        raise ValueError(f"unknown task {task!r}")
    return out


def structure_mask(task: str, state, size: int = SIZE) -> np.ndarray:
    mask = np.zeros((size, size), bool)
    scratch = np.zeros((size, size, 3), np.uint8)
    for shape, color in structure_shapes(task, state, size):
        paint(scratch, shape, color, mask)
    return mask


def compose(task: str, state, beneath, above, size: int = SIZE):
    """Composite pre-rendered clutter layers around the structure."""
    img = np.empty((size, size, 3), np.uint8)
    img[:] = BACKGROUND
    b_rgb, b_mask = beneath
    a_rgb, a_mask = above
    img[b_mask] = b_rgb[b_mask]
    for shape, color in structure_shapes(task, state, size):
        paint(img, shape, color)
    img[a_mask] = a_rgb[a_mask]
    return img, b_mask | a_mask


def render_frame(task: str, state, clutter: list[ClutterItem], size: int = SIZE):
    """(uint8 image (H, W, 3), bool clutter mask (H, W))."""
    beneath = render_layer([c for c in clutter if c.layer == "beneath"], size)
    above = render_layer([c for c in clutter if c.layer == "above"], size)
    return compose(task, state, beneath, above, size)
