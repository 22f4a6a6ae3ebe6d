"""Integer-grid rasterization of rotated rectangles and circles.

A pixel is covered when its center lies inside the shape (no anti-aliasing),
so coverage masks are exact. Shapes are given in normalized coordinates,
where the image spans [-1, 1] on both axes and y points down.
"""
from __future__ import annotations

import math

import numpy as np

SIZE = 128


def to_pixel(v: float, size: int = SIZE) -> float:
    return (v + 1.0) * size / 2.0


def _bbox(cx: float, cy: float, rx: float, ry: float, size: int):
    x0 = max(int(math.floor(to_pixel(cx - rx, size) - 0.5)), 0)
    x1 = min(int(math.ceil(to_pixel(cx + rx, size) + 0.5)), size)
    y0 = max(int(math.floor(to_pixel(cy - ry, size) - 0.5)), 0)
    y1 = min(int(math.ceil(to_pixel(cy + ry, size) + 0.5)), size)
    return x0, x1, y0, y1


def _centers(x0: int, x1: int, y0: int, y1: int, size: int):
    xs = (np.arange(x0, x1) + 0.5) * 2.0 / size - 1.0
    ys = (np.arange(y0, y1) + 0.5) * 2.0 / size - 1.0
    return np.meshgrid(xs, ys)


def rect_mask(cx: float, cy: float, width: float, height: float, angle: float,
              size: int = SIZE):
    """Rectangle with ``height`` along direction ``angle`` (radians from +x).

    Returns (mask, (y0, y1, x0, x1)) where mask covers only the bounding box.
    """
    if width <= 0 or height <= 0:
        return None
    c, s = math.cos(angle), math.sin(angle)
    hw, hh = width / 2, height / 2
    rx = abs(c) * hh + abs(s) * hw
    ry = abs(s) * hh + abs(c) * hw
    x0, x1, y0, y1 = _bbox(cx, cy, rx, ry, size)
    if x0 >= x1 or y0 >= y1:
        return None
    gx, gy = _centers(x0, x1, y0, y1, size)
    dx, dy = gx - cx, gy - cy
    along = dx * c + dy * s
    across = -dx * s + dy * c
    m = (np.abs(along) <= hh) & (np.abs(across) <= hw)
    return m, (y0, y1, x0, x1)


def circle_mask(cx: float, cy: float, radius: float, size: int = SIZE):
    if radius <= 0:
        return None
    x0, x1, y0, y1 = _bbox(cx, cy, radius, radius, size)
    if x0 >= x1 or y0 >= y1:
        return None
    gx, gy = _centers(x0, x1, y0, y1, size)
    m = (gx - cx) ** 2 + (gy - cy) ** 2 <= radius**2
    return m, (y0, y1, x0, x1)


def segment_rect(p: np.ndarray, q: np.ndarray, width: float, size: int = SIZE):
    """Rectangle of given width spanning segment p -> q."""
    d = np.asarray(q, float) - np.asarray(p, float)
    length = float(np.hypot(*d))
    mid = (np.asarray(p, float) + np.asarray(q, float)) / 2
    return rect_mask(mid[0], mid[1], width, length, math.atan2(d[1], d[0]), size)


def paint(image: np.ndarray, shape, color, mask: np.ndarray | None = None) -> None:
    """Fill ``shape`` (as returned by the mask builders) into image and mask in place."""
    if shape is None:
        return
    m, (y0, y1, x0, x1) = shape
    image[y0:y1, x0:x1][m] = color
    if mask is not None:
        mask[y0:y1, x0:x1] |= m
