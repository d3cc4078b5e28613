"""Rendered raster fixtures with known geometry."""

from __future__ import annotations

import numpy as np


def ring(shape, cx, cy, r, half_width=0.5, value=1.0, background=0.0) -> np.ndarray:
    """Pixels whose centre lies within ``half_width`` of the circle."""
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    d = np.hypot(xx - cx, yy - cy)
    out = np.full(shape, background, dtype=np.float64)
    out[np.abs(d - r) < half_width] = value
    return out


def disk(shape, cx, cy, r, value=200.0, background=20.0) -> np.ndarray:
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    out = np.full(shape, background, dtype=np.float64)
    out[np.hypot(xx - cx, yy - cy) <= r] = value
    return out


DEAD_RINGS = ((30, 30, 12), (90, 28, 15), (130, 40, 9), (45, 90, 17), (115, 95, 11))


def dead_image(shape=(128, 160)) -> np.ndarray:
    """Five dark rings on a bright background."""
    img = np.full(shape, 180.0)
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    for cx, cy, r in DEAD_RINGS:
        img[np.abs(np.hypot(xx - cx, yy - cy) - r) < 1.2] = 40.0
    return img


# (cx, cy, semi-major, semi-minor, angle in degrees); the last two touch tip to tip
ALIVE_BLOBS = (
    (25, 25, 14, 6, 30),
    (70, 30, 14, 6, -20),
    (120, 28, 14, 6, 80),
    (30, 80, 14, 6, 0),
    (66, 95, 14, 6, 0),
    (93, 95, 14, 6, 0),
)


def ellipse_mask(shape, cx, cy, a, b, angle_deg) -> np.ndarray:
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    t = np.deg2rad(angle_deg)
    u = (xx - cx) * np.cos(t) + (yy - cy) * np.sin(t)
    v = -(xx - cx) * np.sin(t) + (yy - cy) * np.cos(t)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def alive_image(shape=(128, 160), blobs=ALIVE_BLOBS) -> np.ndarray:
    img = np.full(shape, 30.0)
    for blob in blobs:
        img[ellipse_mask(shape, *blob)] = 200.0
    return img
