"""Ray/pixel intersection operator on the unit square.

The square is split into ``n_side x n_side`` pixels. Pixel ``(row, col)``
covers ``x in [col/n, (col+1)/n]`` and ``y in [row/n, (row+1)/n]`` and
images are column-stacked, so the pixel's index in ``x0`` is
``row + col * n_side``.
"""

import logging
from typing import Tuple

import numpy as np
from numpy.typing import NDArray

logger = logging.getLogger(__name__)

_TOL = 1e-12


def chord_interval(origin: NDArray[np.float64], direction: NDArray[np.float64]) -> Tuple[float, float]:
    """Parameter interval ``[t_in, t_out]`` of the line inside the unit square.

    ``direction`` must have unit length; an empty interval is returned as
    ``(0.0, 0.0)``.
    """
    t_in, t_out = -np.inf, np.inf
    for axis in range(2):
        p, d = origin[axis], direction[axis]
        if abs(d) < _TOL:
            if p < -_TOL or p > 1.0 + _TOL:
                return 0.0, 0.0
            continue
        t0, t1 = (0.0 - p) / d, (1.0 - p) / d
        t_in = max(t_in, min(t0, t1))
        t_out = min(t_out, max(t0, t1))
    if t_out <= t_in:
        return 0.0, 0.0
    return float(t_in), float(t_out)


def ray_pixel_lengths(
    origin: NDArray[np.float64],
    direction: NDArray[np.float64],
    n_side: int,
) -> NDArray[np.float64]:
    """Intersection length of one ray with every pixel (Siddon-style)."""
    row_out = np.zeros(n_side * n_side)
    t_in, t_out = chord_interval(origin, direction)
    if t_out - t_in <= _TOL:
        return row_out

    crossings = [np.array([t_in, t_out])]
    lines = np.arange(n_side + 1) / n_side
    for axis in range(2):
        d = direction[axis]
        if abs(d) < _TOL:
            continue
        t = (lines - origin[axis]) / d
        crossings.append(t[(t > t_in) & (t < t_out)])
    ts = np.unique(np.concatenate(crossings))

    seg = np.diff(ts)
    keep = seg > _TOL
    mids = 0.5 * (ts[:-1] + ts[1:])[keep]
    points = origin[None, :] + mids[:, None] * direction[None, :]
    cols = np.clip(np.floor(points[:, 0] * n_side).astype(int), 0, n_side - 1)
    rows = np.clip(np.floor(points[:, 1] * n_side).astype(int), 0, n_side - 1)
    np.add.at(row_out, rows + cols * n_side, seg[keep])
    return row_out


def random_ray(rng: np.random.Generator) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Uniform point on the boundary and a uniform direction into the square."""
    u = rng.uniform(0.0, 4.0)
    side = int(u)
    s = u - side
    # (origin, inward normal angle) per side: bottom, right, top, left
    if side == 0:
        origin, normal = np.array([s, 0.0]), np.pi / 2
    elif side == 1:
        origin, normal = np.array([1.0, s]), np.pi
    elif side == 2:
        origin, normal = np.array([1.0 - s, 1.0]), -np.pi / 2
    else:
        origin, normal = np.array([0.0, 1.0 - s]), 0.0
    angle = normal + rng.uniform(-np.pi / 2, np.pi / 2)
    return origin, np.array([np.cos(angle), np.sin(angle)])


def ray_matrix(n_side: int, n_rays: int, rng: np.random.Generator) -> NDArray[np.float64]:
    a = np.empty((n_rays, n_side * n_side))
    for i in range(n_rays):
        origin, direction = random_ray(rng)
        a[i] = ray_pixel_lengths(origin, direction, n_side)
    logger.debug(f"Built {n_rays}x{n_side * n_side} ray operator")
    return a


def phantom(n_side: int) -> NDArray[np.float64]:
    """Geometric test image: two rectangles and a disk on a zero background."""
    centers = (np.arange(n_side) + 0.5) / n_side
    xx, yy = np.meshgrid(centers, centers)  # rows follow y, columns follow x
    image = np.zeros((n_side, n_side))
    image[(xx > 0.15) & (xx < 0.85) & (yy > 0.1) & (yy < 0.4)] = 0.6
    image[(xx > 0.2) & (xx < 0.45) & (yy > 0.55) & (yy < 0.9)] = 0.3
    image[(xx - 0.68) ** 2 + (yy - 0.7) ** 2 < 0.17 ** 2] = 1.0
    return image


def stack_columns(image: NDArray[np.float64]) -> NDArray[np.float64]:
    return image.reshape(-1, order="F")


def unstack_columns(x: NDArray[np.float64], n_side: int) -> NDArray[np.float64]:
    return np.asarray(x).reshape((n_side, n_side), order="F")
