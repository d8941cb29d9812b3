"""Small shared geometry helpers: angles, voxel/world conversions, enums."""

from __future__ import annotations

import enum
import math

import numpy as np

# Voxel states. int8 in the grid arrays.
UNKNOWN = 0
FREE = 1
OCCUPIED = 2


class Modality(enum.Enum):
    """Locomotion mode: rolling, flying, or the synthetic average of the two.

    The average is used for cost estimation whenever the eventual mode has
    not been decided yet (guidance tours, return-home legs).
    """

    TERRESTRIAL = "T"
    AERIAL = "A"
    AVERAGE = "avg"


def wrap_pi(a: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a < 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def dyaw(a: float, b: float) -> float:
    """Minimum absolute yaw difference, in [0, pi]. Symmetric by construction."""
    d = math.fmod(abs(a - b), 2.0 * math.pi)
    if d > math.pi:
        d = 2.0 * math.pi - d
    return d


def circular_mean(angles) -> float:
    """Mean direction of a set of angles (atan2 of summed unit vectors)."""
    s = 0.0
    c = 0.0
    for a in angles:
        s += math.sin(a)
        c += math.cos(a)
    return math.atan2(s, c)


def voxel_of(p, res: float) -> tuple[int, int, int]:
    """Voxel index containing world point p (grid origin at 0,0,0)."""
    return (
        int(math.floor(p[0] / res)),
        int(math.floor(p[1] / res)),
        int(math.floor(p[2] / res)),
    )


def voxel_center(idx, res: float) -> np.ndarray:
    return np.array(
        [(idx[0] + 0.5) * res, (idx[1] + 0.5) * res, (idx[2] + 0.5) * res],
        dtype=np.float64,
    )


def in_bounds(idx, dims) -> bool:
    return (
        0 <= idx[0] < dims[0] and 0 <= idx[1] < dims[1] and 0 <= idx[2] < dims[2]
    )


def flat_index(idx, dims) -> int:
    return (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2]


def unflat_index(flat: int, dims) -> tuple[int, int, int]:
    iz = flat % dims[2]
    rest = flat // dims[2]
    iy = rest % dims[1]
    ix = rest // dims[1]
    return (ix, iy, iz)


FACE_NEIGHBORS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
    dtype=np.int64,
)


def euclid(a, b) -> float:
    dx = a[0] - b[0]
    dy = a[1] - b[1]
    dz = a[2] - b[2]
    return math.sqrt(dx * dx + dy * dy + dz * dz)
