"""Programmatic scene builders for tests, experiments, and the CLI demos.

Each builder returns (truth, header); `build_scenario` mirrors the file
loader for in-memory use, and `write_scene` emits the on-disk format.
Coordinates: the grid origin is at (0,0,0); the grid floor supports ground
robots, partitions are occupied columns.
"""

from __future__ import annotations

import json

import numpy as np

from bimodal_explorer.geometry import FREE, OCCUPIED
from bimodal_explorer.world import Scenario, VoxelGrid, sense, sensor_from_header


def _base(nx, ny, nz, res=0.25):
    truth = np.full((nx, ny, nz), FREE, dtype=np.int8)
    header = {"resolution": res, "dims": [nx, ny, nz]}
    return truth, header


def _wall(truth, x0, x1, y0, y1, z0, z1):
    truth[x0:x1, y0:y1, z0:z1] = OCCUPIED


def empty_room(nx=20, ny=20, nz=8, res=0.25):
    truth, header = _base(nx, ny, nz, res)
    header["start"] = [nx * res / 2, ny * res / 2, 0.425]
    header["home"] = header["start"]
    header["budget"] = {"energy": 400.0, "time": 240.0}
    header["planner"] = {"iterations": 300}
    return truth, header


def office(res=0.25):
    """Partitioned office floor, 20 m x 8 m x 2 m, 1 m high dividers.

    Rooms connect through 1 m door gaps; the ceiling leaves 1 m of air
    above every partition so the robot can also fly across.
    """
    nx, ny, nz = 80, 32, 8
    truth, header = _base(nx, ny, nz, res)
    wall_h = 4  # 1 m partitions
    for i, wx in enumerate((16, 32, 48, 64)):
        _wall(truth, wx, wx + 1, 0, ny, 0, wall_h)
        if i % 2 == 0:
            truth[wx, 2:6, 0:wall_h] = FREE  # door near y=0
        else:
            truth[wx, ny - 6 : ny - 2, 0:wall_h] = FREE  # door near y=max
    # long spine partition with door gaps per room
    _wall(truth, 4, 76, 16, 17, 0, wall_h)
    for gx in (8, 24, 40, 56, 72):
        truth[gx : gx + 4, 16, 0:wall_h] = FREE
    header["start"] = [1.0, 1.0, 0.425]
    header["home"] = [1.0, 1.0, 0.425]
    header["budget"] = {"energy": 800.0, "time": 400.0}
    header["planner"] = {"iterations": 500}
    return truth, header


def corridor(res=0.25):
    """One-way corridor, 24 m x 3 m x 2 m, with alternating half-height baffles."""
    nx, ny, nz = 96, 12, 8
    truth, header = _base(nx, ny, nz, res)
    for i, bx in enumerate(range(16, 90, 16)):
        if i % 2 == 0:
            _wall(truth, bx, bx + 1, 0, 7, 0, 4)
        else:
            _wall(truth, bx, bx + 1, 5, ny, 0, 4)
    header["start"] = [0.625, 1.5, 0.425]
    header["home"] = [0.625, 1.5, 0.425]
    header["budget"] = {"energy": 400.0, "time": 200.0}
    header["planner"] = {"iterations": 800}
    return truth, header


def two_level(res=0.25):
    """Hall plus a low-clearance second level, 14 m x 10 m x 4 m.

    The hall (x < 7 m) is open to the 4 m ceiling; beyond it a slab at 2 m
    splits the space into an under-slab ground level and an on-slab upper
    level, each with about 2 m of clearance. The slab is reachable only by
    flying over its open edge. `low_region_x` in the header marks where the
    low-clearance levels start.
    """
    nx, ny, nz = 56, 40, 16
    truth, header = _base(nx, ny, nz, res)
    _wall(truth, 28, nx, 0, ny, 8, 9)  # the slab
    # a few pillars in the hall for occlusion structure
    for px, py in ((10, 10), (10, 30), (20, 20)):
        _wall(truth, px, px + 2, py, py + 2, 0, nz)
    header["start"] = [0.75, 5.0, 0.425]
    header["home"] = [0.75, 5.0, 0.425]
    header["budget"] = {"energy": 1000.0, "time": 600.0}
    header["planner"] = {"iterations": 600}
    header["low_region_x"] = 28 * res
    return truth, header


BUILDERS = {
    "empty_room": empty_room,
    "office": office,
    "corridor": corridor,
    "two_level": two_level,
}


def build_scenario(truth, header, sensor=None) -> Scenario:
    """In-memory twin of world.load_scenario (same initial sensing)."""
    grid = VoxelGrid(header["resolution"], header["dims"], truth)
    start = np.asarray(header["start"], dtype=np.float64)
    home = np.asarray(header["home"], dtype=np.float64)
    if sensor is None:
        sensor = sensor_from_header(header)
    sense(grid, start, 0.0, sensor)
    return Scenario(grid=grid, start=start, home=home, header=header)


def write_scene(path, truth, header) -> None:
    nx, ny, nz = truth.shape
    out = [json.dumps(header, sort_keys=True)]
    for z in range(nz):
        out.append(f"layer {z}")
        for y in range(ny):
            out.append(
                "".join("#" if truth[x, y, z] == OCCUPIED else "." for x in range(nx))
            )
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")


def write_all(out_dir) -> list[str]:
    import os

    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, fn in BUILDERS.items():
        truth, header = fn()
        p = os.path.join(out_dir, f"{name}.scene")
        write_scene(p, truth, header)
        written.append(p)
    return written
