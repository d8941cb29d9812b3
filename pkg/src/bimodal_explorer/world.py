"""Voxel world model: occupancy grid, lidar-style sensing, frontiers, traversability.

The grid keeps two layers: the immutable ground truth (simulator-only) and
the planner-visible knowledge map, whose cells only ever move from UNKNOWN
to their true state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from bimodal_explorer import kernels
from bimodal_explorer.geometry import (
    FREE,
    OCCUPIED,
    UNKNOWN,
    flat_index,
    in_bounds,
    voxel_center,
    voxel_of,
)


class ScenarioError(ValueError):
    """Malformed scene file or invalid scenario setup."""


class DomainError(ValueError):
    """Query outside the grid or from an invalid pose."""


@dataclass
class SensorModel:
    """Omnidirectional-horizontal lidar with a limited vertical fan."""

    range_m: float = 5.0
    vfov_half: float = math.radians(30.0)
    ang_res: float = math.radians(2.0)

    def __post_init__(self):
        if self.range_m <= 0:
            raise ValueError("sensor range must be positive")
        n_az = round(2.0 * math.pi / self.ang_res)
        if abs(n_az * self.ang_res - 2.0 * math.pi) > 1e-9:
            raise ValueError("angular resolution must divide 2*pi evenly")
        self._dirs = None

    def ray_directions(self) -> np.ndarray:
        """Unit direction for every (elevation, azimuth) ray, cached."""
        if self._dirs is None:
            n_az = round(2.0 * math.pi / self.ang_res)
            n_el = round(2.0 * self.vfov_half / self.ang_res) + 1
            dirs = np.empty((n_el * n_az, 3), dtype=np.float64)
            i = 0
            for e in range(n_el):
                elev = -self.vfov_half + e * self.ang_res
                ce = math.cos(elev)
                se = math.sin(elev)
                for a in range(n_az):
                    az = a * self.ang_res
                    dirs[i, 0] = ce * math.cos(az)
                    dirs[i, 1] = ce * math.sin(az)
                    dirs[i, 2] = se
                    i += 1
            self._dirs = dirs
        return self._dirs


class VoxelGrid:
    """3D occupancy grid: hidden ground truth plus the planner's knowledge map."""

    def __init__(self, resolution: float, dims, truth: np.ndarray):
        if resolution <= 0:
            raise ScenarioError("resolution must be positive")
        self.res = float(resolution)
        self.dims = tuple(int(d) for d in dims)
        if any(d <= 0 for d in self.dims):
            raise ScenarioError("dims must be positive")
        if truth.shape != self.dims:
            raise ScenarioError(f"truth shape {truth.shape} != dims {self.dims}")
        self.truth = np.ascontiguousarray(truth, dtype=np.int8)
        self.truth.flags.writeable = False
        self.known = np.zeros(self.dims, dtype=np.int8)  # all UNKNOWN
        self.version = 0

    # -- basic queries -------------------------------------------------
    def in_bounds(self, idx) -> bool:
        return in_bounds(idx, self.dims)

    def voxel_of(self, p):
        return voxel_of(p, self.res)

    def center_of(self, idx) -> np.ndarray:
        return voxel_center(idx, self.res)

    def flat(self, idx) -> int:
        return flat_index(idx, self.dims)

    def state(self, idx) -> int:
        return int(self.known[idx])

    def is_free(self, idx) -> bool:
        return self.in_bounds(idx) and self.known[idx] == FREE

    def unknown_count(self) -> int:
        return int(np.count_nonzero(self.known == UNKNOWN))

    def centers_of_flat(self, flat_idx: np.ndarray) -> np.ndarray:
        """World centers for an array of flat indices, (n, 3)."""
        nx, ny, nz = self.dims
        iz = flat_idx % nz
        iy = (flat_idx // nz) % ny
        ix = flat_idx // (ny * nz)
        out = np.empty((len(flat_idx), 3), dtype=np.float64)
        out[:, 0] = (ix + 0.5) * self.res
        out[:, 1] = (iy + 0.5) * self.res
        out[:, 2] = (iz + 0.5) * self.res
        return out


@dataclass
class FrontierCluster:
    """Connected, size-bounded patch of frontier voxels with an outward normal."""

    id: int
    members: np.ndarray  # flat indices, sorted
    centroid: np.ndarray  # world meters
    normal: np.ndarray  # unit, oriented toward known space


@dataclass
class Scenario:
    grid: VoxelGrid
    start: np.ndarray
    home: np.ndarray
    header: dict = field(default_factory=dict)


# ---------------------------------------------------------------- sensing

def sense(grid: VoxelGrid, position, yaw: float, sensor: SensorModel) -> np.ndarray:
    """Reveal ground truth along sensor rays from a pose.

    Returns the flat indices whose planner-visible state changed. The yaw is
    accepted for interface symmetry; the horizontal field of view is 360 deg
    so it does not affect coverage.
    """
    idx = grid.voxel_of(position)
    if not grid.in_bounds(idx):
        raise DomainError(f"sense pose {tuple(position)} outside grid")
    if grid.truth[idx] != FREE:
        raise DomainError(f"sense pose {tuple(position)} inside occupied voxel")
    changed = kernels.raycast_sense(
        grid.known, grid.truth, np.asarray(position, dtype=np.float64),
        sensor.ray_directions(), sensor.range_m, grid.res,
    )
    if len(changed):
        grid.version += 1
    return changed


# ---------------------------------------------------------------- frontiers

def detect_frontiers(grid: VoxelGrid) -> np.ndarray:
    """Flat indices of FREE voxels face-adjacent to at least one UNKNOWN voxel."""
    free = grid.known == FREE
    unk = grid.known == UNKNOWN
    adj = np.zeros_like(free)
    adj[:-1, :, :] |= unk[1:, :, :]
    adj[1:, :, :] |= unk[:-1, :, :]
    adj[:, :-1, :] |= unk[:, 1:, :]
    adj[:, 1:, :] |= unk[:, :-1, :]
    adj[:, :, :-1] |= unk[:, :, 1:]
    adj[:, :, 1:] |= unk[:, :, :-1]
    return np.flatnonzero(free & adj)


_FACE_STRUCT = ndimage.generate_binary_structure(3, 1)


def cluster_frontiers(
    grid: VoxelGrid, frontier_flat: np.ndarray, max_size: int = 30
) -> list[FrontierCluster]:
    """Partition frontier voxels into face-connected clusters of bounded size.

    Oversized components are split by recursive bisection along their
    principal axis. Each cluster carries a PCA normal oriented toward the
    free space adjacent to it.
    """
    if len(frontier_flat) == 0:
        return []
    mask = np.zeros(grid.dims, dtype=bool)
    mask.reshape(-1)[frontier_flat] = True
    labels, n_comp = ndimage.label(mask, structure=_FACE_STRUCT)
    labels_flat = labels.reshape(-1)

    pieces: list[np.ndarray] = []
    for comp in range(1, n_comp + 1):
        members = frontier_flat[labels_flat[frontier_flat] == comp]
        pieces.extend(_split_to_size(grid, members, max_size))

    clusters = []
    for cid, members in enumerate(pieces):
        centers = grid.centers_of_flat(members)
        centroid = centers.mean(axis=0)
        normal = _cluster_normal(grid, members, centers, centroid)
        clusters.append(
            FrontierCluster(id=cid, members=np.sort(members), centroid=centroid,
                            normal=normal)
        )
    return clusters


def _split_to_size(grid: VoxelGrid, members: np.ndarray, max_size: int):
    if len(members) <= max_size:
        return [members]
    centers = grid.centers_of_flat(members)
    centroid = centers.mean(axis=0)
    x = centers - centroid
    cov = x.T @ x
    evals, evecs = np.linalg.eigh(cov)
    axis = evecs[:, -1]  # largest spread
    proj = x @ axis
    order = np.lexsort((members, proj))
    half = len(members) // 2
    lo = members[order[:half]]
    hi = members[order[half:]]
    return _split_to_size(grid, lo, max_size) + _split_to_size(grid, hi, max_size)


def _cluster_normal(grid, members, centers, centroid) -> np.ndarray:
    x = centers - centroid
    cov = x.T @ x
    evals, evecs = np.linalg.eigh(cov)
    normal = evecs[:, 0]  # smallest spread = surface normal
    ref = _adjacent_free_mean(grid, members)
    if ref is not None:
        d = ref - centroid
        if float(normal @ d) < 0.0:
            normal = -normal
    else:
        # no orientation reference: canonical sign
        for c in normal:
            if c != 0.0:
                if c < 0.0:
                    normal = -normal
                break
    return normal


def _adjacent_free_mean(grid: VoxelGrid, members: np.ndarray):
    """Mean center of FREE voxels face-adjacent to the cluster, excluding members."""
    member_set = set(int(m) for m in members)
    nx, ny, nz = grid.dims
    acc = np.zeros(3)
    count = 0
    for m in members:
        m = int(m)
        iz = m % nz
        iy = (m // nz) % ny
        ix = m // (ny * nz)
        for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0),
                           (0, 0, 1), (0, 0, -1)):
            jx, jy, jz = ix + dx, iy + dy, iz + dz
            if not (0 <= jx < nx and 0 <= jy < ny and 0 <= jz < nz):
                continue
            j = (jx * ny + jy) * nz + jz
            if j in member_set or grid.known[jx, jy, jz] != FREE:
                continue
            acc += ((jx + 0.5) * grid.res, (jy + 0.5) * grid.res,
                    (jz + 0.5) * grid.res)
            count += 1
    if count == 0:
        return None
    return acc / count


# ---------------------------------------------------------------- ground

def traversable_ground_voxels(grid: VoxelGrid, clearance: int = 2) -> np.ndarray:
    """Boolean mask of FREE voxels that a ground robot can stand on.

    A voxel qualifies when the voxel below is OCCUPIED (or it sits on the
    grid floor) and `clearance` voxels starting at the voxel itself are FREE.
    """
    free = grid.known == FREE
    nz = grid.dims[2]
    support = np.zeros(grid.dims, dtype=bool)
    support[:, :, 0] = True
    support[:, :, 1:] = grid.known[:, :, :-1] == OCCUPIED
    clear = free.copy()
    for i in range(1, clearance):
        if i >= nz:
            clear[:] = False
            break
        clear[:, :, : nz - i] &= free[:, :, i:]
        clear[:, :, nz - i :] = False
    return free & support & clear


# ---------------------------------------------------------------- scene io

def load_scenario(path, sensor: SensorModel | None = None) -> Scenario:
    """Load a scene file and perform the initial sensing from the start pose.

    Format: one JSON header line, then one ASCII grid per z-layer introduced
    by a `layer <z>` line; rows are y, columns are x; `#` occupied, `.` free.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ScenarioError(f"{path}: empty scene file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}:1: bad JSON header: {e}") from e
    for key in ("resolution", "dims", "start", "home"):
        if key not in header:
            raise ScenarioError(f"{path}:1: header missing field '{key}'")
    dims = tuple(int(d) for d in header["dims"])
    nx, ny, nz = dims
    truth = np.full(dims, FREE, dtype=np.int8)

    ln = 1
    for z in range(nz):
        if ln >= len(lines) or not lines[ln].startswith("layer"):
            raise ScenarioError(f"{path}:{ln + 1}: expected 'layer {z}'")
        ln += 1
        for y in range(ny):
            if ln >= len(lines):
                raise ScenarioError(f"{path}:{ln + 1}: truncated layer {z}")
            row = lines[ln]
            if len(row) != nx:
                raise ScenarioError(
                    f"{path}:{ln + 1}: row has {len(row)} cells, expected {nx}"
                )
            for x, ch in enumerate(row):
                if ch == "#":
                    truth[x, y, z] = OCCUPIED
                elif ch != ".":
                    raise ScenarioError(f"{path}:{ln + 1}: bad cell char {ch!r}")
            ln += 1

    grid = VoxelGrid(header["resolution"], dims, truth)
    start = np.asarray(header["start"], dtype=np.float64)
    home = np.asarray(header["home"], dtype=np.float64)
    sidx = grid.voxel_of(start)
    if not grid.in_bounds(sidx):
        raise ScenarioError(f"{path}: robot start {start.tolist()} out of bounds")
    if grid.truth[sidx] != FREE:
        raise ScenarioError(f"{path}: robot start {start.tolist()} inside occupied voxel")
    hidx = grid.voxel_of(home)
    if not grid.in_bounds(hidx) or grid.truth[hidx] != FREE:
        raise ScenarioError(f"{path}: home {home.tolist()} invalid")

    if sensor is None:
        sensor = sensor_from_header(header)
    sense(grid, start, 0.0, sensor)
    return Scenario(grid=grid, start=start, home=home, header=header)


def sensor_from_header(header: dict) -> SensorModel:
    cfg = header.get("sensor", {})
    kwargs = {}
    if "range_m" in cfg:
        kwargs["range_m"] = float(cfg["range_m"])
    if "vfov_half_deg" in cfg:
        kwargs["vfov_half"] = math.radians(float(cfg["vfov_half_deg"]))
    if "ang_res_deg" in cfg:
        kwargs["ang_res"] = math.radians(float(cfg["ang_res_deg"]))
    return SensorModel(**kwargs)


def save_scenario(scn: Scenario, path) -> None:
    """Write a scene file; load -> save -> load round-trips the ground truth."""
    grid = scn.grid
    nx, ny, nz = grid.dims
    out = [json.dumps(scn.header, sort_keys=True)]
    for z in range(nz):
        out.append(f"layer {z}")
        for y in range(ny):
            out.append(
                "".join(
                    "#" if grid.truth[x, y, z] == OCCUPIED else "."
                    for x in range(nx)
                )
            )
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")


def reachable_free_mask(grid: VoxelGrid, start_pos) -> np.ndarray:
    """Ground-truth FREE voxels flood-fill reachable (face-adjacent) from start."""
    free = grid.truth == FREE
    labels, _ = ndimage.label(free, structure=_FACE_STRUCT)
    sidx = grid.voxel_of(start_pos)
    return labels == labels[sidx]
