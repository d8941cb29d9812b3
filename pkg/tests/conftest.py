"""Shared fixtures and independent oracles for the test suite.

The oracle implementations here are deliberately naive (per-voxel scans,
exhaustive enumeration, textbook Dijkstra) and independent of the package
internals they are used to check.
"""

from __future__ import annotations

import heapq
import itertools
import math

import numpy as np
import pytest

from bimodal_explorer.geometry import FREE, OCCUPIED, UNKNOWN
from bimodal_explorer.world import Scenario, SensorModel, VoxelGrid, sense


def make_grid(truth: np.ndarray, res: float = 0.25) -> VoxelGrid:
    return VoxelGrid(res, truth.shape, truth.astype(np.int8))


def empty_truth(nx, ny, nz):
    return np.full((nx, ny, nz), FREE, dtype=np.int8)


def fully_sense(grid: VoxelGrid) -> None:
    """Reveal the entire grid (test convenience, not a sensor model)."""
    grid.known = grid.truth.copy()
    grid.known.flags.writeable = True
    grid.version += 1


@pytest.fixture
def small_sensor():
    return SensorModel(range_m=3.0)


# ------------------------------------------------------------- oracles

def frontier_oracle(grid: VoxelGrid) -> set[int]:
    """Per-voxel scan of the frontier definition."""
    nx, ny, nz = grid.dims
    out = set()
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if grid.known[x, y, z] != FREE:
                    continue
                for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                                   (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    jx, jy, jz = x + dx, y + dy, z + dz
                    if 0 <= jx < nx and 0 <= jy < ny and 0 <= jz < nz:
                        if grid.known[jx, jy, jz] == UNKNOWN:
                            out.add((x * ny + y) * nz + z)
                            break
    return out


def ground_oracle(grid: VoxelGrid, clearance: int = 2) -> set[int]:
    """Per-column scan of the traversable-ground definition."""
    nx, ny, nz = grid.dims
    out = set()
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if grid.known[x, y, z] != FREE:
                    continue
                if z > 0 and grid.known[x, y, z - 1] != OCCUPIED:
                    continue
                ok = True
                for i in range(1, clearance):
                    if z + i >= nz or grid.known[x, y, z + i] != FREE:
                        ok = False
                        break
                if ok:
                    out.add((x * ny + y) * nz + z)
    return out


def grid_astar_oracle(grid: VoxelGrid, a, b, use_truth: bool = False) -> float:
    """Optimal 26-connected path length between two points (voxel centers),
    corner-cutting forbidden, over FREE voxels. +inf if unreachable."""
    cells = grid.truth if use_truth else grid.known
    nx, ny, nz = grid.dims
    start = grid.voxel_of(a)
    goal = grid.voxel_of(b)
    if cells[start] != FREE or cells[goal] != FREE:
        return math.inf
    offs = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
            for dz in (-1, 0, 1) if (dx, dy, dz) != (0, 0, 0)]
    dist = {start: 0.0}
    heap = [(0.0, start)]
    seen = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in seen:
            continue
        seen.add(u)
        if u == goal:
            return d
        ux, uy, uz = u
        for dx, dy, dz in offs:
            v = (ux + dx, uy + dy, uz + dz)
            if not (0 <= v[0] < nx and 0 <= v[1] < ny and 0 <= v[2] < nz):
                continue
            if cells[v] != FREE:
                continue
            blocked = False
            for gx in {0, dx}:
                for gy in {0, dy}:
                    for gz in {0, dz}:
                        if (gx, gy, gz) == (0, 0, 0):
                            continue
                        if cells[ux + gx, uy + gy, uz + gz] != FREE:
                            blocked = True
            if blocked:
                continue
            nd = d + math.sqrt(dx * dx + dy * dy + dz * dz) * grid.res
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return math.inf


def exhaustive_min_cover(universe: frozenset, sets: list[frozenset]):
    """Smallest sub-collection covering every coverable element; exhaustive."""
    coverable = frozenset().union(*sets) & universe if sets else frozenset()
    for k in range(0, len(sets) + 1):
        for combo in itertools.combinations(range(len(sets)), k):
            got = frozenset().union(*(sets[i] for i in combo)) if combo else frozenset()
            if coverable <= got:
                return list(combo)
    return list(range(len(sets)))


def visibility_oracle(grid: VoxelGrid, vp_pos, target_center, max_range,
                      vfov_half, n_steps: int = 4000) -> bool:
    """Dense sampled line-of-sight: independent of the traversal kernel.

    Samples many points along the open segment and checks none lies in an
    OCCUPIED voxel. Points within half a step of either endpoint's voxel
    are skipped (the endpoints themselves do not occlude).
    """
    vp_pos = np.asarray(vp_pos, float)
    target = np.asarray(target_center, float)
    d = target - vp_pos
    dist = float(np.linalg.norm(d))
    if dist > max_range:
        return False
    horiz = math.hypot(d[0], d[1])
    if math.atan2(abs(d[2]), horiz) > vfov_half:
        return False
    src_vox = grid.voxel_of(vp_pos)
    dst_vox = grid.voxel_of(target)
    for i in range(1, n_steps):
        p = vp_pos + d * (i / n_steps)
        v = grid.voxel_of(p)
        if v == src_vox or v == dst_vox:
            continue
        if grid.known[v] == OCCUPIED:
            return False
    return True


def dijkstra_graph_oracle(n_nodes, edges, src) -> list[float]:
    """Textbook Dijkstra over an explicit edge list [(i, j, w)]."""
    adj = [[] for _ in range(n_nodes)]
    for i, j, w in edges:
        adj[i].append((j, w))
        adj[j].append((i, w))
    dist = [math.inf] * n_nodes
    dist[src] = 0.0
    heap = [(0.0, src)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


# ---------------------------------------------------- planning oracle

def exhaustive_sequence_optimum(all_vps, home, start_pose, params, penalties,
                                e_all, t_all):
    """Brute-force the unconstrained objective over every lock-consistent
    viewpoint sequence (straight-line travel): -sum(ig) + kappa_E + kappa_T
    with legs priced at the arriving viewpoint's modality and the return
    leg at the average modality.

    Returns (best_score, set of optimal first-move uids; HOME_UID encodes
    the empty sequence).
    """
    from bimodal_explorer.geometry import dyaw as _dyaw
    from bimodal_explorer.mcts import HOME_UID

    home = np.asarray(home, float)

    def leg(pose_pos, pose_yaw, vp):
        length = float(np.linalg.norm(vp.position - pose_pos))
        t = max(length / params.v(vp.modality),
                _dyaw(pose_yaw, vp.yaw) / params.w(vp.modality))
        return t, params.p(vp.modality) * t

    def ret(pose_pos):
        length = float(np.linalg.norm(home - pose_pos))
        t = length / params.v_average
        return t, params.p_average * t

    best = math.inf
    best_first: set[int] = set()

    def score_done(pos, e, t, gain, first_uid):
        nonlocal best, best_first
        tr, er = ret(pos)
        e2 = e - er
        t2 = t - tr
        s = -gain + penalties.kappa_energy(e2, e_all) + penalties.kappa_time(t2, t_all)
        if s < best - 1e-12:
            best = s
            best_first = {first_uid}
        elif abs(s - best) <= 1e-12:
            best_first.add(first_uid)

    def recurse(pos, yaw, e, t, gain, used, lock, first_uid):
        score_done(pos, e, t, gain, first_uid)
        for vp in all_vps:
            if vp.uid in used:
                continue
            tag = lock.get(vp.cluster_id)
            if tag is not None and vp.strategy != tag:
                continue
            dt, de = leg(pos, yaw, vp)
            lock2 = dict(lock)
            lock2[vp.cluster_id] = vp.strategy
            recurse(vp.position, vp.yaw, e - de, t - dt, gain + vp.ig,
                    used | {vp.uid}, lock2,
                    vp.uid if first_uid == HOME_UID else first_uid)

    recurse(np.asarray(start_pose.position, float), start_pose.yaw,
            e_all, t_all, 0.0, frozenset(), {}, HOME_UID)
    return best, best_first
