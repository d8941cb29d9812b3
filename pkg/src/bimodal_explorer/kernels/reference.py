"""Pure-Python grid kernels: raycast sensing, segment scans, grid A*.

This is the fallback backend. The compiled twin (_gridcore.pyx) mirrors the
arithmetic here operation-for-operation; both must produce bit-identical
results so that runs replay identically regardless of backend. Keep the
two files in sync.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from bimodal_explorer.geometry import FREE, OCCUPIED

INF = math.inf


def _build_26_offsets():
    offs = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if dx == 0 and dy == 0 and dz == 0:
                    continue
                offs.append((dx, dy, dz))
    return offs


def _guards_for(off):
    # Corner-cut guard: every voxel of the sub-box spanned by the move must
    # be free (the target itself is included and re-checked cheaply).
    dx, dy, dz = off
    guards = []
    for a in {0, dx}:
        for b in {0, dy}:
            for c in {0, dz}:
                if (a, b, c) != (0, 0, 0):
                    guards.append((a, b, c))
    return guards


AIR_OFFSETS = _build_26_offsets()
AIR_WEIGHTS = [
    math.sqrt(float(dx * dx + dy * dy + dz * dz)) for dx, dy, dz in AIR_OFFSETS
]
AIR_GUARDS = [_guards_for(off) for off in AIR_OFFSETS]

GROUND_OFFSETS = [
    (dx, dy, 0) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if not (dx == 0 and dy == 0)
]
GROUND_WEIGHTS = [math.sqrt(float(dx * dx + dy * dy)) for dx, dy, _ in GROUND_OFFSETS]
GROUND_GUARDS = [
    [(dx, 0, 0), (0, dy, 0)] if dx != 0 and dy != 0 else []
    for dx, dy, _ in GROUND_OFFSETS
]


def raycast_sense(known, truth, origin, dirs, max_range, res):
    """Cast rays from origin and reveal ground truth into the known grid.

    Voxels along each ray become FREE until the first truth-occupied voxel,
    which becomes OCCUPIED and terminates the ray. Returns the flat indices
    whose known state changed, in visit order.
    """
    nx, ny, nz = known.shape
    ox = float(origin[0])
    oy = float(origin[1])
    oz = float(origin[2])
    changed = []
    kflat = known.reshape(-1)
    tflat = truth.reshape(-1)
    n_rays = dirs.shape[0]
    for r in range(n_rays):
        dx = float(dirs[r, 0])
        dy = float(dirs[r, 1])
        dz = float(dirs[r, 2])
        ix = int(math.floor(ox / res))
        iy = int(math.floor(oy / res))
        iz = int(math.floor(oz / res))

        if dx > 0.0:
            step_x, tmax_x, tdelta_x = 1, ((ix + 1) * res - ox) / dx, res / dx
        elif dx < 0.0:
            step_x, tmax_x, tdelta_x = -1, (ix * res - ox) / dx, -res / dx
        else:
            step_x, tmax_x, tdelta_x = 0, INF, INF
        if dy > 0.0:
            step_y, tmax_y, tdelta_y = 1, ((iy + 1) * res - oy) / dy, res / dy
        elif dy < 0.0:
            step_y, tmax_y, tdelta_y = -1, (iy * res - oy) / dy, -res / dy
        else:
            step_y, tmax_y, tdelta_y = 0, INF, INF
        if dz > 0.0:
            step_z, tmax_z, tdelta_z = 1, ((iz + 1) * res - oz) / dz, res / dz
        elif dz < 0.0:
            step_z, tmax_z, tdelta_z = -1, (iz * res - oz) / dz, -res / dz
        else:
            step_z, tmax_z, tdelta_z = 0, INF, INF

        while True:
            flat = (ix * ny + iy) * nz + iz
            if tflat[flat] == OCCUPIED:
                if kflat[flat] != OCCUPIED:
                    kflat[flat] = OCCUPIED
                    changed.append(flat)
                break
            if kflat[flat] != FREE:
                kflat[flat] = FREE
                changed.append(flat)
            # advance to the next voxel boundary (x, then y, then z on ties)
            if tmax_x <= tmax_y and tmax_x <= tmax_z:
                t_enter = tmax_x
                tmax_x += tdelta_x
                ix += step_x
            elif tmax_y <= tmax_z:
                t_enter = tmax_y
                tmax_y += tdelta_y
                iy += step_y
            else:
                t_enter = tmax_z
                tmax_z += tdelta_z
                iz += step_z
            if t_enter > max_range:
                break
            if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
                break
    return np.array(changed, dtype=np.int64)


def _segment_setup(a, b, res):
    ax, ay, az = float(a[0]), float(a[1]), float(a[2])
    bx, by, bz = float(b[0]), float(b[1]), float(b[2])
    dx = bx - ax
    dy = by - ay
    dz = bz - az
    length = math.sqrt(dx * dx + dy * dy + dz * dz)
    return ax, ay, az, dx, dy, dz, length


def segment_all_free(cells, a, b, res):
    """True iff every voxel along the segment a->b (inclusive) is FREE."""
    nx, ny, nz = cells.shape
    ax, ay, az, dx, dy, dz, length = _segment_setup(a, b, res)
    ix = int(math.floor(ax / res))
    iy = int(math.floor(ay / res))
    iz = int(math.floor(az / res))
    tx_ = int(math.floor(float(b[0]) / res))
    ty_ = int(math.floor(float(b[1]) / res))
    tz_ = int(math.floor(float(b[2]) / res))
    if length == 0.0:
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
            return False
        return cells[ix, iy, iz] == FREE

    if dx > 0.0:
        step_x, tmax_x, tdelta_x = 1, ((ix + 1) * res - ax) / dx, res / dx
    elif dx < 0.0:
        step_x, tmax_x, tdelta_x = -1, (ix * res - ax) / dx, -res / dx
    else:
        step_x, tmax_x, tdelta_x = 0, INF, INF
    if dy > 0.0:
        step_y, tmax_y, tdelta_y = 1, ((iy + 1) * res - ay) / dy, res / dy
    elif dy < 0.0:
        step_y, tmax_y, tdelta_y = -1, (iy * res - ay) / dy, -res / dy
    else:
        step_y, tmax_y, tdelta_y = 0, INF, INF
    if dz > 0.0:
        step_z, tmax_z, tdelta_z = 1, ((iz + 1) * res - az) / dz, res / dz
    elif dz < 0.0:
        step_z, tmax_z, tdelta_z = -1, (iz * res - az) / dz, -res / dz
    else:
        step_z, tmax_z, tdelta_z = 0, INF, INF

    while True:
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
            return False
        if cells[ix, iy, iz] != FREE:
            return False
        if ix == tx_ and iy == ty_ and iz == tz_:
            return True
        if tmax_x <= tmax_y and tmax_x <= tmax_z:
            t_enter = tmax_x
            tmax_x += tdelta_x
            ix += step_x
        elif tmax_y <= tmax_z:
            t_enter = tmax_y
            tmax_y += tdelta_y
            iy += step_y
        else:
            t_enter = tmax_z
            tmax_z += tdelta_z
            iz += step_z
        if t_enter > length + res:
            # numeric safety net; the target voxel is normally hit first
            return True


def segment_clear(cells, a, b, res):
    """True iff no OCCUPIED voxel lies strictly between a and b.

    The voxels containing a and b themselves are not checked (occlusion
    test for visibility: only a blocking wall in between counts).
    """
    nx, ny, nz = cells.shape
    ax, ay, az, dx, dy, dz, length = _segment_setup(a, b, res)
    ix = int(math.floor(ax / res))
    iy = int(math.floor(ay / res))
    iz = int(math.floor(az / res))
    tx_ = int(math.floor(float(b[0]) / res))
    ty_ = int(math.floor(float(b[1]) / res))
    tz_ = int(math.floor(float(b[2]) / res))
    if (ix == tx_ and iy == ty_ and iz == tz_) or length == 0.0:
        return True

    if dx > 0.0:
        step_x, tmax_x, tdelta_x = 1, ((ix + 1) * res - ax) / dx, res / dx
    elif dx < 0.0:
        step_x, tmax_x, tdelta_x = -1, (ix * res - ax) / dx, -res / dx
    else:
        step_x, tmax_x, tdelta_x = 0, INF, INF
    if dy > 0.0:
        step_y, tmax_y, tdelta_y = 1, ((iy + 1) * res - ay) / dy, res / dy
    elif dy < 0.0:
        step_y, tmax_y, tdelta_y = -1, (iy * res - ay) / dy, -res / dy
    else:
        step_y, tmax_y, tdelta_y = 0, INF, INF
    if dz > 0.0:
        step_z, tmax_z, tdelta_z = 1, ((iz + 1) * res - az) / dz, res / dz
    elif dz < 0.0:
        step_z, tmax_z, tdelta_z = -1, (iz * res - az) / dz, -res / dz
    else:
        step_z, tmax_z, tdelta_z = 0, INF, INF

    while True:
        if tmax_x <= tmax_y and tmax_x <= tmax_z:
            t_enter = tmax_x
            tmax_x += tdelta_x
            ix += step_x
        elif tmax_y <= tmax_z:
            t_enter = tmax_y
            tmax_y += tdelta_y
            iy += step_y
        else:
            t_enter = tmax_z
            tmax_z += tdelta_z
            iz += step_z
        if t_enter > length + res:
            return True
        if ix == tx_ and iy == ty_ and iz == tz_:
            return True
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
            return True
        if cells[ix, iy, iz] == OCCUPIED:
            return False


def count_visible(cells, vp_pos, targets, max_range, vfov_half, res):
    """Visibility of target points from a sensor pose (360 deg horizontal FoV).

    A target is visible when it is within range, within the vertical FoV
    half-angle, and not occluded by an OCCUPIED voxel along the line of
    sight. Returns (count, mask).
    """
    n = targets.shape[0]
    mask = np.zeros(n, dtype=np.uint8)
    px = float(vp_pos[0])
    py = float(vp_pos[1])
    pz = float(vp_pos[2])
    count = 0
    for i in range(n):
        tx = float(targets[i, 0])
        ty = float(targets[i, 1])
        tz = float(targets[i, 2])
        dx = tx - px
        dy = ty - py
        dz = tz - pz
        dist = math.sqrt(dx * dx + dy * dy + dz * dz)
        if dist > max_range:
            continue
        horiz = math.sqrt(dx * dx + dy * dy)
        if math.atan2(abs(dz), horiz) > vfov_half:
            continue
        if segment_clear(cells, (px, py, pz), (tx, ty, tz), res):
            mask[i] = 1
            count += 1
    return count, mask


def astar_grid(cells, ground, start_flat, goal_flat, res, air_mult, bimodal):
    """A* over the known voxel grid.

    bimodal=False: 26-connected moves through FREE voxels, unit distance cost
    (pure flight). bimodal=True: adds 8-connected same-height moves between
    ground-traversable voxels at distance cost, while air moves cost
    air_mult * distance, so rolling is preferred where possible.

    Returns (found, path_flat int64 array root->goal, arrived_by_ground
    uint8 array aligned with path; entry 0 is always 0).
    """
    nx, ny, nz = cells.shape
    n = nx * ny * nz
    cflat = cells.reshape(-1)
    gflat = ground.reshape(-1) if ground is not None else None

    gx, gy, gz = _unflat(goal_flat, ny, nz)
    INF_ = INF
    gcost = {}
    parent = {}
    par_ground = {}
    closed = set()

    def hfun(ix, iy, iz):
        ddx = float(ix - gx)
        ddy = float(iy - gy)
        ddz = float(iz - gz)
        return math.sqrt(ddx * ddx + ddy * ddy + ddz * ddz) * res

    sx, sy, sz = _unflat(start_flat, ny, nz)
    gcost[start_flat] = 0.0
    heap = [(hfun(sx, sy, sz), start_flat)]
    found = False
    while heap:
        f, u = heapq.heappop(heap)
        if u in closed:
            continue
        closed.add(u)
        if u == goal_flat:
            found = True
            break
        ux, uy, uz = _unflat(u, ny, nz)
        gu = gcost[u]
        if bimodal and gflat is not None and gflat[u]:
            for k in range(len(GROUND_OFFSETS)):
                dx, dy, _ = GROUND_OFFSETS[k]
                vx = ux + dx
                vy = uy + dy
                if vx < 0 or vx >= nx or vy < 0 or vy >= ny:
                    continue
                v = (vx * ny + vy) * nz + uz
                if not gflat[v] or v in closed:
                    continue
                ok = True
                for a, b, _c in GROUND_GUARDS[k]:
                    w = ((ux + a) * ny + (uy + b)) * nz + uz
                    if cflat[w] != FREE:
                        ok = False
                        break
                if not ok:
                    continue
                cand = gu + GROUND_WEIGHTS[k] * res
                if cand < gcost.get(v, INF_):
                    gcost[v] = cand
                    parent[v] = u
                    par_ground[v] = 1
                    heapq.heappush(heap, (cand + hfun(vx, vy, uz), v))
        for k in range(len(AIR_OFFSETS)):
            dx, dy, dz = AIR_OFFSETS[k]
            vx = ux + dx
            vy = uy + dy
            vz = uz + dz
            if vx < 0 or vx >= nx or vy < 0 or vy >= ny or vz < 0 or vz >= nz:
                continue
            v = (vx * ny + vy) * nz + vz
            if cflat[v] != FREE or v in closed:
                continue
            ok = True
            for a, b, c in AIR_GUARDS[k]:
                wx = ux + a
                wy = uy + b
                wz = uz + c
                w = (wx * ny + wy) * nz + wz
                if cflat[w] != FREE:
                    ok = False
                    break
            if not ok:
                continue
            wcost = AIR_WEIGHTS[k] * res
            if bimodal:
                wcost = wcost * air_mult
            cand = gu + wcost
            if cand < gcost.get(v, INF_):
                gcost[v] = cand
                parent[v] = u
                par_ground[v] = 0
                heapq.heappush(heap, (cand + hfun(vx, vy, vz), v))

    if not found:
        return False, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.uint8)
    path = []
    flags = []
    node = goal_flat
    while node != start_flat:
        path.append(node)
        flags.append(par_ground.get(node, 0))
        node = parent[node]
    path.append(start_flat)
    flags.append(0)
    path.reverse()
    flags.reverse()
    return True, np.array(path, dtype=np.int64), np.array(flags, dtype=np.uint8)


def _unflat(flat, ny, nz):
    iz = flat % nz
    rest = flat // nz
    iy = rest % ny
    ix = rest // ny
    return ix, iy, iz
