# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled grid kernels. Mirrors kernels/reference.py operation-for-operation.

Both backends must produce bit-identical results (same IEEE double ops in
the same order); change them together or the cross-backend replay tests
will fail.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, fabs, floor, sqrt

cnp.import_array()

cdef double INF = float("inf")

cdef int UNKNOWN = 0
cdef int FREE = 1
cdef int OCCUPIED = 2

# Neighbor tables, identical content and order to reference.py.
from bimodal_explorer.kernels.reference import (
    AIR_GUARDS,
    AIR_OFFSETS,
    AIR_WEIGHTS,
    GROUND_GUARDS,
    GROUND_OFFSETS,
    GROUND_WEIGHTS,
)

cdef cnp.int64_t[:, ::1] _AIR_OFF = np.array(AIR_OFFSETS, dtype=np.int64)
cdef cnp.float64_t[::1] _AIR_W = np.array(AIR_WEIGHTS, dtype=np.float64)
cdef cnp.int64_t[:, ::1] _GND_OFF = np.array(
    [(dx, dy) for dx, dy, _ in GROUND_OFFSETS], dtype=np.int64
)
cdef cnp.float64_t[::1] _GND_W = np.array(GROUND_WEIGHTS, dtype=np.float64)

# Guard tables flattened: for each offset, a (start, end) range into a flat
# guard-offset array.
def _flatten_guards(guards):
    flat = []
    ranges = []
    for glist in guards:
        start = len(flat)
        for g in glist:
            flat.append(g)
        ranges.append((start, len(flat)))
    fa = np.array(flat, dtype=np.int64) if flat else np.zeros((0, 3), dtype=np.int64)
    ra = np.array(ranges, dtype=np.int64)
    return fa, ra

_afg, _afr = _flatten_guards(AIR_GUARDS)
_gfg, _gfr = _flatten_guards(GROUND_GUARDS)
cdef cnp.int64_t[:, ::1] _AIR_G = _afg
cdef cnp.int64_t[:, ::1] _AIR_GR = _afr
cdef cnp.int64_t[:, ::1] _GND_G = _gfg
cdef cnp.int64_t[:, ::1] _GND_GR = _gfr


def raycast_sense(known, truth, origin, dirs, double max_range, double res):
    cdef cnp.int8_t[:, :, ::1] kv = known
    cdef const cnp.int8_t[:, :, ::1] tv = truth
    cdef cnp.float64_t[:, ::1] dv = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef Py_ssize_t nx = kv.shape[0]
    cdef Py_ssize_t ny = kv.shape[1]
    cdef Py_ssize_t nz = kv.shape[2]
    cdef double ox = float(origin[0])
    cdef double oy = float(origin[1])
    cdef double oz = float(origin[2])
    cdef Py_ssize_t n_rays = dv.shape[0]
    cdef cnp.int64_t[::1] changed = np.empty(nx * ny * nz, dtype=np.int64)
    cdef Py_ssize_t n_changed = 0
    cdef Py_ssize_t r
    cdef long ix, iy, iz
    cdef int step_x, step_y, step_z
    cdef double dx, dy, dz
    cdef double tmax_x, tmax_y, tmax_z, tdelta_x, tdelta_y, tdelta_z, t_enter

    for r in range(n_rays):
        dx = dv[r, 0]
        dy = dv[r, 1]
        dz = dv[r, 2]
        ix = <long>floor(ox / res)
        iy = <long>floor(oy / res)
        iz = <long>floor(oz / res)

        if dx > 0.0:
            step_x = 1; tmax_x = ((ix + 1) * res - ox) / dx; tdelta_x = res / dx
        elif dx < 0.0:
            step_x = -1; tmax_x = (ix * res - ox) / dx; tdelta_x = -res / dx
        else:
            step_x = 0; tmax_x = INF; tdelta_x = INF
        if dy > 0.0:
            step_y = 1; tmax_y = ((iy + 1) * res - oy) / dy; tdelta_y = res / dy
        elif dy < 0.0:
            step_y = -1; tmax_y = (iy * res - oy) / dy; tdelta_y = -res / dy
        else:
            step_y = 0; tmax_y = INF; tdelta_y = INF
        if dz > 0.0:
            step_z = 1; tmax_z = ((iz + 1) * res - oz) / dz; tdelta_z = res / dz
        elif dz < 0.0:
            step_z = -1; tmax_z = (iz * res - oz) / dz; tdelta_z = -res / dz
        else:
            step_z = 0; tmax_z = INF; tdelta_z = INF

        while True:
            if tv[ix, iy, iz] == OCCUPIED:
                if kv[ix, iy, iz] != OCCUPIED:
                    kv[ix, iy, iz] = OCCUPIED
                    changed[n_changed] = (ix * ny + iy) * nz + iz
                    n_changed += 1
                break
            if kv[ix, iy, iz] != FREE:
                kv[ix, iy, iz] = FREE
                changed[n_changed] = (ix * ny + iy) * nz + iz
                n_changed += 1
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
    return np.asarray(changed[:n_changed]).copy()


cdef bint _seg_all_free(const cnp.int8_t[:, :, ::1] cv, double ax, double ay, double az,
                        double bx, double by, double bz, double res):
    cdef Py_ssize_t nx = cv.shape[0]
    cdef Py_ssize_t ny = cv.shape[1]
    cdef Py_ssize_t nz = cv.shape[2]
    cdef double dx = bx - ax
    cdef double dy = by - ay
    cdef double dz = bz - az
    cdef double length = sqrt(dx * dx + dy * dy + dz * dz)
    cdef long ix = <long>floor(ax / res)
    cdef long iy = <long>floor(ay / res)
    cdef long iz = <long>floor(az / res)
    cdef long tx_ = <long>floor(bx / res)
    cdef long ty_ = <long>floor(by / res)
    cdef long tz_ = <long>floor(bz / res)
    cdef int step_x, step_y, step_z
    cdef double tmax_x, tmax_y, tmax_z, tdelta_x, tdelta_y, tdelta_z, t_enter

    if length == 0.0:
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
            return False
        return cv[ix, iy, iz] == FREE

    if dx > 0.0:
        step_x = 1; tmax_x = ((ix + 1) * res - ax) / dx; tdelta_x = res / dx
    elif dx < 0.0:
        step_x = -1; tmax_x = (ix * res - ax) / dx; tdelta_x = -res / dx
    else:
        step_x = 0; tmax_x = INF; tdelta_x = INF
    if dy > 0.0:
        step_y = 1; tmax_y = ((iy + 1) * res - ay) / dy; tdelta_y = res / dy
    elif dy < 0.0:
        step_y = -1; tmax_y = (iy * res - ay) / dy; tdelta_y = -res / dy
    else:
        step_y = 0; tmax_y = INF; tdelta_y = INF
    if dz > 0.0:
        step_z = 1; tmax_z = ((iz + 1) * res - az) / dz; tdelta_z = res / dz
    elif dz < 0.0:
        step_z = -1; tmax_z = (iz * res - az) / dz; tdelta_z = -res / dz
    else:
        step_z = 0; tmax_z = INF; tdelta_z = INF

    while True:
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
            return False
        if cv[ix, iy, iz] != FREE:
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
            return True


def segment_all_free(cells, a, b, double res):
    cdef const cnp.int8_t[:, :, ::1] cv = cells
    return bool(_seg_all_free(cv, float(a[0]), float(a[1]), float(a[2]),
                              float(b[0]), float(b[1]), float(b[2]), res))


cdef bint _seg_clear(const cnp.int8_t[:, :, ::1] cv, double ax, double ay, double az,
                     double bx, double by, double bz, double res):
    cdef Py_ssize_t nx = cv.shape[0]
    cdef Py_ssize_t ny = cv.shape[1]
    cdef Py_ssize_t nz = cv.shape[2]
    cdef double dx = bx - ax
    cdef double dy = by - ay
    cdef double dz = bz - az
    cdef double length = sqrt(dx * dx + dy * dy + dz * dz)
    cdef long ix = <long>floor(ax / res)
    cdef long iy = <long>floor(ay / res)
    cdef long iz = <long>floor(az / res)
    cdef long tx_ = <long>floor(bx / res)
    cdef long ty_ = <long>floor(by / res)
    cdef long tz_ = <long>floor(bz / res)
    cdef int step_x, step_y, step_z
    cdef double tmax_x, tmax_y, tmax_z, tdelta_x, tdelta_y, tdelta_z, t_enter

    if (ix == tx_ and iy == ty_ and iz == tz_) or length == 0.0:
        return True

    if dx > 0.0:
        step_x = 1; tmax_x = ((ix + 1) * res - ax) / dx; tdelta_x = res / dx
    elif dx < 0.0:
        step_x = -1; tmax_x = (ix * res - ax) / dx; tdelta_x = -res / dx
    else:
        step_x = 0; tmax_x = INF; tdelta_x = INF
    if dy > 0.0:
        step_y = 1; tmax_y = ((iy + 1) * res - ay) / dy; tdelta_y = res / dy
    elif dy < 0.0:
        step_y = -1; tmax_y = (iy * res - ay) / dy; tdelta_y = -res / dy
    else:
        step_y = 0; tmax_y = INF; tdelta_y = INF
    if dz > 0.0:
        step_z = 1; tmax_z = ((iz + 1) * res - az) / dz; tdelta_z = res / dz
    elif dz < 0.0:
        step_z = -1; tmax_z = (iz * res - az) / dz; tdelta_z = -res / dz
    else:
        step_z = 0; tmax_z = INF; tdelta_z = INF

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
        if cv[ix, iy, iz] == OCCUPIED:
            return False


def segment_clear(cells, a, b, double res):
    cdef const cnp.int8_t[:, :, ::1] cv = cells
    return bool(_seg_clear(cv, float(a[0]), float(a[1]), float(a[2]),
                           float(b[0]), float(b[1]), float(b[2]), res))


def count_visible(cells, vp_pos, targets, double max_range, double vfov_half,
                  double res):
    cdef const cnp.int8_t[:, :, ::1] cv = cells
    cdef cnp.float64_t[:, ::1] tg = np.ascontiguousarray(targets, dtype=np.float64)
    cdef Py_ssize_t n = tg.shape[0]
    mask_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] mask = mask_arr
    cdef double px = float(vp_pos[0])
    cdef double py = float(vp_pos[1])
    cdef double pz = float(vp_pos[2])
    cdef Py_ssize_t i
    cdef long count = 0
    cdef double tx, ty, tz, dx, dy, dz, dist, horiz
    for i in range(n):
        tx = tg[i, 0]
        ty = tg[i, 1]
        tz = tg[i, 2]
        dx = tx - px
        dy = ty - py
        dz = tz - pz
        dist = sqrt(dx * dx + dy * dy + dz * dz)
        if dist > max_range:
            continue
        horiz = sqrt(dx * dx + dy * dy)
        if atan2(fabs(dz), horiz) > vfov_half:
            continue
        if _seg_clear(cv, px, py, pz, tx, ty, tz, res):
            mask[i] = 1
            count += 1
    return int(count), mask_arr


cdef void _heap_push(cnp.float64_t[::1] hf, cnp.int64_t[::1] hi,
                     Py_ssize_t* size, double f, long idx):
    cdef Py_ssize_t pos = size[0]
    cdef Py_ssize_t par
    size[0] += 1
    hf[pos] = f
    hi[pos] = idx
    while pos > 0:
        par = (pos - 1) >> 1
        if hf[par] > hf[pos] or (hf[par] == hf[pos] and hi[par] > hi[pos]):
            hf[par], hf[pos] = hf[pos], hf[par]
            hi[par], hi[pos] = hi[pos], hi[par]
            pos = par
        else:
            break


cdef void _heap_pop(cnp.float64_t[::1] hf, cnp.int64_t[::1] hi,
                    Py_ssize_t* size, double* f_out, long* i_out):
    cdef Py_ssize_t pos = 0
    cdef Py_ssize_t child
    f_out[0] = hf[0]
    i_out[0] = hi[0]
    size[0] -= 1
    cdef Py_ssize_t n = size[0]
    hf[0] = hf[n]
    hi[0] = hi[n]
    while True:
        child = 2 * pos + 1
        if child >= n:
            break
        if child + 1 < n and (hf[child + 1] < hf[child] or
                              (hf[child + 1] == hf[child] and hi[child + 1] < hi[child])):
            child += 1
        if hf[child] < hf[pos] or (hf[child] == hf[pos] and hi[child] < hi[pos]):
            hf[pos], hf[child] = hf[child], hf[pos]
            hi[pos], hi[child] = hi[child], hi[pos]
            pos = child
        else:
            break


def astar_grid(cells, ground, long start_flat, long goal_flat, double res,
               double air_mult, bint bimodal):
    cdef const cnp.int8_t[:, :, ::1] cv = cells
    cdef Py_ssize_t nx = cv.shape[0]
    cdef Py_ssize_t ny = cv.shape[1]
    cdef Py_ssize_t nz = cv.shape[2]
    cdef Py_ssize_t n = nx * ny * nz
    cdef const cnp.int8_t[:, :, ::1] cflat3 = cv
    cdef cnp.uint8_t[::1] gflat
    cdef bint has_ground = ground is not None
    if has_ground:
        gflat = np.ascontiguousarray(ground.reshape(-1), dtype=np.uint8)
    else:
        gflat = np.zeros(1, dtype=np.uint8)

    gcost_arr = np.full(n, INF, dtype=np.float64)
    parent_arr = np.full(n, -1, dtype=np.int64)
    pground_arr = np.zeros(n, dtype=np.uint8)
    closed_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.float64_t[::1] gcost = gcost_arr
    cdef cnp.int64_t[::1] parent = parent_arr
    cdef cnp.uint8_t[::1] pground = pground_arr
    cdef cnp.uint8_t[::1] closed = closed_arr

    # heap capacity: every node can be pushed once per incoming edge
    cdef Py_ssize_t cap = 32 * n + 64
    heap_f_arr = np.empty(cap, dtype=np.float64)
    heap_i_arr = np.empty(cap, dtype=np.int64)
    cdef cnp.float64_t[::1] hf = heap_f_arr
    cdef cnp.int64_t[::1] hi = heap_i_arr
    cdef Py_ssize_t hsize = 0

    cdef long gx = goal_flat // (ny * nz)
    cdef long gy = (goal_flat // nz) % ny
    cdef long gz = goal_flat % nz
    cdef long sx = start_flat // (ny * nz)
    cdef long sy = (start_flat // nz) % ny
    cdef long sz = start_flat % nz

    cdef double ddx, ddy, ddz, hval, f, gu, cand, wcost
    cdef long u, v, ux, uy, uz, vx, vy, vz, wx, wy, wz
    cdef Py_ssize_t k, gi
    cdef long dx, dy, dz, a, b, c
    cdef bint ok
    cdef bint found = False

    ddx = <double>(sx - gx)
    ddy = <double>(sy - gy)
    ddz = <double>(sz - gz)
    gcost[start_flat] = 0.0
    _heap_push(hf, hi, &hsize, sqrt(ddx * ddx + ddy * ddy + ddz * ddz) * res,
               start_flat)

    cdef Py_ssize_t n_ground = _GND_OFF.shape[0]
    cdef Py_ssize_t n_air = _AIR_OFF.shape[0]

    while hsize > 0:
        _heap_pop(hf, hi, &hsize, &f, &u)
        if closed[u]:
            continue
        closed[u] = 1
        if u == goal_flat:
            found = True
            break
        ux = u // (ny * nz)
        uy = (u // nz) % ny
        uz = u % nz
        gu = gcost[u]
        if bimodal and has_ground and gflat[u]:
            for k in range(n_ground):
                dx = _GND_OFF[k, 0]
                dy = _GND_OFF[k, 1]
                vx = ux + dx
                vy = uy + dy
                if vx < 0 or vx >= nx or vy < 0 or vy >= ny:
                    continue
                v = (vx * ny + vy) * nz + uz
                if not gflat[v] or closed[v]:
                    continue
                ok = True
                for gi in range(_GND_GR[k, 0], _GND_GR[k, 1]):
                    a = _GND_G[gi, 0]
                    b = _GND_G[gi, 1]
                    if cflat3[ux + a, uy + b, uz] != FREE:
                        ok = False
                        break
                if not ok:
                    continue
                cand = gu + _GND_W[k] * res
                if cand < gcost[v]:
                    gcost[v] = cand
                    parent[v] = u
                    pground[v] = 1
                    ddx = <double>(vx - gx)
                    ddy = <double>(vy - gy)
                    ddz = <double>(uz - gz)
                    _heap_push(hf, hi, &hsize,
                               cand + sqrt(ddx * ddx + ddy * ddy + ddz * ddz) * res, v)
        for k in range(n_air):
            dx = _AIR_OFF[k, 0]
            dy = _AIR_OFF[k, 1]
            dz = _AIR_OFF[k, 2]
            vx = ux + dx
            vy = uy + dy
            vz = uz + dz
            if vx < 0 or vx >= nx or vy < 0 or vy >= ny or vz < 0 or vz >= nz:
                continue
            v = (vx * ny + vy) * nz + vz
            if cflat3[vx, vy, vz] != FREE or closed[v]:
                continue
            ok = True
            for gi in range(_AIR_GR[k, 0], _AIR_GR[k, 1]):
                a = _AIR_G[gi, 0]
                b = _AIR_G[gi, 1]
                c = _AIR_G[gi, 2]
                wx = ux + a
                wy = uy + b
                wz = uz + c
                if cflat3[wx, wy, wz] != FREE:
                    ok = False
                    break
            if not ok:
                continue
            wcost = _AIR_W[k] * res
            if bimodal:
                wcost = wcost * air_mult
            cand = gu + wcost
            if cand < gcost[v]:
                gcost[v] = cand
                parent[v] = u
                pground[v] = 0
                ddx = <double>(vx - gx)
                ddy = <double>(vy - gy)
                ddz = <double>(vz - gz)
                _heap_push(hf, hi, &hsize,
                           cand + sqrt(ddx * ddx + ddy * ddy + ddz * ddz) * res, v)

    if not found:
        return False, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.uint8)
    path = []
    flags = []
    cdef long node = goal_flat
    while node != start_flat:
        path.append(node)
        flags.append(pground[node])
        node = parent[node]
    path.append(start_flat)
    flags.append(0)
    path.reverse()
    flags.reverse()
    return True, np.array(path, dtype=np.int64), np.array(flags, dtype=np.uint8)
