# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``.

Arithmetic is written in the same order as the NumPy versions and the
extension is built with FP contraction disabled, so both backends agree bit
for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport atan, sin, cos, tan, floor, sqrt, INFINITY

from racesim._pykernels import grid_cell

cnp.import_array()

BACKEND = "cython"


# ---------------------------------------------------------------------------
# vehicle integration

cdef void _derivative(double* s, double a, double delta, double* p, int model, double* out) noexcept nogil:
    cdef double m = p[0], I_z = p[1], l_f = p[2], l_r = p[3], F_zf = p[4], F_zr = p[5]
    cdef double Bf = p[6], Cf = p[7], muf = p[8], Br = p[9], Cr = p[10], mur = p[11]
    cdef double v_lo = p[12], v_hi = p[13]
    cdef double psi = s[2], v_x = s[3], v_y = s[4], r = s[5]
    cdef double w, alpha_f, alpha_r, F_f, F_r, c, sn, cd, sd, beta, sb
    cdef double dyn[6]
    cdef double kin[6]
    cdef int i
    if model == 0:
        w = (v_x - v_lo) / (v_hi - v_lo)
        if w < 0.0:
            w = 0.0
        if w > 1.0:
            w = 1.0
    elif model == 1:
        w = 1.0
    else:
        w = 0.0
    if w > 0.0:
        alpha_f = atan((v_y + l_f * r) / v_x) - delta
        alpha_r = atan((v_y - l_r * r) / v_x)
        F_f = -muf * F_zf * sin(Cf * atan(Bf * alpha_f))
        F_r = -mur * F_zr * sin(Cr * atan(Br * alpha_r))
        c = cos(psi)
        sn = sin(psi)
        cd = cos(delta)
        sd = sin(delta)
        dyn[0] = v_x * c - v_y * sn
        dyn[1] = v_x * sn + v_y * c
        dyn[2] = r
        dyn[3] = a - F_f * sd / m + r * v_y
        dyn[4] = (F_f * cd + F_r) / m - r * v_x
        dyn[5] = (F_f * l_f * cd - F_r * l_r) / I_z
        if w >= 1.0:
            for i in range(6):
                out[i] = dyn[i]
            return
    beta = atan(l_r * tan(delta) / (l_f + l_r))
    sb = sin(beta)
    kin[0] = v_x * cos(psi + beta)
    kin[1] = v_x * sin(psi + beta)
    kin[2] = v_x * sb / l_r
    kin[3] = a
    kin[4] = a * sb
    kin[5] = a * sb / l_r
    if w <= 0.0:
        for i in range(6):
            out[i] = kin[i]
        return
    for i in range(6):
        out[i] = (1.0 - w) * kin[i] + w * dyn[i]


def rk4_step(s, double a, double delta, p, double dt, int model):
    cdef double st[6]
    cdef double pp[14]
    cdef double k1[6]
    cdef double k2[6]
    cdef double k3[6]
    cdef double k4[6]
    cdef double tmp[6]
    cdef int i
    cdef double h = 0.5 * dt
    cdef double c = dt / 6.0
    for i in range(6):
        st[i] = s[i]
    for i in range(14):
        pp[i] = p[i]
    _derivative(st, a, delta, pp, model, k1)
    for i in range(6):
        tmp[i] = st[i] + h * k1[i]
    _derivative(tmp, a, delta, pp, model, k2)
    for i in range(6):
        tmp[i] = st[i] + h * k2[i]
    _derivative(tmp, a, delta, pp, model, k3)
    for i in range(6):
        tmp[i] = st[i] + dt * k3[i]
    _derivative(tmp, a, delta, pp, model, k4)
    return [st[i] + c * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(6)]


# ---------------------------------------------------------------------------
# ray casting

def raycast(double ox, double oy, double[::1] dir_cos, double[::1] dir_sin, segs):
    cdef double[:, ::1] sg = np.ascontiguousarray(segs, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = dir_cos.shape[0]
    cdef Py_ssize_t m = sg.shape[0]
    out_arr = np.full(n, np.inf)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double rx, ry, qx, qy, sx, sy, denom, t, u, best
    with nogil:
        for i in range(n):
            rx = dir_cos[i]
            ry = dir_sin[i]
            best = INFINITY
            for j in range(m):
                qx = sg[j, 0] - ox
                qy = sg[j, 1] - oy
                sx = sg[j, 2] - sg[j, 0]
                sy = sg[j, 3] - sg[j, 1]
                denom = rx * sy - ry * sx
                if denom == 0.0:
                    continue
                t = (qx * sy - qy * sx) / denom
                u = (qx * ry - qy * rx) / denom
                if t > 0.0 and u >= 0.0 and u <= 1.0 and t < best:
                    best = t
            out[i] = best
    return out_arr


# ---------------------------------------------------------------------------
# spatial hash grid (sorted-key layout, binary search lookup)

cdef struct Grid:
    long long* keys
    long long* starts
    long long* order
    Py_ssize_t ncells
    long long nx, ny, nz


cdef inline Py_ssize_t _find(Grid* g, long long key) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = g.ncells, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if g.keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    if lo < g.ncells and g.keys[lo] == key:
        return lo
    return -1


# see _pykernels._PAD
cdef double _PAD = 1.0 + 1e-9


def _layout(double[:, ::1] pts, double cell):
    arr = np.asarray(pts)
    if arr.shape[0]:
        coords = np.floor((arr - arr.min(axis=0)) / cell).astype(np.int64)
    else:
        coords = np.zeros((0, 3), dtype=np.int64)
    dims = (coords.max(axis=0) + 1) if coords.shape[0] else np.ones(3, dtype=np.int64)
    keys = (coords[:, 0] * dims[1] + coords[:, 1]) * dims[2] + coords[:, 2]
    order = np.argsort(keys, kind="stable").astype(np.int64)
    sk = keys[order]
    ukeys, starts = np.unique(sk, return_index=True)
    starts = np.append(starts, sk.shape[0]).astype(np.int64)
    return (
        np.ascontiguousarray(coords),
        np.ascontiguousarray(ukeys.astype(np.int64)),
        np.ascontiguousarray(starts),
        np.ascontiguousarray(order),
        dims,
    )


def count_neighbors(points, double radius):
    cdef double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t n = pts.shape[0]
    counts_arr = np.zeros(n, dtype=np.int64)
    if n == 0:
        return counts_arr
    coords_a, keys_a, starts_a, order_a, dims = _layout(pts, grid_cell(np.asarray(pts), radius * _PAD))
    cdef long long[:, ::1] coords = coords_a
    cdef long long[::1] keys = keys_a
    cdef long long[::1] starts = starts_a
    cdef long long[::1] order = order_a
    cdef long long[::1] counts = counts_arr
    cdef Grid g
    g.keys = &keys[0]
    g.starts = &starts[0]
    g.order = &order[0]
    g.ncells = keys.shape[0]
    g.nx = dims[0]
    g.ny = dims[1]
    g.nz = dims[2]
    cdef double r2 = radius * radius
    cdef Py_ssize_t i, c, q
    cdef long long di, dj, dk, cx, cy, cz, cnt
    cdef double dx, dy, dz
    with nogil:
        for i in range(n):
            cnt = 0
            for di in range(-1, 2):
                cx = coords[i, 0] + di
                if cx < 0 or cx >= g.nx:
                    continue
                for dj in range(-1, 2):
                    cy = coords[i, 1] + dj
                    if cy < 0 or cy >= g.ny:
                        continue
                    for dk in range(-1, 2):
                        cz = coords[i, 2] + dk
                        if cz < 0 or cz >= g.nz:
                            continue
                        c = _find(&g, (cx * g.ny + cy) * g.nz + cz)
                        if c < 0:
                            continue
                        for q in range(g.starts[c], g.starts[c + 1]):
                            dx = pts[i, 0] - pts[g.order[q], 0]
                            dy = pts[i, 1] - pts[g.order[q], 1]
                            dz = pts[i, 2] - pts[g.order[q], 2]
                            if dx * dx + dy * dy + dz * dz <= r2:
                                cnt += 1
            counts[i] = cnt - 1
    return counts_arr


cdef inline bint _before(double da, long long ia, double db, long long ib) noexcept nogil:
    return da < db or (da == db and ia < ib)


def knn(points, int k, double cell):
    cdef double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t n = pts.shape[0]
    if n <= k:
        raise ValueError("need more than k points")
    cell = grid_cell(np.asarray(pts), cell)
    coords_a, keys_a, starts_a, order_a, dims = _layout(pts, cell)
    cdef long long[:, ::1] coords = coords_a
    cdef long long[::1] keys = keys_a
    cdef long long[::1] starts = starts_a
    cdef long long[::1] order = order_a
    cdef Grid g
    g.keys = &keys[0]
    g.starts = &starts[0]
    g.order = &order[0]
    g.ncells = keys.shape[0]
    g.nx = dims[0]
    g.ny = dims[1]
    g.nz = dims[2]
    cdef long long span = max(dims[0], dims[1], dims[2])
    out_i_arr = np.empty((n, k), dtype=np.int64)
    out_d_arr = np.empty((n, k), dtype=np.float64)
    cdef long long[:, ::1] out_i = out_i_arr
    cdef double[:, ::1] out_d = out_d_arr
    best_d_arr = np.empty(k, dtype=np.float64)
    best_i_arr = np.empty(k, dtype=np.int64)
    cdef double[::1] best_d = best_d_arr
    cdef long long[::1] best_i = best_i_arr
    cdef Py_ssize_t i, c, q, j, found
    cdef long long ring, di, dj, dk, cx, cy, cz, idx
    cdef double dx, dy, dz, d
    with nogil:
        for i in range(n):
            ring = 1
            while True:
                found = 0
                for di in range(-ring, ring + 1):
                    cx = coords[i, 0] + di
                    if cx < 0 or cx >= g.nx:
                        continue
                    for dj in range(-ring, ring + 1):
                        cy = coords[i, 1] + dj
                        if cy < 0 or cy >= g.ny:
                            continue
                        for dk in range(-ring, ring + 1):
                            cz = coords[i, 2] + dk
                            if cz < 0 or cz >= g.nz:
                                continue
                            c = _find(&g, (cx * g.ny + cy) * g.nz + cz)
                            if c < 0:
                                continue
                            for q in range(g.starts[c], g.starts[c + 1]):
                                idx = g.order[q]
                                if idx == i:
                                    continue
                                dx = pts[i, 0] - pts[idx, 0]
                                dy = pts[i, 1] - pts[idx, 1]
                                dz = pts[i, 2] - pts[idx, 2]
                                d = sqrt(dx * dx + dy * dy + dz * dz)
                                if found < k:
                                    j = found
                                    found += 1
                                elif _before(d, idx, best_d[k - 1], best_i[k - 1]):
                                    j = k - 1
                                else:
                                    continue
                                while j > 0 and _before(d, idx, best_d[j - 1], best_i[j - 1]):
                                    best_d[j] = best_d[j - 1]
                                    best_i[j] = best_i[j - 1]
                                    j -= 1
                                best_d[j] = d
                                best_i[j] = idx
                if found == k and (ring >= span or best_d[k - 1] * _PAD <= ring * cell):
                    break
                ring += 1
                if (2 * ring + 1) * (2 * ring + 1) * (2 * ring + 1) > 27 * g.ncells:
                    # the block outgrew the occupied cells: scan every point
                    found = 0
                    for idx in range(n):
                        if idx == i:
                            continue
                        dx = pts[i, 0] - pts[idx, 0]
                        dy = pts[i, 1] - pts[idx, 1]
                        dz = pts[i, 2] - pts[idx, 2]
                        d = sqrt(dx * dx + dy * dy + dz * dz)
                        if found < k:
                            j = found
                            found += 1
                        elif _before(d, idx, best_d[k - 1], best_i[k - 1]):
                            j = k - 1
                        else:
                            continue
                        while j > 0 and _before(d, idx, best_d[j - 1], best_i[j - 1]):
                            best_d[j] = best_d[j - 1]
                            best_i[j] = best_i[j - 1]
                            j -= 1
                        best_d[j] = d
                        best_i[j] = idx
                    break
            for j in range(k):
                out_d[i, j] = best_d[j]
                out_i[i, j] = best_i[j]
    return out_i_arr, out_d_arr


def poisson_mask(points, double radius):
    cdef double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t n = pts.shape[0]
    keep_arr = np.zeros(n, dtype=bool)
    if n == 0:
        return keep_arr
    coords_a, keys_a, starts_a, order_a, dims = _layout(pts, grid_cell(np.asarray(pts), radius * _PAD))
    cdef long long[:, ::1] coords = coords_a
    cdef long long[::1] keys = keys_a
    cdef long long[::1] starts = starts_a
    cdef long long[::1] order = order_a
    cdef Grid g
    g.keys = &keys[0]
    g.starts = &starts[0]
    g.order = &order[0]
    g.ncells = keys.shape[0]
    g.nx = dims[0]
    g.ny = dims[1]
    g.nz = dims[2]
    # per-cell singly linked lists of kept points
    head_arr = np.full(g.ncells, -1, dtype=np.int64)
    nxt_arr = np.full(n, -1, dtype=np.int64)
    cdef long long[::1] head = head_arr
    cdef long long[::1] nxt = nxt_arr
    cdef cnp.uint8_t[::1] keep = keep_arr.view(np.uint8)
    cdef double r2 = radius * radius
    cdef Py_ssize_t i, c, own
    cdef long long di, dj, dk, cx, cy, cz, q
    cdef double dx, dy, dz
    cdef bint ok
    with nogil:
        for i in range(n):
            ok = True
            for di in range(-1, 2):
                if not ok:
                    break
                cx = coords[i, 0] + di
                if cx < 0 or cx >= g.nx:
                    continue
                for dj in range(-1, 2):
                    if not ok:
                        break
                    cy = coords[i, 1] + dj
                    if cy < 0 or cy >= g.ny:
                        continue
                    for dk in range(-1, 2):
                        cz = coords[i, 2] + dk
                        if cz < 0 or cz >= g.nz:
                            continue
                        c = _find(&g, (cx * g.ny + cy) * g.nz + cz)
                        if c < 0:
                            continue
                        q = head[c]
                        while q >= 0:
                            dx = pts[i, 0] - pts[q, 0]
                            dy = pts[i, 1] - pts[q, 1]
                            dz = pts[i, 2] - pts[q, 2]
                            if dx * dx + dy * dy + dz * dz < r2:
                                ok = False
                                break
                            q = nxt[q]
                        if not ok:
                            break
            if ok:
                keep[i] = 1
                own = _find(&g, (coords[i, 0] * g.ny + coords[i, 1]) * g.nz + coords[i, 2])
                nxt[i] = head[own]
                head[own] = i
    return keep_arr


# ---------------------------------------------------------------------------
# correlative scan matching

def scan_scores(grid, double origin_x, double origin_y, double resolution,
                double[::1] bx, double[::1] by, double[::1] xs, double[::1] ys,
                double[::1] cos_h, double[::1] sin_h):
    cdef cnp.uint16_t[:, ::1] gr = np.ascontiguousarray(grid, dtype=np.uint16)
    cdef Py_ssize_t rows = gr.shape[0], cols = gr.shape[1]
    cdef Py_ssize_t nx = xs.shape[0], ny = ys.shape[0], nh = cos_h.shape[0], nb = bx.shape[0]
    out_arr = np.zeros((nx, ny, nh), dtype=np.int64)
    cdef long long[:, :, ::1] out = out_arr
    rx_arr = np.empty(nb)
    ry_arr = np.empty(nb)
    cdef double[::1] rx = rx_arr
    cdef double[::1] ry = ry_arr
    col_arr = np.empty(nb, dtype=np.int64)
    wx_arr = np.empty(nb, dtype=np.int64)
    cdef long long[::1] col = col_arr
    cdef long long[::1] wx = wx_arr
    cdef Py_ssize_t h, ix, iy, b
    cdef double c, s, fc, fr, f0
    cdef long long total, r0, wy, c0, top, bot
    with nogil:
        for h in range(nh):
            c = cos_h[h]
            s = sin_h[h]
            for b in range(nb):
                rx[b] = c * bx[b] - s * by[b]
                ry[b] = s * bx[b] + c * by[b]
            for ix in range(nx):
                for b in range(nb):
                    fc = ((xs[ix] + rx[b]) - origin_x) / resolution - 0.5
                    f0 = floor(fc)
                    if f0 >= -1 and f0 < cols:
                        col[b] = <long long>f0
                        wx[b] = <long long>floor((fc - f0) * 256.0)
                    else:
                        col[b] = -2
                        wx[b] = 0
                for iy in range(ny):
                    total = 0
                    for b in range(nb):
                        c0 = col[b]
                        if c0 < -1:
                            continue
                        fr = ((ys[iy] + ry[b]) - origin_y) / resolution - 0.5
                        f0 = floor(fr)
                        if f0 < -1 or f0 >= rows:
                            continue
                        r0 = <long long>f0
                        wy = <long long>floor((fr - f0) * 256.0)
                        bot = 0
                        top = 0
                        if r0 >= 0:
                            if c0 >= 0:
                                bot += (256 - wx[b]) * gr[r0, c0]
                            if c0 + 1 < cols:
                                bot += wx[b] * gr[r0, c0 + 1]
                        if r0 + 1 < rows:
                            if c0 >= 0:
                                top += (256 - wx[b]) * gr[r0 + 1, c0]
                            if c0 + 1 < cols:
                                top += wx[b] * gr[r0 + 1, c0 + 1]
                        total += (256 - wy) * bot + wy * top
                    out[ix, iy, h] = total
    return out_arr
