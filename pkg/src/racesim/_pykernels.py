"""Pure NumPy/Python implementations of the hot kernels.

Each function has a twin in ``_ckernels.pyx`` with identical arithmetic, so the
two backends produce bit-identical results. Trigonometric values are always
computed by the caller and passed in, never evaluated inside a kernel.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"


# ---------------------------------------------------------------------------
# vehicle integration

def _derivative(s, a, delta, p, model):
    # p = (m, I_z, l_f, l_r, F_zf, F_zr, Bf, Cf, muf, Br, Cr, mur, v_lo, v_hi)
    m, I_z, l_f, l_r, F_zf, F_zr, Bf, Cf, muf, Br, Cr, mur, v_lo, v_hi = p
    x, y, psi, v_x, v_y, r = s
    if model == 0:
        w = (v_x - v_lo) / (v_hi - v_lo)
        w = min(max(w, 0.0), 1.0)
    elif model == 1:
        w = 1.0
    else:
        w = 0.0
    if w > 0.0:
        alpha_f = math.atan((v_y + l_f * r) / v_x) - delta
        alpha_r = math.atan((v_y - l_r * r) / v_x)
        F_f = -muf * F_zf * math.sin(Cf * math.atan(Bf * alpha_f))
        F_r = -mur * F_zr * math.sin(Cr * math.atan(Br * alpha_r))
        c, sn = math.cos(psi), math.sin(psi)
        cd, sd = math.cos(delta), math.sin(delta)
        dyn = (
            v_x * c - v_y * sn,
            v_x * sn + v_y * c,
            r,
            a - F_f * sd / m + r * v_y,
            (F_f * cd + F_r) / m - r * v_x,
            (F_f * l_f * cd - F_r * l_r) / I_z,
        )
        if w >= 1.0:
            return dyn
    beta = math.atan(l_r * math.tan(delta) / (l_f + l_r))
    sb = math.sin(beta)
    kin = (
        v_x * math.cos(psi + beta),
        v_x * math.sin(psi + beta),
        v_x * sb / l_r,
        a,
        a * sb,
        a * sb / l_r,
    )
    if w <= 0.0:
        return kin
    return tuple((1.0 - w) * k + w * d for k, d in zip(kin, dyn))


def rk4_step(s, a, delta, p, dt, model):
    """One classical RK4 step; ``model`` is 0 blended, 1 dynamic, 2 kinematic."""
    h = 0.5 * dt
    k1 = _derivative(s, a, delta, p, model)
    k2 = _derivative(tuple(si + h * ki for si, ki in zip(s, k1)), a, delta, p, model)
    k3 = _derivative(tuple(si + h * ki for si, ki in zip(s, k2)), a, delta, p, model)
    k4 = _derivative(tuple(si + dt * ki for si, ki in zip(s, k3)), a, delta, p, model)
    c = dt / 6.0
    return [
        si + c * (q1 + 2.0 * q2 + 2.0 * q3 + q4)
        for si, q1, q2, q3, q4 in zip(s, k1, k2, k3, k4)
    ]


# ---------------------------------------------------------------------------
# ray casting

def raycast(ox: float, oy: float, dir_cos: np.ndarray, dir_sin: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Distance along each unit ray to the nearest segment, ``inf`` when nothing is hit.

    ``segs`` is an (m, 4) array of x1, y1, x2, y2.
    """
    n = dir_cos.shape[0]
    out = np.full(n, np.inf)
    if segs.shape[0] == 0:
        return out
    qx = segs[:, 0][None, :] - ox
    qy = segs[:, 1][None, :] - oy
    sx = (segs[:, 2] - segs[:, 0])[None, :]
    sy = (segs[:, 3] - segs[:, 1])[None, :]
    rx = dir_cos[:, None]
    ry = dir_sin[:, None]
    denom = rx * sy - ry * sx
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t = (qx * sy - qy * sx) / denom
        u = (qx * ry - qy * rx) / denom
    ok = (denom != 0.0) & (t > 0.0) & (u >= 0.0) & (u <= 1.0)
    t = np.where(ok, t, np.inf)
    if t.size:
        out = t.min(axis=1)
    return out


# ---------------------------------------------------------------------------
# spatial hash grid

def grid_cell(points: np.ndarray, cell: float) -> float:
    """``cell`` enlarged if needed to keep the grid under 2**20 cells per axis.

    Larger cells never change a query's result, only its cost.
    """
    if points.shape[0] == 0:
        return cell
    extent = float((points.max(axis=0) - points.min(axis=0)).max())
    return max(cell, extent * 2.0**-20)


def _cell_coords(points: np.ndarray, cell: float) -> np.ndarray:
    # relative to the cloud's minimum so far-off clouds cannot overflow int64
    if points.shape[0] == 0:
        return np.zeros((0, 3), dtype=np.int64)
    return np.floor((points - points.min(axis=0)) / cell).astype(np.int64)


def _cell_map(coords: np.ndarray) -> dict:
    buckets: dict = {}
    for idx, key in enumerate(map(tuple, coords.tolist())):
        buckets.setdefault(key, []).append(idx)
    return {k: np.asarray(v, dtype=np.int64) for k, v in buckets.items()}


# Cells are padded past the query radius so that a pair whose computed distance
# rounds onto the radius can never sit two cells apart; knn's ring test is
# tightened by the same margin.
_PAD = 1.0 + 1e-9

_OFFSETS_1 = [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)]


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    dx = a[:, 0][:, None] - b[:, 0][None, :]
    dy = a[:, 1][:, None] - b[:, 1][None, :]
    dz = a[:, 2][:, None] - b[:, 2][None, :]
    return dx * dx + dy * dy + dz * dz


def count_neighbors(points: np.ndarray, radius: float) -> np.ndarray:
    """Number of other points within ``radius`` (inclusive) of each point."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    counts = np.zeros(points.shape[0], dtype=np.int64)
    if points.shape[0] == 0:
        return counts
    cells = _cell_map(_cell_coords(points, grid_cell(points, radius * _PAD)))
    r2 = radius * radius
    for (cx, cy, cz), members in cells.items():
        cand = [cells[(cx + i, cy + j, cz + k)] for i, j, k in _OFFSETS_1 if (cx + i, cy + j, cz + k) in cells]
        cand = np.concatenate(cand)
        d2 = _sqdist(points[members], points[cand])
        counts[members] = (d2 <= r2).sum(axis=1) - 1
    return counts


def knn(points: np.ndarray, k: int, cell: float) -> tuple[np.ndarray, np.ndarray]:
    """k nearest other points for every point, ordered by (distance, index).

    Returns (indices, distances), each of shape (n, k).
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if n <= k:
        raise ValueError("need more than k points")
    cell = grid_cell(points, cell)
    coords = _cell_coords(points, cell)
    cells = _cell_map(coords)
    span = int((coords.max(axis=0) - coords.min(axis=0)).max()) + 1
    out_i = np.empty((n, k), dtype=np.int64)
    out_d = np.empty((n, k), dtype=np.float64)
    for (cx, cy, cz), members in cells.items():
        ring = 1
        while True:
            rng = range(-ring, ring + 1)
            cand = [
                cells[key]
                for key in ((cx + i, cy + j, cz + l) for i in rng for j in rng for l in rng)
                if key in cells
            ]
            cand = np.concatenate(cand)
            if cand.size > k:
                d = np.sqrt(_sqdist(points[members], points[cand]))
                cand_b = np.broadcast_to(cand, d.shape)
                # exclude self by pushing it past every real candidate
                d = np.where(cand_b == members[:, None], np.inf, d)
                order = np.lexsort((cand_b, d), axis=1)[:, :k]
                dk = np.take_along_axis(d, order, axis=1)
                if ring >= span or np.all(dk[:, -1] * _PAD <= ring * cell):
                    out_d[members] = dk
                    out_i[members] = np.take_along_axis(cand_b, order, axis=1)
                    break
            elif ring >= span:
                raise AssertionError("unreachable: fewer than k candidates in full grid")
            ring += 1
            if (2 * ring + 1) ** 3 > 27 * len(cells):
                # the block outgrew the occupied cells: every point is a candidate
                d = np.sqrt(_sqdist(points[members], points))
                cand_b = np.broadcast_to(np.arange(n), d.shape)
                d = np.where(cand_b == members[:, None], np.inf, d)
                order = np.lexsort((cand_b, d), axis=1)[:, :k]
                out_d[members] = np.take_along_axis(d, order, axis=1)
                out_i[members] = np.take_along_axis(cand_b, order, axis=1)
                break
    return out_i, out_d


def poisson_mask(points: np.ndarray, radius: float) -> np.ndarray:
    """Greedy sample elimination in input order; keep a point iff no kept point is closer than ``radius``."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    keep = np.zeros(n, dtype=bool)
    coords = _cell_coords(points, grid_cell(points, radius * _PAD)).tolist()
    kept_cells: dict = {}
    r2 = radius * radius
    pts = points.tolist()
    for idx in range(n):
        cx, cy, cz = coords[idx]
        px, py, pz = pts[idx]
        ok = True
        for i, j, l in _OFFSETS_1:
            bucket = kept_cells.get((cx + i, cy + j, cz + l))
            if bucket is None:
                continue
            for q in bucket:
                qx, qy, qz = pts[q]
                dx = px - qx
                dy = py - qy
                dz = pz - qz
                if dx * dx + dy * dy + dz * dz < r2:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            keep[idx] = True
            kept_cells.setdefault((cx, cy, cz), []).append(idx)
    return keep


# ---------------------------------------------------------------------------
# correlative scan matching

def scan_scores(
    grid: np.ndarray,
    origin_x: float,
    origin_y: float,
    resolution: float,
    bx: np.ndarray,
    by: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    cos_h: np.ndarray,
    sin_h: np.ndarray,
) -> np.ndarray:
    """Integer score for every (x, y, heading) candidate.

    ``grid`` is a quantized (rows, cols) uint16 occupancy image with values at
    cell centers; ``bx, by`` are scan endpoints in the vehicle frame. Each
    endpoint contributes the bilinear interpolation of the grid with 8-bit
    fixed-point weights, so scores are exact integers scaled by 2**16. Cells
    outside the grid read as 0.
    """
    rows, cols = grid.shape
    out = np.zeros((xs.shape[0], ys.shape[0], cos_h.shape[0]), dtype=np.int64)
    # zero border so out-of-range neighbours read 0 without branching
    padded = np.zeros((rows + 2, cols + 2), dtype=np.int64)
    padded[1:-1, 1:-1] = grid
    for h in range(cos_h.shape[0]):
        c = cos_h[h]
        s = sin_h[h]
        rx = c * bx - s * by
        ry = s * bx + c * by
        fr = ((ys[:, None] + ry[None, :]) - origin_y) / resolution - 0.5
        r0 = np.floor(fr)
        wy = np.floor((fr - r0) * 256.0).astype(np.int64)
        row_ok = (r0 >= -1) & (r0 < rows)
        r0i = np.where(row_ok, r0, -1).astype(np.int64) + 1
        for ix in range(xs.shape[0]):
            fc = ((xs[ix] + rx) - origin_x) / resolution - 0.5
            c0 = np.floor(fc)
            wx = np.floor((fc - c0) * 256.0).astype(np.int64)[None, :]
            col_ok = (c0 >= -1) & (c0 < cols)
            c0i = (np.where(col_ok, c0, -1).astype(np.int64) + 1)[None, :]
            bot = (256 - wx) * padded[r0i, c0i] + wx * padded[r0i, c0i + 1]
            top = (256 - wx) * padded[r0i + 1, c0i] + wx * padded[r0i + 1, c0i + 1]
            val = (256 - wy) * bot + wy * top
            ok = row_ok & col_ok[None, :]
            out[ix, :, h] = np.where(ok, val, 0).sum(axis=1)
    return out
