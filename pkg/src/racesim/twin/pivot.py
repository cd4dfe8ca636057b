"""Ball-pivoting surface reconstruction.

A ball of radius rho rests on three points to form a seed triangle, then
rolls around each boundary edge of the growing mesh until it touches a new
point. Radii are processed smallest first; edges the ball could not pivot
around are retried with each larger radius.

Triangles are kept with counter-clockwise winding about their outward normal,
so a directed edge (a, b) belongs to at most one face.
"""

from __future__ import annotations

import logging
import math
from collections import deque

import numpy as np

from racesim.twin.cloud import Mesh, PointCloud
from racesim.twin.filters import estimate_normals

log = logging.getLogger(__name__)

_ANGLE_EPS = 1e-9
_EMPTY_TOL = 1e-9
_MIN_W2 = 4e-24  # |cross|^2 for a triangle of area 1e-12


class _PointIndex:
    """Uniform hash grid for radius queries around arbitrary centers."""

    def __init__(self, points: np.ndarray, cell: float):
        self.points = points
        self.cell = cell
        coords = np.floor(points / cell).astype(np.int64)
        buckets: dict = {}
        for i, key in enumerate(map(tuple, coords.tolist())):
            buckets.setdefault(key, []).append(i)
        self.buckets = {k: np.array(v, dtype=np.int64) for k, v in buckets.items()}
        self._offsets = [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)]

    def query(self, center: np.ndarray, radius: float) -> np.ndarray:
        """Indices within ``radius`` of ``center``; radius must not exceed the cell size."""
        cx, cy, cz = (int(v) for v in np.floor(center / self.cell))
        parts = [
            self.buckets[key]
            for key in ((cx + i, cy + j, cz + k) for i, j, k in self._offsets)
            if key in self.buckets
        ]
        if not parts:
            return np.zeros(0, dtype=np.int64)
        cand = np.concatenate(parts)
        d = self.points[cand] - center
        return cand[np.einsum("ij,ij->i", d, d) <= radius * radius]


def _ball_centers(a: np.ndarray, b: np.ndarray, c: np.ndarray, rho: float):
    """Circumscribed-ball centers above triangles (a, b, c), broadcasting over rows.

    Returns (centers, unit normals, ok) where ``ok`` flags non-degenerate
    triangles whose circumradius does not exceed ``rho``. Centers lie on the
    side of the right-handed normal of (a, b, c).
    """
    ab = b - a
    ac = c - a
    w = np.cross(ab, ac)
    w2 = np.einsum("...i,...i->...", w, w)
    ok = w2 > _MIN_W2
    safe_w2 = np.where(ok, w2, 1.0)
    num = np.cross(w, ab) * np.einsum("...i,...i->...", ac, ac)[..., None] + np.cross(ac, w) * np.einsum(
        "...i,...i->...", ab, ab
    )[..., None]
    cc = a + num / (2.0 * safe_w2[..., None])
    r2 = np.einsum("...i,...i->...", cc - a, cc - a)
    h2 = rho * rho - r2
    ok &= h2 >= 0.0
    normal = w / np.sqrt(safe_w2)[..., None]
    centers = cc + np.sqrt(np.maximum(h2, 0.0))[..., None] * normal
    return centers, normal, ok


class _Pivoter:
    def __init__(self, points: np.ndarray, normals: np.ndarray, max_radius: float):
        self.p = points
        self.nrm = normals
        self.index = _PointIndex(points, 2.0 * max_radius)
        self.used = np.zeros(len(points), dtype=bool)
        self.faces: list[tuple[int, int, int]] = []
        self.edges: set[tuple[int, int]] = set()  # directed edges of existing faces
        self.front: dict[tuple[int, int], int] = {}  # active edge -> opposite vertex
        self.boundary: dict[tuple[int, int], int] = {}
        self.front_degree = np.zeros(len(points), dtype=np.int64)
        self.queue: deque = deque()

    # -- bookkeeping ---------------------------------------------------------

    def _add_face(self, a: int, b: int, c: int) -> None:
        self.faces.append((a, b, c))
        self.used[[a, b, c]] = True
        for p, q, r in ((a, b, c), (b, c, a), (c, a, b)):
            self.edges.add((p, q))
            rev = (q, p)
            if rev in self.front or rev in self.boundary:
                self.front.pop(rev, None)
                self.boundary.pop(rev, None)
                self.front_degree[[p, q]] -= 1
            else:
                self.front[(p, q)] = r
                self.queue.append((p, q))
                self.front_degree[[p, q]] += 1

    def _ball_is_empty(self, center: np.ndarray, rho: float, tri: tuple[int, int, int]) -> bool:
        inside = self.index.query(center, rho - _EMPTY_TOL)
        return all(i in tri for i in inside.tolist())

    # -- seeding -------------------------------------------------------------

    def _try_seed(self, v: int, rho: float) -> bool:
        nb = self.index.query(self.p[v], 2.0 * rho)
        nb = nb[(nb != v) & ~self.used[nb]]
        if len(nb) < 2:
            return False
        d = np.linalg.norm(self.p[nb] - self.p[v], axis=1)
        nb = nb[np.lexsort((nb, d))]
        ia, ib = np.triu_indices(len(nb), k=1)
        a_idx, b_idx = nb[ia], nb[ib]
        nsum = self.nrm[v] + self.nrm[a_idx] + self.nrm[b_idx]
        pv = np.broadcast_to(self.p[v], (len(a_idx), 3))
        cen, normal, ok = _ball_centers(pv, self.p[a_idx], self.p[b_idx], rho)
        # flip winding where the right-handed normal disagrees with the point normals
        flip = np.einsum("ij,ij->i", normal, nsum) < 0
        cen_f, _, ok_f = _ball_centers(pv, self.p[b_idx], self.p[a_idx], rho)
        cen = np.where(flip[:, None], cen_f, cen)
        ok = np.where(flip, ok_f, ok)
        for t in np.flatnonzero(ok).tolist():
            a, b = int(a_idx[t]), int(b_idx[t])
            tri = (v, b, a) if flip[t] else (v, a, b)
            if self._ball_is_empty(cen[t], rho, tri):
                self._add_face(*tri)
                return True
        return False

    # -- pivoting ------------------------------------------------------------

    def _pivot(self, i: int, j: int, k: int, rho: float) -> int | None:
        p = self.p
        c_old, _, ok_old = _ball_centers(p[i], p[j], p[k], rho)
        if not ok_old:
            return None
        mid = 0.5 * (p[i] + p[j])
        cand = self.index.query(mid, 2.0 * rho)
        cand = cand[(cand != i) & (cand != j) & (cand != k)]
        if len(cand) == 0:
            return None
        n = len(cand)
        cen, normal, ok = _ball_centers(
            np.broadcast_to(p[j], (n, 3)), np.broadcast_to(p[i], (n, 3)), p[cand], rho
        )
        nsum = self.nrm[i] + self.nrm[j] + self.nrm[cand]
        ok &= np.einsum("ij,ij->i", normal, nsum) > 0
        if not ok.any():
            return None
        axis = (p[j] - p[i]) / np.linalg.norm(p[j] - p[i])
        u = c_old - mid
        v = cen - mid
        theta = np.arctan2(np.cross(u, v) @ axis, v @ u)
        theta = np.where(theta < 0, theta + 2 * math.pi, theta)
        theta = np.where(theta > 2 * math.pi - _ANGLE_EPS, 0.0, theta)
        theta = np.where(theta < _ANGLE_EPS, 0.0, theta)
        order = np.lexsort((cand, theta))
        for t in order.tolist():
            if not ok[t]:
                continue
            x = int(cand[t])
            if self.used[x] and self.front_degree[x] == 0:
                continue  # interior vertex
            if (i, x) in self.edges or (x, j) in self.edges or (j, i) in self.edges:
                continue
            if self._ball_is_empty(cen[t], rho, (i, j, x)):
                return x
        return None

    def run(self, rho: float) -> None:
        # edges that failed at a smaller radius get another chance
        for edge, opp in sorted(self.boundary.items()):
            self.front[edge] = opp
            self.queue.append(edge)
        self.boundary.clear()
        self._expand(rho)
        for v in range(len(self.p)):
            if self.used[v]:
                continue
            if self._try_seed(v, rho):
                self._expand(rho)

    def _expand(self, rho: float) -> None:
        while self.queue:
            edge = self.queue.popleft()
            k = self.front.get(edge)
            if k is None:
                continue
            i, j = edge
            x = self._pivot(i, j, k, rho)
            if x is None:
                del self.front[edge]
                self.boundary[edge] = k
            else:
                self._add_face(j, i, x)


def ball_pivot_mesh(
    pc: PointCloud,
    radii,
    normals: np.ndarray | None = None,
    k_normals: int = 10,
) -> Mesh:
    """Triangulate ``pc`` by ball pivoting over ascending ``radii``.

    Normals are estimated by k-NN PCA when not supplied. The returned mesh
    keeps every input point as a vertex; unreferenced points are allowed.
    """
    radii = [float(r) for r in radii]
    if len(pc) < 3:
        raise ValueError("ball pivoting needs at least 3 points")
    if not radii or any(r <= 0 for r in radii) or radii != sorted(radii):
        raise ValueError("radii must be a non-empty ascending list of positive values")
    if normals is None:
        normals = estimate_normals(pc, k_normals)
    piv = _Pivoter(pc.points, np.asarray(normals, dtype=np.float64), radii[-1])
    for rho in radii:
        piv.run(rho)
    if not piv.faces:
        log.warning("ball pivoting found no seed triangle; radius %.4g may be too small", radii[-1])
    return Mesh(pc.points.copy(), np.array(piv.faces, dtype=np.int64).reshape(-1, 3))
