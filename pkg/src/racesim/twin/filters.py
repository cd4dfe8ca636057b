"""Cloud-to-cloud stages: outlier rejection, extrusion, Poisson-disk thinning, normals."""

from __future__ import annotations

import numpy as np

from racesim import kernels
from racesim.twin.cloud import PointCloud


def sphere_outlier_filter(pc: PointCloud, r: float, m_min: int) -> PointCloud:
    """Keep points with at least ``m_min`` other points within distance ``r``."""
    if not r > 0:
        raise ValueError("r must be positive")
    if m_min < 1:
        raise ValueError("m_min must be at least 1")
    counts = kernels.count_neighbors(pc.points, r)
    return PointCloud(pc.points[counts >= m_min])


def _knn_cell(points: np.ndarray, k: int) -> float:
    # cell edge giving roughly k points per cell for a uniform cloud of the
    # cloud's effective dimension; any positive value is correct, this one is fast
    extent = points.max(axis=0) - points.min(axis=0)
    span = extent[extent > 1e-6 * extent.max()]
    if span.size == 0 or span.max() == 0.0:
        return 1.0
    volume = float(np.prod(span))
    return max((volume * k / len(points)) ** (1.0 / span.size), float(span.max()) * 1e-3)


def knn_mean_distances(points: np.ndarray, k: int) -> np.ndarray:
    _, dist = kernels.knn(points, k, _knn_cell(points, k))
    return dist.mean(axis=1)


def statistical_outlier_filter(pc: PointCloud, k: int, std_ratio: float) -> PointCloud:
    """Drop points whose mean k-NN distance exceeds the global mean by ``std_ratio`` deviations.

    The threshold is computed once over all per-point means.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(pc) <= k:
        raise ValueError(f"statistical filter needs more than k={k} points, got {len(pc)}")
    means = knn_mean_distances(pc.points, k)
    threshold = means.mean() + std_ratio * means.std()
    return PointCloud(pc.points[means <= threshold])


def extrude_2d(pc: PointCloud, z_min: float = 0.0, z_max: float = 0.5, layers: int = 5) -> PointCloud:
    """Replicate the cloud's (x, y) at ``layers`` evenly spaced heights, layer by layer."""
    if layers < 1:
        raise ValueError("layers must be at least 1")
    if z_min > z_max:
        raise ValueError("z_min must not exceed z_max")
    zs = [z_min] if layers == 1 else np.linspace(z_min, z_max, layers)
    xy = pc.points[:, :2]
    out = [np.column_stack([xy, np.full(len(xy), z)]) for z in zs]
    return PointCloud(np.vstack(out) if out else np.zeros((0, 3)))


def poisson_disk_sample(pc: PointCloud, radius: float) -> PointCloud:
    """Greedy sample elimination in input order.

    The result has pairwise distances >= ``radius`` and is maximal: every
    dropped point lies within ``radius`` of a kept one.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    return PointCloud(pc.points[kernels.poisson_mask(pc.points, radius)])


def estimate_normals(pc: PointCloud, k: int = 10) -> np.ndarray:
    """Unit normals from k-NN PCA, oriented away from the cloud's xy centroid.

    Normals with no horizontal component relative to the centroid direction
    (e.g. a flat floor) are oriented towards +z.
    """
    pts = pc.points
    n = len(pts)
    if n < 3:
        raise ValueError("need at least 3 points for normals")
    k = min(k, n - 1)
    idx, _ = kernels.knn(pts, k, _knn_cell(pts, k))
    nbh = np.concatenate([pts[:, None, :], pts[idx]], axis=1)
    centered = nbh - nbh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    radial = pts[:, :2] - pts[:, :2].mean(axis=0)
    dot = np.einsum("ni,ni->n", normals[:, :2], radial)
    tol = 1e-6 * np.linalg.norm(radial, axis=1)
    flip = np.where(np.abs(dot) > tol, dot < 0, normals[:, 2] < 0)
    normals[flip] *= -1.0
    return normals / np.linalg.norm(normals, axis=1, keepdims=True)
