"""Synthetic desk-scale scenarios: a stadium-shaped track and scan-built point clouds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from racesim.geometry import TrackMap2D
from racesim.sensors import LidarSpec, raycast_scan, scan_endpoints
from racesim.twin.cloud import PointCloud


def stadium(straight: float, radius: float, spacing: float) -> np.ndarray:
    """Closed counter-clockwise stadium curve starting at the middle of the lower straight.

    Returns (n, 3) rows of x, y, heading; the first point is not repeated.
    """
    half = straight / 2
    arc_len = math.pi * radius
    total = 2 * straight + 2 * arc_len
    n = max(int(round(total / spacing)), 8)
    out = []
    for s in np.arange(n) * (total / n):
        if s < half:
            out.append((s, -radius, 0.0))
            continue
        s -= half
        if s < arc_len:
            a = -math.pi / 2 + s / radius
            out.append((half + radius * math.cos(a), radius * math.sin(a), a + math.pi / 2))
            continue
        s -= arc_len
        if s < straight:
            out.append((half - s, radius, math.pi))
            continue
        s -= straight
        if s < arc_len:
            a = math.pi / 2 + s / radius
            out.append((-half + radius * math.cos(a), radius * math.sin(a), a + math.pi / 2))
            continue
        s -= arc_len
        out.append((-half + s, -radius, 0.0))
    pts = np.array(out)
    pts[:, 2] = np.arctan2(np.sin(pts[:, 2]), np.cos(pts[:, 2]))
    return pts


@dataclass
class OvalScenario:
    track: TrackMap2D
    centerline: np.ndarray  # (n, 3) x, y, heading
    straight: float
    radius: float
    width: float

    @property
    def lap_length(self) -> float:
        return 2 * self.straight + 2 * math.pi * self.radius

    def start_pose(self, behind: float = 0.5) -> tuple[float, float, float]:
        return (-behind, -self.radius, 0.0)


def oval(straight: float = 10.0, radius: float = 4.0, width: float = 2.0, wall_spacing: float = 0.25) -> OvalScenario:
    """Stadium track with walls ``width/2`` either side of the centerline."""
    inner = stadium(straight, radius - width / 2, wall_spacing)[:, :2]
    outer = stadium(straight, radius + width / 2, wall_spacing)[:, :2]
    track = TrackMap2D.from_polylines([inner, outer], closed=True)
    center = stadium(straight, radius, 0.1)
    return OvalScenario(track, center, straight, radius, width)


def scan_cloud(
    track: TrackMap2D,
    poses,
    spec: LidarSpec,
    rng: np.random.Generator,
    n_strays: int = 0,
) -> PointCloud:
    """Accumulate noisy scan endpoints from known poses into a flat world-frame cloud.

    ``n_strays`` uniformly scattered spurious returns are appended to exercise
    outlier rejection.
    """
    chunks = []
    for tick, pose in enumerate(poses):
        scan = raycast_scan(tuple(pose), track, [], spec, rng, tick)
        chunks.append(scan_endpoints(scan, tuple(pose), spec))
    xy = np.vstack(chunks)
    if n_strays:
        xmin, ymin, xmax, ymax = track.bounds
        strays = rng.uniform((xmin - 1, ymin - 1), (xmax + 1, ymax + 1), size=(n_strays, 2))
        xy = np.vstack([xy, strays])
    return PointCloud(np.column_stack([xy, np.zeros(len(xy))]))


@dataclass
class PolygonScenario:
    track: TrackMap2D
    inner: np.ndarray
    outer: np.ndarray

    def sample_poses(self, rng: np.random.Generator, n: int, heading_jitter: float = 0.5) -> np.ndarray:
        """Poses between the walls, heading roughly along the corridor."""
        k = len(self.inner)
        out = []
        while len(out) < n:
            i = int(rng.integers(k))
            t = rng.uniform(0.0, 1.0)
            lam = rng.uniform(0.3, 0.7)
            a = self.inner[i] + t * (self.inner[(i + 1) % k] - self.inner[i])
            b = self.outer[i] + t * (self.outer[(i + 1) % k] - self.outer[i])
            p = a + lam * (b - a)
            along = (self.inner[(i + 1) % k] + self.outer[(i + 1) % k] - self.inner[i] - self.outer[i]) / 2
            psi = math.atan2(along[1], along[0]) + rng.uniform(-heading_jitter, heading_jitter)
            out.append((p[0], p[1], psi))
        return np.array(out)


def irregular_polygon(n_corners: int = 9, inner_radius: float = 3.0, outer_radius: float = 6.0, seed: int = 7) -> PolygonScenario:
    """Closed corridor between two irregular polygons.

    Corner radii and angles are jittered so that no two walls are parallel and
    no stretch of wall is rotationally symmetric; every pose sees distinct corners.
    """
    rng = np.random.default_rng(seed)
    base = np.arange(n_corners) * (2 * math.pi / n_corners)
    ang = base + rng.uniform(-0.2, 0.2, n_corners)
    r_in = inner_radius * rng.uniform(0.8, 1.2, n_corners)
    r_out = outer_radius * rng.uniform(0.85, 1.15, n_corners)
    inner = np.column_stack([r_in * np.cos(ang), r_in * np.sin(ang)])
    ang_o = ang + rng.uniform(-0.1, 0.1, n_corners)
    outer = np.column_stack([r_out * np.cos(ang_o), r_out * np.sin(ang_o)])
    return PolygonScenario(TrackMap2D.from_polylines([inner, outer], closed=True), inner, outer)
