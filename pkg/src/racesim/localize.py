"""Correlative scan matching against a blurred occupancy raster of a track map."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from racesim import kernels
from racesim.dynamics import wrap_angle
from racesim.geometry import TrackMap2D
from racesim.sensors import LidarSpec, Scan

_QUANT = 65535  # occupancy 1.0 in the integer scoring grid


@dataclass
class OccupancyGrid:
    """Occupancy in [0, 1].

    ``cells[row, col]`` covers x in [origin_x + col*res, origin_x + (col+1)*res)
    and likewise y by row; scoring treats each value as sampled at the cell center.
    """

    resolution: float
    origin: tuple[float, float]
    cells: np.ndarray

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.float64)
        if self.cells.ndim != 2 or min(self.cells.shape) < 1:
            raise ValueError("grid cells must be a 2D array of at least 1x1")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        ox, oy = self.origin
        return (ox, oy, ox + self.width * self.resolution, oy + self.height * self.resolution)

    def contains(self, x: float, y: float) -> bool:
        xmin, ymin, xmax, ymax = self.extent
        return xmin <= x < xmax and ymin <= y < ymax

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) containing the world point."""
        return (
            int(math.floor((y - self.origin[1]) / self.resolution)),
            int(math.floor((x - self.origin[0]) / self.resolution)),
        )

    @cached_property
    def quantized(self) -> np.ndarray:
        return np.ascontiguousarray(np.rint(np.clip(self.cells, 0.0, 1.0) * _QUANT).astype(np.uint16))

    def to_json(self) -> dict:
        return {
            "resolution": self.resolution,
            "origin": list(self.origin),
            "width": self.width,
            "height": self.height,
            "cells": self.cells.ravel().tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "OccupancyGrid":
        for key in ("resolution", "origin", "width", "height", "cells"):
            if key not in data:
                raise ValueError(f"occupancy grid JSON is missing {key!r}")
        w, h = int(data["width"]), int(data["height"])
        cells = np.asarray(data["cells"], dtype=np.float64)
        if cells.size != w * h:
            raise ValueError(f"grid has {cells.size} cells, expected {w}x{h}")
        return cls(float(data["resolution"]), tuple(data["origin"]), cells.reshape(h, w))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "OccupancyGrid":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PoseEstimate:
    x: float
    y: float
    psi: float
    score: float

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.psi)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "psi": self.psi, "score": self.score}

    @classmethod
    def from_dict(cls, d: dict) -> "PoseEstimate":
        return cls(float(d["x"]), float(d["y"]), float(d["psi"]), float(d.get("score", 0.0)))


def wall_distance(track: TrackMap2D, resolution: float, origin, shape, cutoff: float) -> np.ndarray:
    """Distance from each cell center to the nearest segment, capped at ``cutoff``."""
    rows, cols = shape
    out = np.full(shape, float(cutoff))
    xc = origin[0] + (np.arange(cols) + 0.5) * resolution
    yc = origin[1] + (np.arange(rows) + 0.5) * resolution
    for x1, y1, x2, y2 in track.segments.tolist():
        c0 = max(int(math.floor((min(x1, x2) - cutoff - origin[0]) / resolution)), 0)
        c1 = min(int(math.ceil((max(x1, x2) + cutoff - origin[0]) / resolution)) + 1, cols)
        r0 = max(int(math.floor((min(y1, y2) - cutoff - origin[1]) / resolution)), 0)
        r1 = min(int(math.ceil((max(y1, y2) + cutoff - origin[1]) / resolution)) + 1, rows)
        if c0 >= c1 or r0 >= r1:
            continue
        px = xc[c0:c1][None, :]
        py = yc[r0:r1][:, None]
        dx, dy = x2 - x1, y2 - y1
        ll = dx * dx + dy * dy
        t = np.clip(((px - x1) * dx + (py - y1) * dy) / ll, 0.0, 1.0) if ll > 0 else 0.0
        d = np.hypot(x1 + t * dx - px, y1 + t * dy - py)
        np.minimum(out[r0:r1, c0:c1], d, out=out[r0:r1, c0:c1])
    return out


def rasterize(track: TrackMap2D, resolution: float = 0.05, margin: float = 1.0, sigma: float = 1.0) -> OccupancyGrid:
    """Occupancy of the map's walls on a grid with ``margin`` metres of border.

    A wall blurred by a Gaussian of ``sigma`` cells is evaluated in closed form,
    exp(-d^2 / 2 sigma^2) at distance d from the nearest segment, so a wall
    scores the same wherever it falls inside a cell and overlapping walls do
    not add up. ``sigma=0`` marks the cells whose center lies within half a
    cell of a wall.
    """
    if len(track) == 0:
        raise ValueError("cannot rasterize an empty map")
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    xmin, ymin, xmax, ymax = track.bounds
    origin = (xmin - margin, ymin - margin)
    width = int(math.floor((xmax + margin - origin[0]) / resolution)) + 1
    height = int(math.floor((ymax + margin - origin[1]) / resolution)) + 1
    s = sigma * resolution
    cutoff = 4.0 * s if sigma > 0 else resolution
    d = wall_distance(track, resolution, origin, (height, width), cutoff)
    if sigma > 0:
        cells = np.where(d < cutoff, np.exp(-0.5 * (d / s) ** 2), 0.0)
    else:
        cells = (d <= 0.5 * resolution * (1 + 1e-12)).astype(np.float64)
    return OccupancyGrid(resolution, origin, cells)


@dataclass(frozen=True)
class SearchWindow:
    dx: float = 0.5
    dy: float = 0.5
    dpsi: float = 0.2
    nx: int = 21
    ny: int = 21
    npsi: int = 21

    def __post_init__(self):
        if min(self.nx, self.ny, self.npsi) < 1:
            raise ValueError("step counts must be positive")
        if min(self.dx, self.dy, self.dpsi) < 0:
            raise ValueError("window half-widths must be non-negative")

    def offsets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            np.linspace(-self.dx, self.dx, self.nx) if self.nx > 1 else np.zeros(1),
            np.linspace(-self.dy, self.dy, self.ny) if self.ny > 1 else np.zeros(1),
            np.linspace(-self.dpsi, self.dpsi, self.npsi) if self.npsi > 1 else np.zeros(1),
        )

    @property
    def angular_step(self) -> float:
        return 2 * self.dpsi / (self.npsi - 1) if self.npsi > 1 else 0.0


def scan_points(scan: Scan, spec: LidarSpec, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Vehicle-frame endpoints of the valid beams, every ``stride``-th beam."""
    valid = scan.valid()
    valid[np.arange(len(valid)) % stride != 0] = False
    ang = scan.angles[valid]
    r = scan.ranges[valid]
    mx, my = spec.mount_offset
    return mx + r * np.cos(ang), my + r * np.sin(ang)


def score_window(
    scan: Scan,
    grid: OccupancyGrid,
    prior: tuple[float, float, float],
    window: SearchWindow = SearchWindow(),
    spec: LidarSpec = LidarSpec(),
    stride: int = 1,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]:
    """Integer scores over the window as (scores[ix, iy, ih], xs, ys, headings, n_points)."""
    px, py, ppsi = (float(v) for v in prior)
    if not grid.contains(px, py):
        raise ValueError(f"prior ({px:.3f}, {py:.3f}) lies outside the grid")
    bx, by = scan_points(scan, spec, stride)
    if bx.size == 0:
        raise ValueError("no returns")
    ox, oy, opsi = window.offsets()
    xs = px + ox
    ys = py + oy
    heads = ppsi + opsi
    scores = kernels.scan_scores(
        grid.quantized,
        grid.origin[0],
        grid.origin[1],
        grid.resolution,
        np.ascontiguousarray(bx),
        np.ascontiguousarray(by),
        xs,
        ys,
        np.cos(heads),
        np.sin(heads),
    )
    return scores, xs, ys, heads, int(bx.size)


def _normalize(score: int, n_points: int) -> float:
    return float(score) / (_QUANT * 65536 * n_points)


def match(
    scan: Scan,
    grid: OccupancyGrid,
    prior: tuple[float, float, float],
    window: SearchWindow = SearchWindow(),
    spec: LidarSpec = LidarSpec(),
    stride: int = 1,
) -> PoseEstimate:
    """Exhaustive search of ``window`` around ``prior`` for the best-scoring pose.

    The score of a candidate is the mean bilinearly interpolated occupancy
    under the projected scan endpoints. Among equal scores the candidate with
    the lexicographically smallest (dx, dy, dpsi) offset wins.
    """
    scores, xs, ys, heads, n = score_window(scan, grid, prior, window, spec, stride)
    # argmax returns the first maximum in C order, i.e. ascending (dx, dy, dpsi)
    ix, iy, ih = np.unravel_index(int(np.argmax(scores)), scores.shape)
    return PoseEstimate(float(xs[ix]), float(ys[iy]), wrap_angle(float(heads[ih])), _normalize(scores[ix, iy, ih], n))


def _step(offsets: np.ndarray) -> float:
    return float(offsets[1] - offsets[0]) if len(offsets) > 1 else 0.0


def refine(
    scan: Scan,
    grid: OccupancyGrid,
    prior: tuple[float, float, float],
    window: SearchWindow,
    spec: LidarSpec = LidarSpec(),
    stride: int = 1,
    translation_weight: float = 0.4,
    rotation_weight: float = 10.0,
    levels: int = 3,
) -> PoseEstimate:
    """Local correction for tracking: maximize score minus a penalty on the distance from the prior.

    The penalty is ``translation_weight * (dx^2 + dy^2) + rotation_weight * dpsi^2``
    in score units. Directions the scan barely constrains, such as sliding
    along a straight corridor, therefore stay with the prior instead of
    wandering to whichever candidate scores marginally higher. After the
    first pass, each of the remaining ``levels - 1`` passes searches a 5x5x5
    lattice one step of the previous lattice wide around the previous best.
    """
    if levels < 1:
        raise ValueError("levels must be at least 1")
    px, py, ppsi = (float(v) for v in prior)
    center = (px, py, ppsi)
    best = None
    for _ in range(levels):
        scores, xs, ys, heads, n = score_window(scan, grid, center, window, spec, stride)
        obj = scores / (_QUANT * 65536.0 * n)
        obj = obj - translation_weight * ((xs - px)[:, None, None] ** 2 + (ys - py)[None, :, None] ** 2)
        obj = obj - rotation_weight * ((heads - ppsi)[None, None, :] ** 2)
        i, j, k = np.unravel_index(int(np.argmax(obj)), obj.shape)
        center = (float(xs[i]), float(ys[j]), float(heads[k]))
        best = _normalize(scores[i, j, k], n)
        window = SearchWindow(*(_step(o) for o in window.offsets()), 5, 5, 5)
    return PoseEstimate(center[0], center[1], wrap_angle(center[2]), best)
