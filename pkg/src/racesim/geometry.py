"""Planar geometry shared by the sensor, world and localization modules."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class TrackMap2D:
    """Raycastable track geometry: an (m, 4) array of segments x1, y1, x2, y2."""

    segments: np.ndarray

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=np.float64).reshape(-1, 4)

    def __len__(self) -> int:
        return self.segments.shape[0]

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) over all endpoints."""
        if len(self) == 0:
            return (0.0, 0.0, 0.0, 0.0)
        xs = self.segments[:, [0, 2]]
        ys = self.segments[:, [1, 3]]
        return (float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))

    def total_length(self) -> float:
        d = self.segments[:, 2:] - self.segments[:, :2]
        return float(np.hypot(d[:, 0], d[:, 1]).sum())

    @classmethod
    def from_polylines(cls, polylines, closed: bool = True) -> "TrackMap2D":
        segs = []
        for line in polylines:
            pts = np.asarray(line, dtype=np.float64)
            if closed:
                pts = np.vstack([pts, pts[:1]])
            segs.append(np.hstack([pts[:-1], pts[1:]]))
        return cls(np.vstack(segs) if segs else np.zeros((0, 4)))

    def to_json(self) -> dict:
        return {
            "segments": [[[s[0], s[1]], [s[2], s[3]]] for s in self.segments.tolist()],
            "bounds": list(self.bounds),
        }

    @classmethod
    def from_json(cls, data: dict) -> "TrackMap2D":
        segs = [[a[0], a[1], b[0], b[1]] for a, b in data["segments"]]
        return cls(np.array(segs, dtype=np.float64).reshape(-1, 4))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "TrackMap2D":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class OrientedBox:
    cx: float
    cy: float
    heading: float
    half_length: float
    half_width: float

    def __post_init__(self):
        if not (self.half_length > 0 and self.half_width > 0):
            raise ValueError("box half extents must be positive")

    def corners(self) -> np.ndarray:
        """Corners in counter-clockwise order starting front-left."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        local = [
            (self.half_length, self.half_width),
            (-self.half_length, self.half_width),
            (-self.half_length, -self.half_width),
            (self.half_length, -self.half_width),
        ]
        return np.array([(self.cx + c * lx - s * ly, self.cy + s * lx + c * ly) for lx, ly in local])

    def edges(self) -> np.ndarray:
        pts = self.corners()
        return np.hstack([pts, np.roll(pts, -1, axis=0)])


def boxes_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """Separating-axis test for two oriented rectangles."""
    ca, cb = a.corners(), b.corners()
    for box in (a, b):
        for ang in (box.heading, box.heading + math.pi / 2):
            axis = np.array([math.cos(ang), math.sin(ang)])
            pa, pb = ca @ axis, cb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def point_segment_distance(px, py, segs: np.ndarray) -> np.ndarray:
    """Distance from one point to each segment of an (m, 4) array."""
    ax, ay, bx, by = segs[:, 0], segs[:, 1], segs[:, 2], segs[:, 3]
    dx, dy = bx - ax, by - ay
    den = dx * dx + dy * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        t = ((px - ax) * dx + (py - ay) * dy) / den
    t = np.where(den > 0, np.clip(t, 0.0, 1.0), 0.0)
    qx = ax + t * dx - px
    qy = ay + t * dy - py
    return np.sqrt(qx * qx + qy * qy)


def segment_intersection(p0, p1, q0, q1) -> tuple[float, float] | None:
    """Parameters (t, u) where p0 + t(p1-p0) meets q0 + u(q1-q0), both in [0, 1]; None otherwise."""
    rx, ry = p1[0] - p0[0], p1[1] - p0[1]
    sx, sy = q1[0] - q0[0], q1[1] - q0[1]
    den = rx * sy - ry * sx
    if den == 0.0:
        return None
    qpx, qpy = q0[0] - p0[0], q0[1] - p0[1]
    t = (qpx * sy - qpy * sx) / den
    u = (qpx * ry - qpy * rx) / den
    if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
        return t, u
    return None
