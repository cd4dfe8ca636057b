"""Point cloud and mesh containers plus their file formats."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class PointCloudParseError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


@dataclass
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")

    def __len__(self) -> int:
        return self.points.shape[0]

    def save_xyz(self, path) -> None:
        np.savetxt(path, self.points, fmt="%.17g")

    def save_ply(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(self)}\n")
            fh.write("property float x\nproperty float y\nproperty float z\nend_header\n")
            for x, y, z in self.points.tolist():
                fh.write(f"{x!r} {y!r} {z!r}\n")


@dataclass
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    def __len__(self) -> int:
        return self.faces.shape[0]

    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def validate(self) -> None:
        """Raise ValueError unless indices are in range, faces non-repeating and non-degenerate."""
        if len(self) == 0:
            return
        f = self.faces
        if f.min() < 0 or f.max() >= len(self.vertices):
            raise ValueError("face index out of range")
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise ValueError("face with repeated vertex")
        if np.any(self.face_areas() <= 1e-12):
            raise ValueError("zero-area face")

    def to_json(self) -> dict:
        return {"vertices": self.vertices.tolist(), "faces": self.faces.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "Mesh":
        return cls(np.array(data["vertices"], dtype=np.float64), np.array(data["faces"], dtype=np.int64))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "Mesh":
        return cls.from_json(json.loads(Path(path).read_text()))


def _parse_floats(path, lineno: int, line: str) -> tuple[float, float, float]:
    parts = line.split()
    if len(parts) != 3:
        raise PointCloudParseError(path, lineno, f"expected 3 coordinates, got {len(parts)}: {line.strip()!r}")
    try:
        x, y, z = (float(p) for p in parts)
    except ValueError:
        raise PointCloudParseError(path, lineno, f"non-numeric coordinate in {line.strip()!r}") from None
    if not all(np.isfinite((x, y, z))):
        raise PointCloudParseError(path, lineno, "non-finite coordinate")
    return x, y, z


def _read_xyz(path, lines: list[str]) -> np.ndarray:
    pts = []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        pts.append(_parse_floats(path, lineno, stripped))
    return np.array(pts, dtype=np.float64).reshape(-1, 3)


_PLY_FLOAT_TYPES = {"float", "float32", "double", "float64"}


def _read_ply(path, lines: list[str]) -> np.ndarray:
    if not lines or lines[0].strip() != "ply":
        raise PointCloudParseError(path, 1, "missing 'ply' magic")
    n_vertices = None
    props: list[str] = []
    lineno = 1
    for lineno in range(2, len(lines) + 1):
        tokens = lines[lineno - 1].split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if tokens[1:2] != ["ascii"]:
                raise PointCloudParseError(path, lineno, "only ascii PLY is supported")
        elif tokens[0] == "element":
            if len(tokens) != 3 or tokens[1] != "vertex":
                raise PointCloudParseError(path, lineno, "only a single 'element vertex N' is supported")
            try:
                n_vertices = int(tokens[2])
            except ValueError:
                raise PointCloudParseError(path, lineno, "bad vertex count") from None
        elif tokens[0] == "property":
            if len(tokens) != 3 or tokens[1] not in _PLY_FLOAT_TYPES:
                raise PointCloudParseError(path, lineno, "only float x/y/z properties are supported")
            props.append(tokens[2])
        elif tokens[0] == "end_header":
            break
        else:
            raise PointCloudParseError(path, lineno, f"unexpected header keyword {tokens[0]!r}")
    else:
        raise PointCloudParseError(path, lineno, "missing end_header")
    if n_vertices is None:
        raise PointCloudParseError(path, lineno, "missing 'element vertex' declaration")
    if props != ["x", "y", "z"]:
        raise PointCloudParseError(path, lineno, f"expected properties x, y, z, got {props}")
    body = lines[lineno:]
    pts = []
    for offset, line in enumerate(body, start=lineno + 1):
        if len(pts) == n_vertices:
            if line.strip():
                raise PointCloudParseError(path, offset, "more vertex rows than declared")
            continue
        if not line.strip():
            continue
        pts.append(_parse_floats(path, offset, line))
    if len(pts) != n_vertices:
        raise PointCloudParseError(path, len(lines), f"declared {n_vertices} vertices, found {len(pts)}")
    return np.array(pts, dtype=np.float64).reshape(-1, 3)


def load_pointcloud(path, fmt: str | None = None) -> PointCloud:
    """Read an ascii-PLY or whitespace-separated xyz text file."""
    path = Path(path)
    if fmt is None:
        fmt = "ascii-ply" if path.suffix.lower() == ".ply" else "xyz-text"
    lines = path.read_text(encoding="ascii", errors="replace").splitlines()
    if fmt == "ascii-ply":
        pts = _read_ply(path, lines)
    elif fmt == "xyz-text":
        pts = _read_xyz(path, lines)
    else:
        raise ValueError(f"unknown point cloud format {fmt!r}")
    return PointCloud(pts)
