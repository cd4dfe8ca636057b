"""End-to-end digital-twin construction with per-stage reporting."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from racesim.geometry import TrackMap2D
from racesim.twin.cloud import Mesh, PointCloud
from racesim.twin.filters import (
    extrude_2d,
    poisson_disk_sample,
    sphere_outlier_filter,
    statistical_outlier_filter,
)
from racesim.twin.pivot import ball_pivot_mesh
from racesim.twin.slicing import slice_mesh

log = logging.getLogger(__name__)


class TwinStageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"twin stage {stage!r} failed: {cause}")


@dataclass
class TwinParams:
    outlier: str = "sphere"  # "sphere", "statistical", "both" or "none"
    sphere_r: float = 0.1
    sphere_m_min: int = 3
    stat_k: int = 10
    stat_std_ratio: float = 2.0
    extrude: str = "auto"  # "auto" extrudes flat clouds only
    z_min: float = 0.0
    z_max: float = 0.5
    layers: int = 5
    poisson_radius: float = 0.1
    radii: list[float] = field(default_factory=lambda: [0.15, 0.25])
    k_normals: int = 10
    slice_z: float = 0.15

    @classmethod
    def from_dict(cls, data: dict) -> "TwinParams":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown twin parameters: {sorted(unknown)}")
        return cls(**known)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TwinResult:
    mesh: Mesh
    track: TrackMap2D
    report: dict


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except Exception as exc:  # surfaced with the stage name for the CLI
        raise TwinStageError(name, exc) from exc


def build_twin(pc: PointCloud, params: TwinParams = TwinParams()) -> TwinResult:
    """filter -> extrude -> Poisson-disk sample -> ball pivot -> slice."""
    stages = [{"stage": "input", "points": len(pc)}]
    if params.outlier in ("sphere", "both"):
        pc = _stage("sphere_outlier_filter", sphere_outlier_filter, pc, params.sphere_r, params.sphere_m_min)
        stages.append({"stage": "sphere_outlier_filter", "points": len(pc)})
    if params.outlier in ("statistical", "both"):
        pc = _stage(
            "statistical_outlier_filter", statistical_outlier_filter, pc, params.stat_k, params.stat_std_ratio
        )
        stages.append({"stage": "statistical_outlier_filter", "points": len(pc)})
    if params.outlier not in ("sphere", "statistical", "both", "none"):
        raise TwinStageError("config", ValueError(f"unknown outlier mode {params.outlier!r}"))
    flat = len(pc) > 0 and float(np.ptp(pc.points[:, 2])) == 0.0
    if params.extrude == "always" or (params.extrude == "auto" and flat):
        pc = _stage("extrude_2d", extrude_2d, pc, params.z_min, params.z_max, params.layers)
        stages.append({"stage": "extrude_2d", "points": len(pc)})
    pc = _stage("poisson_disk_sample", poisson_disk_sample, pc, params.poisson_radius)
    stages.append({"stage": "poisson_disk_sample", "points": len(pc)})
    mesh = _stage("ball_pivot_mesh", ball_pivot_mesh, pc, params.radii, None, params.k_normals)
    stages.append({"stage": "ball_pivot_mesh", "points": len(mesh.vertices), "faces": len(mesh)})
    track = _stage("slice_mesh", slice_mesh, mesh, params.slice_z)
    stages.append({"stage": "slice_mesh", "segments": len(track)})
    for s in stages:
        log.info("twin %s", s)
    return TwinResult(mesh, track, {"stages": stages, "params": params.to_dict()})
