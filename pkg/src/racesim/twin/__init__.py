"""Digital-twin pipeline: raw point cloud to raycastable 2D track map."""

from racesim.twin.cloud import Mesh, PointCloud, PointCloudParseError, load_pointcloud
from racesim.twin.filters import (
    estimate_normals,
    extrude_2d,
    poisson_disk_sample,
    sphere_outlier_filter,
    statistical_outlier_filter,
)
from racesim.twin.pivot import ball_pivot_mesh
from racesim.twin.slicing import slice_mesh

__all__ = [
    "Mesh",
    "PointCloud",
    "PointCloudParseError",
    "ball_pivot_mesh",
    "estimate_normals",
    "extrude_2d",
    "load_pointcloud",
    "poisson_disk_sample",
    "slice_mesh",
    "sphere_outlier_filter",
    "statistical_outlier_filter",
]
