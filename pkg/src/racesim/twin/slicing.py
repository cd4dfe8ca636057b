"""Plane sections of triangle meshes."""

from __future__ import annotations

import logging

import numpy as np

from racesim.geometry import TrackMap2D
from racesim.twin.cloud import Mesh

log = logging.getLogger(__name__)


def slice_mesh(mesh: Mesh, z: float) -> TrackMap2D:
    """Intersect every face with the horizontal plane at height ``z``.

    Vertices exactly on the plane count as above it, so a face touching the
    plane at a single vertex or lying in it contributes nothing.
    """
    if len(mesh) == 0:
        raise ValueError("cannot slice an empty mesh")
    tri = mesh.vertices[mesh.faces]
    d = tri[:, :, 2] - z
    above = d >= 0
    n_above = above.sum(axis=1)
    crossing = (n_above == 1) | (n_above == 2)
    tri, d, above = tri[crossing], d[crossing], above[crossing]
    segs = np.empty((len(tri), 4))
    for row in range(len(tri)):
        pts = []
        for a, b in ((0, 1), (1, 2), (2, 0)):
            if above[row, a] != above[row, b]:
                t = d[row, a] / (d[row, a] - d[row, b])
                p = tri[row, a] + t * (tri[row, b] - tri[row, a])
                pts.append(p[:2])
        segs[row] = (*pts[0], *pts[1])
    keep = np.hypot(segs[:, 2] - segs[:, 0], segs[:, 3] - segs[:, 1]) > 0
    segs = segs[keep]
    if len(segs) == 0:
        log.warning("slice at z=%.4g does not intersect the mesh", z)
    return TrackMap2D(segs)
