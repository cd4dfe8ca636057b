import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _support import square_room
from racesim.dynamics import wrap_angle
from racesim.geometry import TrackMap2D
from racesim.localize import (
    OccupancyGrid,
    PoseEstimate,
    SearchWindow,
    match,
    rasterize,
    refine,
    scan_points,
    score_window,
)
from racesim.scenario import irregular_polygon
from racesim.sensors import LidarSpec, raycast_scan

SPEC = LidarSpec(num_beams=361)
POLY = irregular_polygon()
POLY_GRID = rasterize(POLY.track, 0.05)


def scan_at(track, pose, spec=SPEC):
    return raycast_scan(pose, track, [], spec)


def test_unit_segment_covers_cells():
    grid = rasterize(TrackMap2D([[0, 0, 1, 0]]), 0.1, sigma=0)
    assert np.count_nonzero(grid.cells) >= 10
    assert grid.cells.max() == 1.0


def test_rasterize_margin():
    grid = rasterize(TrackMap2D([[0, 0, 2, 0], [2, 0, 2, 1]]), 0.1)
    xmin, ymin, xmax, ymax = grid.extent
    assert (xmin, ymin) == (-1.0, -1.0)
    assert xmax >= 3.0 and ymax >= 2.0


def test_rasterize_rejects():
    with pytest.raises(ValueError, match="empty"):
        rasterize(TrackMap2D(np.zeros((0, 4))))
    with pytest.raises(ValueError):
        rasterize(TrackMap2D([[0, 0, 1, 0]]), 0.0)


def occupancy_oracle(grid: OccupancyGrid, segs: np.ndarray, sigma: float) -> np.ndarray:
    """Cell by cell: Gaussian of the distance from the cell center to the nearest segment."""
    out = np.zeros_like(grid.cells)
    s = sigma * grid.resolution
    for r in range(grid.height):
        for c in range(grid.width):
            px = grid.origin[0] + (c + 0.5) * grid.resolution
            py = grid.origin[1] + (r + 0.5) * grid.resolution
            d = min(point_segment(px, py, *seg) for seg in segs.tolist())
            out[r, c] = math.exp(-0.5 * (d / s) ** 2) if d < 4 * s else 0.0
    return out


def point_segment(px, py, x1, y1, x2, y2):
    dx, dy = x2 - x1, y2 - y1
    t = max(0.0, min(1.0, ((px - x1) * dx + (py - y1) * dy) / (dx * dx + dy * dy)))
    return math.hypot(x1 + t * dx - px, y1 + t * dy - py)


@settings(max_examples=20)
@given(st.lists(st.tuples(*[st.floats(-1, 1)] * 4).filter(lambda t: math.hypot(t[2] - t[0], t[3] - t[1]) > 1e-3),
                min_size=1, max_size=4))
def test_occupancy_matches_oracle(segs):
    segs = np.array(segs)
    grid = rasterize(TrackMap2D(segs), 0.1, margin=0.3)
    np.testing.assert_allclose(grid.cells, occupancy_oracle(grid, segs, 1.0), rtol=0, atol=1e-12)


def test_overlapping_walls_do_not_add_up():
    one = rasterize(TrackMap2D([[0, 0, 2, 0]]), 0.1)
    two = rasterize(TrackMap2D([[0, 0, 2, 0], [0, 0, 2, 0], [0.5, 0, 1.5, 0]]), 0.1)
    np.testing.assert_array_equal(one.cells, two.cells)


def test_wall_profile_across_cells():
    # the grid starts at y = -1, so the wall at y = 2.05 runs through a row of cell centers
    grid = rasterize(TrackMap2D([[0, 0, 2, 0], [0, 2.05, 2, 2.05]]), 0.1)
    col = grid.cells[:, grid.width // 2]
    r = 30
    assert col[r] == 1.0
    assert col[r - 1] == pytest.approx(math.exp(-0.5)) and col[r + 1] == pytest.approx(math.exp(-0.5))
    assert col[r + 4] == 0.0


def test_grid_json_round_trip(tmp_path):
    POLY_GRID.save(tmp_path / "g.json")
    back = OccupancyGrid.load(tmp_path / "g.json")
    assert back.resolution == POLY_GRID.resolution and back.origin == POLY_GRID.origin
    np.testing.assert_array_equal(back.cells, POLY_GRID.cells)


def test_grid_json_validation():
    with pytest.raises(ValueError, match="cells"):
        OccupancyGrid.from_json({"resolution": 0.1, "origin": [0, 0], "width": 2, "height": 2})
    with pytest.raises(ValueError, match="expected"):
        OccupancyGrid.from_json({"resolution": 0.1, "origin": [0, 0], "width": 2, "height": 2, "cells": [0, 1, 0]})


def test_cell_of_and_contains():
    g = OccupancyGrid(0.5, (-1.0, -1.0), np.zeros((4, 6)))
    assert g.cell_of(-1.0, -1.0) == (0, 0)
    assert g.cell_of(0.26, 0.74) == (3, 2)
    assert g.contains(1.99, 0.99) and not g.contains(2.0, 0.0)


def test_window_offsets():
    w = SearchWindow(0.5, 0.5, 0.2, 21, 21, 21)
    ox, oy, oh = w.offsets()
    assert ox[0] == -0.5 and ox[-1] == 0.5 and len(ox) == 21
    assert w.angular_step == pytest.approx(0.02)
    assert SearchWindow(nx=1, ny=1, npsi=1).angular_step == 0.0
    with pytest.raises(ValueError):
        SearchWindow(nx=0)


@pytest.mark.parametrize("k", range(4))
def test_match_at_true_pose(k):
    pose = tuple(POLY.sample_poses(np.random.default_rng(k), 1)[0])
    est = match(scan_at(POLY.track, pose), POLY_GRID, pose, SearchWindow(), SPEC)
    assert math.hypot(est.x - pose[0], est.y - pose[1]) < 1e-9
    assert abs(wrap_angle(est.psi - pose[2])) < 1e-9
    assert 0.0 < est.score <= 1.0


def test_match_recovers_offset():
    pose = tuple(POLY.sample_poses(np.random.default_rng(5), 1)[0])
    prior = (pose[0] + 0.3, pose[1], pose[2])
    est = match(scan_at(POLY.track, pose), POLY_GRID, prior, SearchWindow(), SPEC)
    assert math.hypot(est.x - pose[0], est.y - pose[1]) < 0.05
    assert abs(wrap_angle(est.psi - pose[2])) < SearchWindow().angular_step


def circular_room(radius=3.0, n=96):
    a = np.arange(n) * 2 * math.pi / n
    return TrackMap2D.from_polylines([np.column_stack([radius * np.cos(a), radius * np.sin(a)])])


def test_circular_room_is_deterministic():
    track = circular_room()
    grid = rasterize(track, 0.05)
    scan = scan_at(track, (0.0, 0.0, 0.0))
    prior = (0.1, -0.05, 0.3)
    a = match(scan, grid, prior, SearchWindow(), SPEC)
    b = match(scan, grid, prior, SearchWindow(), SPEC)
    assert a == b
    # heading is unobservable, position is not
    assert math.hypot(a.x, a.y) < 0.05


def test_no_returns():
    scan = scan_at(TrackMap2D(square_room(50.0)), (0.0, 0.0, 0.0))
    assert not scan.valid().any()
    with pytest.raises(ValueError, match="no returns"):
        match(scan, rasterize(TrackMap2D(square_room(2.0))), (0.0, 0.0, 0.0), spec=SPEC)


def test_prior_outside_grid():
    pose = (4.5, 0.0, 0.0)
    with pytest.raises(ValueError, match="outside"):
        match(scan_at(POLY.track, pose), POLY_GRID, (40.0, 0.0, 0.0), spec=SPEC)


def test_stride_thins_points():
    scan = scan_at(POLY.track, (4.5, 0.0, 1.6))
    every = np.arange(len(scan.ranges)) % 4 == 0
    cx, _ = scan_points(scan, SPEC, stride=4)
    assert len(scan_points(scan, SPEC)[0]) == scan.valid().sum()
    assert len(cx) == (scan.valid() & every).sum()


def test_score_window_shape():
    pose = (4.5, 0.0, 1.6)
    w = SearchWindow(0.1, 0.2, 0.1, 3, 5, 7)
    scores, xs, ys, hs, n = score_window(scan_at(POLY.track, pose), POLY_GRID, pose, w, SPEC)
    assert scores.shape == (3, 5, 7) and len(xs) == 3 and len(hs) == 7 and n > 0


def test_refine_keeps_prior_along_corridor():
    # in a long straight corridor the along-track shift is unobservable
    track = TrackMap2D([[-20, -1, 20, -1], [-20, 1, 20, 1]])
    grid = rasterize(track, 0.05)
    scan = scan_at(track, (0.0, 0.0, 0.0), LidarSpec(num_beams=361, range_max=5.0))
    w = SearchWindow(0.2, 0.2, 0.05, 9, 9, 5)
    est = refine(scan, grid, (0.0, 0.0, 0.0), w, LidarSpec(num_beams=361, range_max=5.0))
    assert (est.x, est.y, est.psi) == (0.0, 0.0, 0.0)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(-6, 6), st.integers(-6, 6), st.integers(-7, 7))
def test_match_on_lattice_offsets(seed, ix, iy, ih):
    pose = tuple(POLY.sample_poses(np.random.default_rng(seed), 1)[0])
    prior = (pose[0] + 0.05 * ix, pose[1] + 0.05 * iy, pose[2] + 0.02 * ih)
    w = SearchWindow()
    est = match(scan_at(POLY.track, pose), POLY_GRID, prior, w, SPEC)
    assert math.hypot(est.x - pose[0], est.y - pose[1]) < 0.05
    assert abs(wrap_angle(est.psi - pose[2])) < w.angular_step


def test_estimate_dict_round_trip():
    e = PoseEstimate(1.0, -2.0, 0.5, 0.75)
    assert PoseEstimate.from_dict(e.to_dict()) == e
