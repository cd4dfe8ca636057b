"""Reference autonomy client: pure-pursuit steering, proportional speed control and a scan-matching tracker."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from racesim.dynamics import ControlInput, wrap_angle
from racesim.evaluation import ReferenceTrajectory
from racesim.localize import OccupancyGrid, PoseEstimate, SearchWindow, match, refine
from racesim.sensors import LidarSpec
from racesim.world import SensorFrame


@dataclass
class PurePursuit:
    ref: ReferenceTrajectory
    wheelbase: float
    target_speed: float = 3.0
    lookahead_min: float = 0.6
    lookahead_gain: float = 0.3  # seconds of travel added to the lookahead
    speed_gain: float = 2.0
    delta_max: float = 0.4189
    _cursor: int = field(default=-1, repr=False)

    def _nearest(self, x: float, y: float) -> int:
        pts = self.ref.points
        n = len(pts)
        if self._cursor < 0:
            idx = int(np.argmin(np.hypot(pts[:, 0] - x, pts[:, 1] - y)))
        else:
            # local search ahead of the last match keeps the cursor from jumping across the track
            window = (self._cursor + np.arange(-5, 40)) % n if self.ref.closed else np.clip(
                self._cursor + np.arange(-5, 40), 0, n - 1
            )
            d = np.hypot(pts[window, 0] - x, pts[window, 1] - y)
            idx = int(window[int(np.argmin(d))])
        self._cursor = idx
        return idx

    def target_point(self, x: float, y: float, v: float) -> np.ndarray:
        ld = self.lookahead_min + self.lookahead_gain * max(v, 0.0)
        pts = self.ref.points
        n = len(pts)
        i = self._nearest(x, y)
        for _ in range(n):
            if math.hypot(pts[i, 0] - x, pts[i, 1] - y) >= ld:
                break
            nxt = i + 1
            if nxt >= n:
                if not self.ref.closed:
                    break
                nxt = 0
            i = nxt
        return pts[i]

    def steer(self, pose: tuple[float, float, float], v: float) -> float:
        x, y, psi = pose
        tx, ty = self.target_point(x, y, v)
        alpha = wrap_angle(math.atan2(ty - y, tx - x) - psi)
        ld = math.hypot(tx - x, ty - y)
        if ld == 0.0:
            return 0.0
        delta = math.atan2(2.0 * self.wheelbase * math.sin(alpha), ld)
        return max(-self.delta_max, min(self.delta_max, delta))

    def accel(self, v: float) -> float:
        return self.speed_gain * (self.target_speed - v)

    def command(self, pose: tuple[float, float, float], v: float) -> ControlInput:
        if self.target_speed <= 0.0:
            # hold position: brake to rest without steering
            return ControlInput(-self.speed_gain * v, 0.0)
        return ControlInput(self.accel(v), self.steer(pose, v))


@dataclass
class ScanTracker:
    """Odometry dead reckoning corrected by a local correlative match at every scan."""

    grid: OccupancyGrid
    pose: tuple[float, float, float]
    spec: LidarSpec = field(default_factory=LidarSpec)
    window: SearchWindow = field(default_factory=lambda: SearchWindow(0.15, 0.15, 0.06, 7, 7, 7))
    stride: int = 4
    translation_weight: float = 0.4
    rotation_weight: float = 10.0
    levels: int = 3
    last_time: float | None = None
    last_score: float = 0.0

    def predict(self, v_x: float, v_y: float, psi_dot: float, dt: float) -> None:
        x, y, psi = self.pose
        c, s = math.cos(psi), math.sin(psi)
        self.pose = (x + dt * (v_x * c - v_y * s), y + dt * (v_x * s + v_y * c), wrap_angle(psi + dt * psi_dot))

    def update(self, frame: SensorFrame) -> PoseEstimate:
        if self.last_time is not None:
            self.predict(frame.odom.v_x, frame.odom.v_y, frame.odom.psi_dot, frame.time - self.last_time)
        self.last_time = frame.time
        if frame.scan is not None and frame.scan.valid().any():
            return self.update_scan(frame.scan)
        return PoseEstimate(*self.pose, self.last_score)

    def update_scan(self, scan) -> PoseEstimate:
        est = refine(
            scan, self.grid, self.pose, self.window, self.spec, self.stride,
            self.translation_weight, self.rotation_weight, self.levels,
        )
        self.pose = est.pose
        self.last_score = est.score
        return est


@dataclass
class Driver:
    """Frame-to-command policy.

    Without a grid the driver steers on the ground-truth pose carried by each
    frame ("no SE"). With a grid it steers on its own estimate: an initial
    fix from the first scan near the start line, then odometry prediction
    corrected by scan matching ("SE").
    """

    controller: PurePursuit
    grid: OccupancyGrid | None = None
    spec: LidarSpec = field(default_factory=LidarSpec)
    tracker: ScanTracker | None = None
    estimates: list[tuple[int, PoseEstimate]] = field(default_factory=list)

    def _estimate(self, frame: SensorFrame) -> PoseEstimate:
        if self.tracker is None:
            fix = initial_fix(frame, self.grid, self.controller.ref, self.spec)
            self.tracker = ScanTracker(self.grid, fix.pose, self.spec, last_time=frame.time, last_score=fix.score)
            return fix
        return self.tracker.update(frame)

    def __call__(self, frame: SensorFrame) -> ControlInput:
        if self.grid is not None:
            est = self._estimate(frame)
            self.estimates.append((frame.tick, est))
            pose = est.pose
        else:
            if frame.pose is None:
                raise RuntimeError("ground-truth mode needs frames with a pose; start the server with ground truth exposed")
            pose = frame.pose
        return self.controller.command(pose, frame.odom.v_x)


def initial_fix(frame: SensorFrame, grid: OccupancyGrid, ref: ReferenceTrajectory, spec: LidarSpec) -> PoseEstimate:
    """Locate the car near the start of ``ref`` from the first scan using the wide default window."""
    o, t, _ = ref.start_line()
    prior = (float(o[0]), float(o[1]), math.atan2(t[1], t[0]))
    if frame.scan is None:
        return PoseEstimate(*prior, 0.0)
    return match(frame.scan, grid, prior, SearchWindow(), spec, stride=1)
