"""Fixed-rate world: ego vehicle, waypoint-following opponents and sensor synthesis."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from racesim import dynamics
from racesim.dynamics import ControlInput, VehicleParams, VehicleState, wrap_angle
from racesim.geometry import OrientedBox, TrackMap2D, boxes_overlap
from racesim.sensors import (
    ImuNoise,
    ImuSample,
    LidarSpec,
    OdomNoise,
    OdomSample,
    Scan,
    raycast_scan,
    synth_imu,
    synth_odom,
)

# per-tick noise stream identifiers, mixed into the world seed
_STREAM_LIDAR, _STREAM_IMU, _STREAM_ODOM = 1, 2, 3


@dataclass(frozen=True)
class OpponentTrajectory:
    waypoints: np.ndarray  # (n, 4): x, y, psi, v
    closed: bool = True

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=np.float64).reshape(-1, 4)
        object.__setattr__(self, "waypoints", wp)
        if len(wp) < 2:
            raise ValueError("an opponent trajectory needs at least 2 waypoints")
        if np.any(wp[:, 3] <= 0):
            raise ValueError("waypoint velocities must be positive")
        if np.any(self.lengths <= 0):
            raise ValueError("consecutive waypoints must not coincide")

    @property
    def n_segments(self) -> int:
        return len(self.waypoints) if self.closed else len(self.waypoints) - 1

    @property
    def lengths(self) -> np.ndarray:
        wp = self.waypoints[:, :2]
        nxt = np.roll(wp, -1, axis=0) if self.closed else wp[1:]
        cur = wp if self.closed else wp[:-1]
        return np.hypot(*(nxt - cur).T)

    def segment(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        a = self.waypoints[i]
        b = self.waypoints[(i + 1) % len(self.waypoints)]
        return a, b

    def loop_time(self) -> float:
        """Time to traverse every segment once at its departing waypoint's speed."""
        v = self.waypoints[: self.n_segments, 3]
        return float(np.sum(self.lengths / v))

    @classmethod
    def from_csv(cls, path, closed: bool = True) -> "OpponentTrajectory":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"x", "y", "psi", "v"} - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing columns {sorted(missing)}")
            rows = [[float(r["x"]), float(r["y"]), float(r["psi"]), float(r["v"])] for r in reader]
        return cls(np.array(rows), closed)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "psi", "v"])
            for row in self.waypoints.tolist():
                w.writerow([repr(v) for v in row])


@dataclass(frozen=True)
class OpponentState:
    x: float
    y: float
    psi: float
    segment_index: int = 0
    segment_progress: float = 0.0

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.psi)


def opponent_start(traj: OpponentTrajectory) -> OpponentState:
    x, y, psi, _ = traj.waypoints[0]
    return OpponentState(float(x), float(y), float(psi), 0, 0.0)


def _interpolate(traj: OpponentTrajectory, i: int, progress: float) -> OpponentState:
    a, b = traj.segment(i)
    frac = progress / traj.lengths[i]
    x = a[0] + frac * (b[0] - a[0])
    y = a[1] + frac * (b[1] - a[1])
    dpsi = wrap_angle(b[2] - a[2])
    return OpponentState(float(x), float(y), wrap_angle(a[2] + frac * dpsi), int(i), float(progress))


def opponent_step(traj: OpponentTrajectory, st: OpponentState, dt: float) -> OpponentState:
    """Advance along the waypoint polyline for ``dt`` seconds.

    Speed on a segment is the departing waypoint's v; time left over at a
    waypoint carries into the next segment at that segment's speed. Closed
    trajectories wrap around, open ones stop at the last waypoint.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    lengths = traj.lengths
    i, progress, t_left = st.segment_index, st.segment_progress, dt
    while True:
        v = traj.waypoints[i, 3]
        remaining = lengths[i] - progress
        t_needed = remaining / v
        if t_left < t_needed:
            progress += v * t_left
            break
        t_left -= t_needed
        if i + 1 < traj.n_segments:
            i, progress = i + 1, 0.0
        elif traj.closed:
            i, progress = 0, 0.0
        else:
            progress = lengths[i]
            break
    return _interpolate(traj, i, min(progress, lengths[i]))


def footprint(st: OpponentState, half_length: float, half_width: float) -> OrientedBox:
    return OrientedBox(st.x, st.y, st.psi, half_length, half_width)


@dataclass
class Opponent:
    trajectory: OpponentTrajectory
    half_length: float = 0.25
    half_width: float = 0.15


@dataclass
class SimConfig:
    dt: float = 0.01
    scan_every: int = 4  # ticks per LiDAR scan
    vehicle: VehicleParams = field(default_factory=lambda: dynamics.preset("f1tenth"))
    lidar: LidarSpec = field(default_factory=LidarSpec)
    imu_noise: ImuNoise = field(default_factory=ImuNoise)
    odom_noise: OdomNoise = field(default_factory=OdomNoise)
    ego_half_length: float = 0.25
    ego_half_width: float = 0.15
    expose_ground_truth: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.scan_every) != self.scan_every or self.scan_every < 1:
            raise ValueError("scan_every must be a positive integer")


@dataclass(frozen=True)
class SensorFrame:
    tick: int
    time: float
    imu: ImuSample
    odom: OdomSample
    scan: Scan | None = None
    pose: tuple[float, float, float] | None = None


@dataclass
class WorldState:
    tick: int
    ego: VehicleState
    opponents: list[OpponentState]
    seed: int
    dt: float
    prev_ego: VehicleState | None = None
    collisions: list[int] = field(default_factory=list)  # opponent indices overlapping at this tick

    @property
    def time(self) -> float:
        return self.tick * self.dt


class World:
    """Static scene (map, opponent trajectories, config) plus the tick function."""

    def __init__(self, track: TrackMap2D, cfg: SimConfig, opponents: list[Opponent] = ()):
        if len(track) == 0:
            raise ValueError("world needs a nonempty track map")
        self.track = track
        self.cfg = cfg
        self.opponents = list(opponents)

    def initial_state(self, ego: VehicleState, seed: int) -> WorldState:
        opp = [opponent_start(o.trajectory) for o in self.opponents]
        st = WorldState(0, ego, opp, int(seed), self.cfg.dt)
        st.collisions = self._collisions(st)
        return st

    def _rng(self, seed: int, tick: int, stream: int) -> np.random.Generator:
        return np.random.default_rng([seed, tick, stream])

    def _boxes(self, st: WorldState) -> list[OrientedBox]:
        return [footprint(s, o.half_length, o.half_width) for s, o in zip(st.opponents, self.opponents)]

    def _collisions(self, st: WorldState) -> list[int]:
        ego_box = OrientedBox(st.ego.x, st.ego.y, st.ego.psi, self.cfg.ego_half_length, self.cfg.ego_half_width)
        return [i for i, box in enumerate(self._boxes(st)) if boxes_overlap(ego_box, box)]

    def frame(self, st: WorldState) -> SensorFrame:
        """Sensor frame observed at ``st``; a scan is included every ``scan_every`` ticks."""
        cfg = self.cfg
        prev = st.prev_ego if st.prev_ego is not None else st.ego
        imu = synth_imu(
            st.ego, prev, cfg.dt, cfg.vehicle.g, cfg.imu_noise, self._rng(st.seed, st.tick, _STREAM_IMU)
        )
        odom = synth_odom(st.ego, cfg.odom_noise, self._rng(st.seed, st.tick, _STREAM_ODOM))
        scan = None
        if st.tick % cfg.scan_every == 0:
            scan = raycast_scan(
                (st.ego.x, st.ego.y, st.ego.psi),
                self.track,
                self._boxes(st),
                cfg.lidar,
                self._rng(st.seed, st.tick, _STREAM_LIDAR),
                st.tick,
            )
        pose = (st.ego.x, st.ego.y, st.ego.psi) if cfg.expose_ground_truth else None
        return SensorFrame(st.tick, st.time, imu, odom, scan, pose)

    def advance(self, st: WorldState, cmd: ControlInput) -> WorldState:
        dt = self.cfg.dt
        ego = dynamics.step(st.ego, cmd, dt, self.cfg.vehicle)
        opp = [opponent_step(o.trajectory, s, dt) for o, s in zip(self.opponents, st.opponents)]
        nxt = WorldState(st.tick + 1, ego, opp, st.seed, dt, prev_ego=st.ego)
        nxt.collisions = self._collisions(nxt)
        return nxt

    def tick(self, st: WorldState, cmd: ControlInput) -> tuple[WorldState, SensorFrame]:
        """Apply ``cmd`` for one physics step and synthesize the next frame."""
        nxt = self.advance(st, cmd)
        return nxt, self.frame(nxt)

    def reset_ego(self, st: WorldState, pose: tuple[float, float, float]) -> WorldState:
        ego = VehicleState(float(pose[0]), float(pose[1]), wrap_angle(float(pose[2])))
        out = replace(st, ego=ego, prev_ego=ego)
        out.collisions = self._collisions(out)
        return out


def state_log_hash(records) -> str:
    """SHA-256 over the canonical JSON encoding of a sequence of records."""
    h = hashlib.sha256()
    for rec in records:
        h.update(json.dumps(rec, sort_keys=True, separators=(",", ":")).encode())
        h.update(b"\n")
    return h.hexdigest()


def load_opponents(paths, closed: bool = True, half_length: float = 0.25, half_width: float = 0.15) -> list[Opponent]:
    return [Opponent(OpponentTrajectory.from_csv(Path(p), closed), half_length, half_width) for p in paths]


def opponent_on_path_distance(traj: OpponentTrajectory, st: OpponentState) -> float:
    """Distance from the opponent position to its current segment (diagnostic helper)."""
    a, b = traj.segment(st.segment_index)
    ax, ay, bx, by = a[0], a[1], b[0], b[1]
    dx, dy = bx - ax, by - ay
    t = ((st.x - ax) * dx + (st.y - ay) * dy) / (dx * dx + dy * dy)
    t = min(max(t, 0.0), 1.0)
    return math.hypot(ax + t * dx - st.x, ay + t * dy - st.y)
