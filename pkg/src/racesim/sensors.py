"""Sensor synthesis from ground truth: planar LiDAR, IMU and wheel odometry."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from racesim import kernels
from racesim.dynamics import VehicleState, wrap_angle
from racesim.geometry import OrientedBox, TrackMap2D, point_segment_distance


@dataclass(frozen=True)
class LidarSpec:
    num_beams: int = 1081
    fov: float = math.radians(270.0)
    range_min: float = 0.06
    range_max: float = 10.0
    rate: float = 40.0
    noise_std: float = 0.0
    mount_height: float = 0.15
    mount_offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.num_beams < 2:
            raise ValueError("num_beams must be at least 2")
        if not 0 < self.fov <= 2 * math.pi:
            raise ValueError("fov must lie in (0, 2*pi]")
        if not self.range_min < self.range_max:
            raise ValueError("range_min must be below range_max")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    @property
    def sentinel(self) -> float:
        return self.range_max + 1.0

    def beam_angles(self) -> np.ndarray:
        """Beam angles in the sensor frame, first beam at -fov/2."""
        i = np.arange(self.num_beams, dtype=np.float64)
        return -self.fov / 2 + i * (self.fov / (self.num_beams - 1))


LIDAR_PRESETS: dict[str, LidarSpec] = {
    "ust10lx-like": LidarSpec(num_beams=1081, fov=math.radians(270.0), range_min=0.06, range_max=10.0, rate=40.0),
    "hdl32-slice-like": LidarSpec(
        num_beams=2048, fov=2 * math.pi, range_min=1.0, range_max=70.0, rate=10.0, mount_height=0.8
    ),
}


@dataclass
class Scan:
    tick: int
    ranges: np.ndarray
    fov: float
    range_max: float

    @property
    def sentinel(self) -> float:
        return self.range_max + 1.0

    @property
    def angles(self) -> np.ndarray:
        n = len(self.ranges)
        return -self.fov / 2 + np.arange(n) * (self.fov / (n - 1))

    def valid(self) -> np.ndarray:
        return self.ranges <= self.range_max

    def __eq__(self, other):
        if not isinstance(other, Scan):
            return NotImplemented
        return (
            self.tick == other.tick
            and self.fov == other.fov
            and self.range_max == other.range_max
            and np.array_equal(self.ranges, other.ranges)
        )


@dataclass(frozen=True)
class ImuSample:
    a_x: float
    a_y: float
    a_z: float
    psi: float
    psi_dot: float


@dataclass(frozen=True)
class ImuNoise:
    accel_std: float = 0.0
    yaw_std: float = 0.0
    yaw_rate_std: float = 0.0


@dataclass(frozen=True)
class OdomSample:
    v_x: float
    v_y: float
    psi_dot: float


@dataclass(frozen=True)
class OdomNoise:
    v_x_std: float = 0.0
    v_y_std: float = 0.0
    psi_dot_std: float = 0.0


def synth_imu(
    state_t: VehicleState,
    state_tm1: VehicleState,
    dt: float,
    g: float = 9.81,
    noise: ImuNoise = ImuNoise(),
    rng: np.random.Generator | None = None,
) -> ImuSample:
    """IMU sample from two consecutive states.

    Accelerations are finite differences of the body-frame velocities, with no
    centripetal correction; heading and yaw rate pass through from ``state_t``.
    The vertical channel is exactly ``g`` and never noisy.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    a_x = (state_t.v_x - state_tm1.v_x) / dt
    a_y = (state_t.v_y - state_tm1.v_y) / dt
    psi, psi_dot = state_t.psi, state_t.psi_dot
    if rng is not None:
        e = rng.standard_normal(4)
        a_x += noise.accel_std * e[0]
        a_y += noise.accel_std * e[1]
        psi = wrap_angle(psi + noise.yaw_std * e[2])
        psi_dot += noise.yaw_rate_std * e[3]
    return ImuSample(a_x, a_y, g, psi, psi_dot)


def synth_odom(
    state: VehicleState,
    noise: OdomNoise = OdomNoise(),
    rng: np.random.Generator | None = None,
) -> OdomSample:
    v_x, v_y, r = state.v_x, state.v_y, state.psi_dot
    if rng is not None:
        e = rng.standard_normal(3)
        v_x += noise.v_x_std * e[0]
        v_y += noise.v_y_std * e[1]
        r += noise.psi_dot_std * e[2]
    return OdomSample(v_x, v_y, r)


def sensor_origin(pose: tuple[float, float, float], spec: LidarSpec) -> tuple[float, float]:
    x, y, psi = pose
    ox, oy = spec.mount_offset
    c, s = math.cos(psi), math.sin(psi)
    return x + c * ox - s * oy, y + s * ox + c * oy


def raycast_scan(
    pose: tuple[float, float, float],
    track: TrackMap2D,
    opponents: list[OrientedBox] = (),
    spec: LidarSpec = LidarSpec(),
    rng: np.random.Generator | None = None,
    tick: int = 0,
) -> Scan:
    """Nearest-hit range per beam against map segments and opponent footprints.

    Hits beyond ``range_max`` or rays that hit nothing report the sentinel
    ``range_max + 1``. Noisy ranges are clamped to [range_min, range_max].
    """
    ox, oy = sensor_origin(pose, spec)
    segs = track.segments
    if len(segs):
        # segments entirely out of range cannot produce a valid return
        segs = segs[point_segment_distance(ox, oy, segs) <= spec.range_max]
    if opponents:
        segs = np.vstack([segs] + [box.edges() for box in opponents])
    world_angles = pose[2] + spec.beam_angles()
    dist = kernels.raycast(
        float(ox), float(oy), np.cos(world_angles), np.sin(world_angles), np.ascontiguousarray(segs)
    )
    hit = dist <= spec.range_max
    ranges = dist.copy()
    if rng is not None and spec.noise_std > 0:
        ranges = ranges + spec.noise_std * rng.standard_normal(spec.num_beams)
    ranges = np.where(hit, np.clip(ranges, spec.range_min, spec.range_max), spec.sentinel)
    return Scan(tick=tick, ranges=ranges, fov=spec.fov, range_max=spec.range_max)


def scan_endpoints(scan: Scan, pose: tuple[float, float, float], spec: LidarSpec) -> np.ndarray:
    """World-frame (k, 2) endpoints of the valid beams of ``scan`` taken at ``pose``."""
    ox, oy = sensor_origin(pose, spec)
    valid = scan.valid()
    ang = pose[2] + scan.angles[valid]
    r = scan.ranges[valid]
    return np.column_stack([ox + r * np.cos(ang), oy + r * np.sin(ang)])


__all__ = [
    "ImuNoise",
    "ImuSample",
    "LIDAR_PRESETS",
    "LidarSpec",
    "OdomNoise",
    "OdomSample",
    "Scan",
    "raycast_scan",
    "scan_endpoints",
    "sensor_origin",
    "synth_imu",
    "synth_odom",
]
