"""Run configuration: one YAML file, relative paths resolved against its directory.

Keys (all optional)::

    seed: 0
    dt: 0.01
    scan_every: 4                 # physics ticks per LiDAR scan
    vehicle: f1tenth              # preset name, or a mapping with optional
                                  # "preset" plus VehicleParams field overrides
    lidar: ust10lx-like           # preset name, or a mapping of LidarSpec fields
    imu_noise: {accel_std: 0, yaw_std: 0, yaw_rate_std: 0}
    odom_noise: {v_x_std: 0, v_y_std: 0, psi_dot_std: 0}
    map: track.json               # TrackMap2D served by `sim run`
    start_pose: [x, y, psi]
    ego_size: [half_length, half_width]
    opponents:
      - {path: opp.csv, closed: true, half_length: 0.25, half_width: 0.15}
    expose_ground_truth: false
    realtime: false
    twin: {...}                   # pipeline parameters
    session: {timeout_ms: null, on_timeout: hold, max_ticks: null}
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from racesim import dynamics
from racesim.dynamics import PacejkaCoeffs, VehicleParams
from racesim.sensors import LIDAR_PRESETS, ImuNoise, LidarSpec, OdomNoise
from racesim.twin.pipeline import TwinParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OpponentSpec:
    path: Path
    closed: bool = True
    half_length: float = 0.25
    half_width: float = 0.15


@dataclass
class RunConfig:
    seed: int = 0
    dt: float = 0.01
    scan_every: int = 4
    vehicle: VehicleParams = field(default_factory=lambda: dynamics.preset("f1tenth"))
    lidar: LidarSpec = field(default_factory=lambda: LIDAR_PRESETS["ust10lx-like"])
    imu_noise: ImuNoise = field(default_factory=ImuNoise)
    odom_noise: OdomNoise = field(default_factory=OdomNoise)
    map: Path | None = None
    start_pose: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ego_size: tuple[float, float] = (0.25, 0.15)
    opponents: list[OpponentSpec] = field(default_factory=list)
    expose_ground_truth: bool = False
    realtime: bool = False
    twin: TwinParams = field(default_factory=TwinParams)
    timeout_ms: float | None = None
    on_timeout: str = "hold"
    max_ticks: int | None = None

    def __post_init__(self):
        if not (isinstance(self.dt, (int, float)) and self.dt > 0):
            raise ConfigError("dt must be positive")
        if not isinstance(self.scan_every, int) or self.scan_every < 1:
            raise ConfigError("scan_every must be a positive integer")
        if self.on_timeout not in ("hold", "zero", "abort"):
            raise ConfigError("on_timeout must be hold, zero or abort")
        for p in ([self.map] if self.map is not None else []) + [o.path for o in self.opponents]:
            if not Path(p).is_file():
                raise ConfigError(f"referenced file does not exist: {p}")


def _vehicle(value) -> VehicleParams:
    if isinstance(value, str):
        return dynamics.preset(value)
    if not isinstance(value, dict):
        raise ConfigError("vehicle must be a preset name or a mapping")
    data = dict(value)
    base = dynamics.preset(data.pop("preset", "f1tenth")).to_dict()
    for axle in ("pacejka_front", "pacejka_rear"):
        if axle in data:
            base[axle] = {**base[axle], **data.pop(axle)}
    unknown = set(data) - set(base)
    if unknown:
        raise ConfigError(f"unknown vehicle parameters: {sorted(unknown)}")
    base.update(data)
    return VehicleParams.from_dict(base)


def _lidar(value) -> LidarSpec:
    if isinstance(value, str):
        if value not in LIDAR_PRESETS:
            raise ConfigError(f"unknown lidar preset {value!r}; choose from {sorted(LIDAR_PRESETS)}")
        return LIDAR_PRESETS[value]
    if not isinstance(value, dict):
        raise ConfigError("lidar must be a preset name or a mapping")
    data = dict(value)
    base = dataclasses.asdict(LIDAR_PRESETS[data.pop("preset", "ust10lx-like")])
    if "fov_deg" in data:
        data["fov"] = math.radians(data.pop("fov_deg"))
    unknown = set(data) - set(base)
    if unknown:
        raise ConfigError(f"unknown lidar parameters: {sorted(unknown)}")
    base.update(data)
    base["mount_offset"] = tuple(base["mount_offset"])
    return LidarSpec(**base)


def _plain(cls, value, what: str):
    if value is None:
        return cls()
    if not isinstance(value, dict):
        raise ConfigError(f"{what} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(value) - names
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    return cls(**value)


_TOP_KEYS = {
    "seed", "dt", "scan_every", "vehicle", "lidar", "imu_noise", "odom_noise", "map", "start_pose",
    "ego_size", "opponents", "expose_ground_truth", "realtime", "twin", "session",
}


def from_mapping(data: dict, base_dir: Path = Path(".")) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    try:
        session = data.get("session") or {}
        unknown = set(session) - {"timeout_ms", "on_timeout", "max_ticks"}
        if unknown:
            raise ConfigError(f"unknown session keys: {sorted(unknown)}")
        opponents = []
        for o in data.get("opponents") or []:
            if isinstance(o, str):
                o = {"path": o}
            o = dict(o)
            o["path"] = resolve(o["path"])
            opponents.append(OpponentSpec(**o))
        return RunConfig(
            seed=int(data.get("seed", 0)),
            dt=float(data.get("dt", 0.01)),
            scan_every=data.get("scan_every", 4),
            vehicle=_vehicle(data.get("vehicle", "f1tenth")),
            lidar=_lidar(data.get("lidar", "ust10lx-like")),
            imu_noise=_plain(ImuNoise, data.get("imu_noise"), "imu_noise"),
            odom_noise=_plain(OdomNoise, data.get("odom_noise"), "odom_noise"),
            map=resolve(data["map"]) if data.get("map") is not None else None,
            start_pose=tuple(float(v) for v in data.get("start_pose", (0.0, 0.0, 0.0))),
            ego_size=tuple(float(v) for v in data.get("ego_size", (0.25, 0.15))),
            opponents=opponents,
            expose_ground_truth=bool(data.get("expose_ground_truth", False)),
            realtime=bool(data.get("realtime", False)),
            twin=TwinParams.from_dict(data.get("twin") or {}),
            timeout_ms=session.get("timeout_ms"),
            on_timeout=session.get("on_timeout", "hold"),
            max_ticks=session.get("max_ticks"),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None


def load(path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_mapping(data, path.parent)


def to_mapping(cfg: RunConfig, base_dir: Path | None = None) -> dict:
    def rel(p: Path) -> str:
        if base_dir is not None:
            try:
                return str(Path(p).relative_to(base_dir))
            except ValueError:
                pass
        return str(p)

    lidar = dataclasses.asdict(cfg.lidar)
    lidar["mount_offset"] = list(lidar["mount_offset"])
    out = {
        "seed": cfg.seed,
        "dt": cfg.dt,
        "scan_every": cfg.scan_every,
        "vehicle": cfg.vehicle.to_dict(),
        "lidar": lidar,
        "imu_noise": dataclasses.asdict(cfg.imu_noise),
        "odom_noise": dataclasses.asdict(cfg.odom_noise),
        "start_pose": list(cfg.start_pose),
        "ego_size": list(cfg.ego_size),
        "opponents": [
            {"path": rel(o.path), "closed": o.closed, "half_length": o.half_length, "half_width": o.half_width}
            for o in cfg.opponents
        ],
        "expose_ground_truth": cfg.expose_ground_truth,
        "realtime": cfg.realtime,
        "twin": cfg.twin.to_dict(),
        "session": {"timeout_ms": cfg.timeout_ms, "on_timeout": cfg.on_timeout, "max_ticks": cfg.max_ticks},
    }
    if cfg.map is not None:
        out["map"] = rel(cfg.map)
    return out


def save(cfg: RunConfig, path) -> None:
    path = Path(path)
    Path(path).write_text(yaml.safe_dump(to_mapping(cfg, path.parent), sort_keys=False))


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    """Copy of ``cfg`` with the non-None keyword values replaced."""
    changes = {k: v for k, v in kw.items() if v is not None}
    return dataclasses.replace(cfg, **changes) if changes else cfg


__all__ = ["ConfigError", "OpponentSpec", "PacejkaCoeffs", "RunConfig", "from_mapping", "load", "save", "to_mapping", "with_overrides"]
