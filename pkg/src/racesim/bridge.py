"""Lockstep co-simulation over TCP: newline-delimited JSON frames out, commands in.

Protocol v1, one JSON object per line:

    frame   {"type":"frame","tick":int,"time":float,
             "imu":{"ax","ay","az","psi","psi_dot"},"odom":{"vx","vy","psi_dot"},
             "scan":{"fov","ranges":[...]}?, "pose":{"x","y","psi"}?}
    command {"type":"cmd","tick":int,"a":float,"delta":float}
    reset   {"type":"reset","pose":{"x","y","psi"}}

The server sends the frame for tick t and blocks until the command echoing
tick t arrives. A reset teleports the ego (at rest) without consuming the
tick. On a fatal condition the server sends {"type":"error","message":...}
before closing.
"""

from __future__ import annotations

import json
import logging
import math
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from racesim.dynamics import ControlInput
from racesim.evaluation import RunLog, RunRecord
from racesim.localize import PoseEstimate
from racesim.sensors import ImuSample, LidarSpec, OdomSample, Scan
from racesim.world import SensorFrame, World, WorldState

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1


class DecodeError(ValueError):
    def __init__(self, message: str, field_name: str | None = None):
        self.field = field_name
        super().__init__(message)


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class Command:
    tick: int
    a: float
    delta: float

    @property
    def control(self) -> ControlInput:
        return ControlInput(self.a, self.delta)


@dataclass(frozen=True)
class Reset:
    pose: tuple[float, float, float]


# --------------------------------------------------------------------------
# encoding


def _dumps(obj: dict) -> bytes:
    return (json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n").encode()


def _pose_dict(pose) -> dict:
    return {"x": float(pose[0]), "y": float(pose[1]), "psi": float(pose[2])}


def encode_frame(frame: SensorFrame) -> bytes:
    msg = {
        "type": "frame",
        "tick": int(frame.tick),
        "time": float(frame.time),
        "imu": {
            "ax": float(frame.imu.a_x),
            "ay": float(frame.imu.a_y),
            "az": float(frame.imu.a_z),
            "psi": float(frame.imu.psi),
            "psi_dot": float(frame.imu.psi_dot),
        },
        "odom": {"vx": float(frame.odom.v_x), "vy": float(frame.odom.v_y), "psi_dot": float(frame.odom.psi_dot)},
    }
    if frame.scan is not None:
        msg["scan"] = {"fov": float(frame.scan.fov), "ranges": [float(r) for r in frame.scan.ranges.tolist()]}
    if frame.pose is not None:
        msg["pose"] = _pose_dict(frame.pose)
    return _dumps(msg)


def encode_command(cmd: Command) -> bytes:
    return _dumps({"type": "cmd", "tick": int(cmd.tick), "a": float(cmd.a), "delta": float(cmd.delta)})


def encode_reset(reset: Reset) -> bytes:
    return _dumps({"type": "reset", "pose": _pose_dict(reset.pose)})


def _load(data: bytes | str) -> dict:
    try:
        obj = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DecodeError(f"malformed JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise DecodeError("message is not a JSON object")
    return obj


def _get(obj: dict, key: str, path: str = ""):
    name = f"{path}{key}"
    if key not in obj:
        raise DecodeError(f'missing field "{name}"', name)
    return obj[key]


def _num(obj: dict, key: str, path: str = "") -> float:
    v = _get(obj, key, path)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise DecodeError(f'field "{path}{key}" must be a finite number', f"{path}{key}")
    return float(v)


def _int(obj: dict, key: str) -> int:
    v = _get(obj, key)
    if isinstance(v, bool) or not isinstance(v, int) or v < 0:
        raise DecodeError(f'field "{key}" must be a non-negative integer', key)
    return v


def _obj(obj: dict, key: str) -> dict:
    v = _get(obj, key)
    if not isinstance(v, dict):
        raise DecodeError(f'field "{key}" must be an object', key)
    return v


def _pose(obj: dict, key: str) -> tuple[float, float, float]:
    p = _obj(obj, key)
    return (_num(p, "x", key + "."), _num(p, "y", key + "."), _num(p, "psi", key + "."))


def _expect_type(obj: dict, kind: str) -> None:
    t = _get(obj, "type")
    if t != kind:
        raise DecodeError(f'expected message type "{kind}", got {t!r}', "type")


def decode_frame(data: bytes | str, range_max: float = LidarSpec().range_max) -> SensorFrame:
    """Parse a frame. ``range_max`` is the receiver's LiDAR range, which the wire format leaves implicit."""
    obj = _load(data)
    _expect_type(obj, "frame")
    tick = _int(obj, "tick")
    imu_d = _obj(obj, "imu")
    imu = ImuSample(*(_num(imu_d, k, "imu.") for k in ("ax", "ay", "az", "psi", "psi_dot")))
    odom_d = _obj(obj, "odom")
    odom = OdomSample(*(_num(odom_d, k, "odom.") for k in ("vx", "vy", "psi_dot")))
    scan = None
    if "scan" in obj:
        s = _obj(obj, "scan")
        ranges = _get(s, "ranges", "scan.")
        if not isinstance(ranges, list) or len(ranges) < 2:
            raise DecodeError('field "scan.ranges" must be a list of at least 2 numbers', "scan.ranges")
        try:
            arr = np.array(ranges, dtype=np.float64)
        except (TypeError, ValueError):
            raise DecodeError('field "scan.ranges" must contain numbers only', "scan.ranges") from None
        scan = Scan(tick, arr, _num(s, "fov", "scan."), range_max)
    pose = _pose(obj, "pose") if "pose" in obj else None
    return SensorFrame(tick, _num(obj, "time"), imu, odom, scan, pose)


def decode_command(data: bytes | str) -> Command:
    obj = _load(data)
    _expect_type(obj, "cmd")
    return Command(_int(obj, "tick"), _num(obj, "a"), _num(obj, "delta"))


def decode_client_message(data: bytes | str) -> Command | Reset:
    obj = _load(data)
    kind = _get(obj, "type")
    if kind == "cmd":
        return Command(_int(obj, "tick"), _num(obj, "a"), _num(obj, "delta"))
    if kind == "reset":
        return Reset(_pose(obj, "pose"))
    raise DecodeError(f"unknown message type {kind!r}", "type")


def decode_server_message(data: bytes | str, range_max: float = LidarSpec().range_max) -> SensorFrame | str:
    """A frame, or the error text of a server error message."""
    obj = _load(data)
    if obj.get("type") == "error":
        return str(obj.get("message", ""))
    return decode_frame(data, range_max)


# --------------------------------------------------------------------------
# server


@dataclass(frozen=True)
class SessionConfig:
    timeout_ms: float | None = None  # None waits indefinitely
    on_timeout: str = "hold"  # hold | zero | abort
    max_ticks: int | None = None
    realtime: bool = False  # pace frames to wall-clock time

    def __post_init__(self):
        if self.on_timeout not in ("hold", "zero", "abort"):
            raise ValueError(f"on_timeout must be hold, zero or abort, got {self.on_timeout!r}")
        if self.timeout_ms is not None and not self.timeout_ms > 0:
            raise ValueError("timeout_ms must be positive")
        if self.max_ticks is not None and self.max_ticks < 0:
            raise ValueError("max_ticks must be non-negative")


@dataclass
class SessionResult:
    status: str  # completed | disconnected | timeout | protocol-error
    log: RunLog
    final_state: WorldState
    frames_sent: int = 0
    timeouts: int = 0
    error: str | None = None

    @property
    def clean(self) -> bool:
        return self.status == "completed"


_EOF = object()


def _reader(conn: socket.socket, q: queue.Queue) -> None:
    """Decode client lines into ``q``; ends with _EOF or a DecodeError."""
    try:
        with conn.makefile("rb") as fh:
            for line in fh:
                if not line.strip():
                    continue
                try:
                    q.put(decode_client_message(line))
                except DecodeError as exc:
                    q.put(exc)
                    return
    except OSError:
        pass
    q.put(_EOF)


class Server:
    """Listening endpoint hosting one lockstep session per accepted connection."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        try:
            self.sock.bind((host, port))
        except OSError:
            self.sock.close()
            raise
        self.sock.listen(1)
        self.host = host

    @property
    def port(self) -> int:
        return self.sock.getsockname()[1]

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def accept(self, timeout: float | None = None) -> socket.socket:
        self.sock.settimeout(timeout)
        conn, _ = self.sock.accept()
        conn.settimeout(None)
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return conn

    def serve_one(
        self,
        world: World,
        state: WorldState,
        cfg: SessionConfig = SessionConfig(),
        log_path=None,
        accept_timeout: float | None = None,
    ) -> SessionResult:
        conn = self.accept(accept_timeout)
        try:
            return run_session(conn, world, state, cfg, log_path)
        finally:
            _hangup(conn)


def _hangup(sock: socket.socket) -> None:
    # close() alone leaves the fd open while a makefile() reader holds it
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    sock.close()


def _send(conn: socket.socket, data: bytes) -> bool:
    try:
        conn.sendall(data)
        return True
    except OSError:
        return False


def run_session(conn: socket.socket, world: World, state: WorldState, cfg: SessionConfig, log_path=None) -> SessionResult:
    """Drive one lockstep session on an accepted connection.

    The run log is written to ``log_path`` whatever way the session ends.
    """
    q: queue.Queue = queue.Queue()
    threading.Thread(target=_reader, args=(conn, q), daemon=True).start()
    timeout = None if cfg.timeout_ms is None else cfg.timeout_ms / 1000.0
    result = SessionResult("completed", RunLog(), state)
    last = ControlInput(0.0, 0.0)
    timed_out: set[int] = set()
    t0 = time.monotonic()
    try:
        while cfg.max_ticks is None or state.tick < cfg.max_ticks:
            if cfg.realtime:
                wait = t0 + state.time - time.monotonic()
                if wait > 0:
                    time.sleep(wait)
            if not _send(conn, encode_frame(world.frame(state))):
                result.status = "disconnected"
                break
            result.frames_sent += 1
            cmd = None
            while cmd is None:
                try:
                    msg = q.get(timeout=timeout)
                except queue.Empty:
                    result.timeouts += 1
                    if cfg.on_timeout == "abort":
                        result.status = "timeout"
                        result.error = f"no command for tick {state.tick} within {cfg.timeout_ms} ms"
                        _send(conn, _dumps({"type": "error", "message": result.error}))
                        return result
                    timed_out.add(state.tick)
                    cmd = last if cfg.on_timeout == "hold" else ControlInput(0.0, 0.0)
                    break
                if msg is _EOF:
                    result.status = "disconnected"
                    return result
                if isinstance(msg, DecodeError):
                    result.status = "protocol-error"
                    result.error = str(msg)
                    _send(conn, _dumps({"type": "error", "message": result.error}))
                    return result
                if isinstance(msg, Reset):
                    state = world.reset_ego(state, msg.pose)
                    result.final_state = state
                    continue
                if msg.tick in timed_out:
                    continue  # late reply to a tick already resolved by the timeout policy
                if msg.tick != state.tick:
                    result.status = "protocol-error"
                    result.error = f"tick mismatch: expected {state.tick}, got {msg.tick}"
                    _send(conn, _dumps({"type": "error", "message": result.error}))
                    return result
                cmd = msg.control
            result.log.append(
                RunRecord(state.tick, state.time, state.ego, cmd, collisions=tuple(state.collisions))
            )
            last = cmd
            state = world.advance(state, cmd)
            result.final_state = state
        return result
    finally:
        if log_path is not None:
            result.log.write(log_path)


def serve(endpoint: tuple[str, int], world: World, state: WorldState, cfg: SessionConfig = SessionConfig(), log_path=None) -> SessionResult:
    with Server(*endpoint) as srv:
        return srv.serve_one(world, state, cfg, log_path)


# --------------------------------------------------------------------------
# clients


class ConnectionRefused(ConnectionError):
    pass


class BridgeClient:
    def __init__(self, host: str, port: int, range_max: float = LidarSpec().range_max, connect_timeout: float = 5.0):
        try:
            self.sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as exc:
            raise ConnectionRefused(f"cannot connect to {host}:{port}: {exc}") from exc
        self.sock.settimeout(None)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._rfile = self.sock.makefile("rb")
        self.range_max = range_max

    def recv(self) -> SensorFrame | None:
        """Next frame, or None once the server has closed the session."""
        try:
            line = self._rfile.readline()
        except OSError:
            return None
        if not line:
            return None
        msg = decode_server_message(line, self.range_max)
        if isinstance(msg, str):
            raise ProtocolError(msg)
        return msg

    def send_command(self, cmd: Command) -> bool:
        return _send(self.sock, encode_command(cmd))

    def send_reset(self, pose) -> bool:
        return _send(self.sock, encode_reset(Reset(tuple(float(v) for v in pose))))

    def close(self) -> None:
        _hangup(self.sock)
        self._rfile.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class ClientResult:
    frames: int = 0
    estimates: list[tuple[int, PoseEstimate]] = field(default_factory=list)


def run_client(
    host: str,
    port: int,
    policy: Callable[[SensorFrame], ControlInput],
    range_max: float = LidarSpec().range_max,
    delay: Callable[[int], float] | None = None,
    max_frames: int | None = None,
) -> ClientResult:
    """Answer every frame with ``policy(frame)`` until the server ends the session.

    ``delay(tick)`` seconds are slept before each reply, for transport tests.
    """
    out = ClientResult()
    with BridgeClient(host, port, range_max) as cli:
        while max_frames is None or out.frames < max_frames:
            frame = cli.recv()
            if frame is None:
                break
            out.frames += 1
            u = policy(frame)
            if delay is not None:
                d = delay(frame.tick)
                if d > 0:
                    time.sleep(d)
            if not cli.send_command(Command(frame.tick, u.a, u.delta)):
                break
    return out


def check_command_log(commands: list[Command]) -> None:
    """Raise ValueError unless ticks run contiguously from 0."""
    for i, c in enumerate(commands):
        if c.tick != i:
            raise ValueError(f"command log tick gap: expected tick {i}, found {c.tick}")


def replay_client(commands: list[Command], endpoint: tuple[str, int], delay: Callable[[int], float] | None = None) -> ClientResult:
    """Replay recorded commands tick for tick; the log is validated before connecting."""
    check_command_log(commands)
    if not commands:
        return ClientResult()
    by_tick = {c.tick: c for c in commands}

    def policy(frame: SensorFrame) -> ControlInput:
        c = by_tick.get(frame.tick)
        if c is None:
            raise ProtocolError(f"no recorded command for tick {frame.tick}")
        return c.control

    return run_client(endpoint[0], endpoint[1], policy, delay=delay, max_frames=len(commands))


def commands_from_log(log: RunLog) -> list[Command]:
    return [Command(r.tick, r.cmd.a, r.cmd.delta) for r in log.records]
