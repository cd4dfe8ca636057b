"""Sim-to-real metrics over run logs: lap timing, lateral deviation, gap deltas and pose RMSE."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from racesim.dynamics import ControlInput, VehicleState, wrap_angle
from racesim.localize import PoseEstimate


class LogParseError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


# --------------------------------------------------------------------------
# run logs


@dataclass(frozen=True)
class RunRecord:
    """State at ``tick`` together with the command applied from it."""

    tick: int
    time: float
    ground_truth: VehicleState
    cmd: ControlInput
    estimate: PoseEstimate | None = None
    collisions: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        d = {
            "tick": self.tick,
            "time": self.time,
            "ground_truth": self.ground_truth.to_dict(),
            "cmd": {"a": self.cmd.a, "delta": self.cmd.delta},
        }
        if self.estimate is not None:
            d["estimate"] = self.estimate.to_dict()
        if self.collisions:
            d["collisions"] = list(self.collisions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        gt = d["ground_truth"]
        est = d.get("estimate")
        return cls(
            tick=int(d["tick"]),
            time=float(d["time"]),
            ground_truth=VehicleState(
                float(gt["x"]), float(gt["y"]), float(gt["psi"]),
                float(gt["v_x"]), float(gt["v_y"]), float(gt["psi_dot"]),
            ),
            cmd=ControlInput(float(d["cmd"]["a"]), float(d["cmd"]["delta"])),
            estimate=PoseEstimate.from_dict(est) if est is not None else None,
            collisions=tuple(int(i) for i in d.get("collisions", ())),
        )


@dataclass
class RunLog:
    records: list[RunRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, rec: RunRecord) -> None:
        if self.records and rec.tick != self.records[-1].tick + 1:
            raise ValueError(f"tick {rec.tick} does not follow {self.records[-1].tick}")
        self.records.append(rec)

    @property
    def ticks(self) -> np.ndarray:
        return np.array([r.tick for r in self.records], dtype=np.int64)

    @property
    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.records], dtype=np.float64)

    def positions(self) -> np.ndarray:
        return np.array([(r.ground_truth.x, r.ground_truth.y) for r in self.records], dtype=np.float64).reshape(-1, 2)

    def poses(self) -> np.ndarray:
        return np.array(
            [(r.ground_truth.x, r.ground_truth.y, r.ground_truth.psi) for r in self.records], dtype=np.float64
        ).reshape(-1, 3)

    def commands(self) -> list[tuple[int, ControlInput]]:
        return [(r.tick, r.cmd) for r in self.records]

    def lines(self) -> list[str]:
        return [json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")) for r in self.records]

    def hash(self) -> str:
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    @classmethod
    def read(cls, path) -> "RunLog":
        log = cls()
        for lineno, d in _read_jsonl(path):
            try:
                rec = RunRecord.from_dict(d)
            except KeyError as exc:
                raise LogParseError(path, lineno, f"missing field {exc.args[0]!r}") from None
            except (TypeError, ValueError) as exc:
                raise LogParseError(path, lineno, f"bad record: {exc}") from None
            try:
                log.append(rec)
            except ValueError as exc:
                raise LogParseError(path, lineno, str(exc)) from None
        return log


def _read_jsonl(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogParseError(path, lineno, f"malformed JSON: {exc.msg}") from None
            if not isinstance(d, dict):
                raise LogParseError(path, lineno, "record is not a JSON object")
            yield lineno, d


def read_pose_log(path, key: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(ticks, poses) from a JSONL file of records carrying a pose.

    The pose is taken from ``key`` when given, otherwise from the first of
    "estimate", "pose", "ground_truth" present in the first record.
    """
    ticks, poses = [], []
    for lineno, d in _read_jsonl(path):
        if key is None:
            key = next((k for k in ("estimate", "pose", "ground_truth") if k in d), None)
            if key is None:
                raise LogParseError(path, lineno, "record carries no pose")
        try:
            p = d[key]
            ticks.append(int(d["tick"]))
            poses.append((float(p["x"]), float(p["y"]), float(p["psi"])))
        except KeyError as exc:
            raise LogParseError(path, lineno, f"missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise LogParseError(path, lineno, f"bad pose: {exc}") from None
    return np.array(ticks, dtype=np.int64), np.array(poses, dtype=np.float64).reshape(-1, 3)


# --------------------------------------------------------------------------
# reference trajectory and laps


@dataclass
class ReferenceTrajectory:
    points: np.ndarray  # (n, 2)
    closed: bool = True
    start_half_width: float = 2.0  # half length of the start line across the track
    speeds: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(self.points) < 2:
            raise ValueError("reference trajectory needs at least 2 points")
        if np.any(self.segment_lengths() <= 0):
            raise ValueError("reference points must be distinct consecutively")

    def segments(self) -> np.ndarray:
        p = self.points
        q = np.roll(p, -1, axis=0) if self.closed else p[1:]
        return np.hstack([p if self.closed else p[:-1], q])

    def segment_lengths(self) -> np.ndarray:
        s = self.segments()
        return np.hypot(s[:, 2] - s[:, 0], s[:, 3] - s[:, 1])

    @property
    def arc_length(self) -> np.ndarray:
        """Cumulative arc length at each point, starting at 0."""
        return np.concatenate([[0.0], np.cumsum(self.segment_lengths())[: len(self.points) - 1]])

    @property
    def length(self) -> float:
        return float(self.segment_lengths().sum())

    def start_line(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(origin, unit tangent, unit normal) of the start line at s = 0."""
        o = self.points[0]
        t = self.points[1] - o
        t = t / np.linalg.norm(t)
        return o, t, np.array([-t[1], t[0]])

    @classmethod
    def from_csv(cls, path, closed: bool = True, start_half_width: float = 2.0) -> "ReferenceTrajectory":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if not {"x", "y"} <= set(reader.fieldnames or ()):
                raise ValueError(f"{path}: reference CSV needs x and y columns")
            rows = list(reader)
        pts = np.array([(float(r["x"]), float(r["y"])) for r in rows])
        speeds = np.array([float(r["v"]) for r in rows]) if rows and "v" in rows[0] else None
        return cls(pts, closed, start_half_width, speeds)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.speeds is None:
                w.writerow(["x", "y"])
                w.writerows([[repr(x), repr(y)] for x, y in self.points.tolist()])
            else:
                w.writerow(["x", "y", "v"])
                w.writerows([[repr(x), repr(y), repr(v)] for (x, y), v in zip(self.points.tolist(), self.speeds.tolist())])


@dataclass(frozen=True)
class Lap:
    start: int  # first record index inside the lap
    stop: int  # one past the last record index inside the lap
    t_start: float  # interpolated crossing times
    t_end: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


def start_line_crossings(positions: np.ndarray, times: np.ndarray, ref: ReferenceTrajectory) -> list[tuple[int, float]]:
    """Forward crossings of the start line as (index of first sample past the line, time)."""
    o, t, n = ref.start_line()
    rel = positions - o
    along = rel @ t
    across = rel @ n
    out = []
    if len(positions) > 1 and along[0] == 0.0 and along[1] > 0.0 and abs(across[0]) <= ref.start_half_width:
        out.append((0, float(times[0])))
    for k in range(len(positions) - 1):
        a0, a1 = along[k], along[k + 1]
        if not (a0 < 0.0 <= a1):
            continue
        frac = -a0 / (a1 - a0)
        lateral = across[k] + frac * (across[k + 1] - across[k])
        if abs(lateral) > ref.start_half_width:
            continue
        out.append((k + 1, float(times[k] + frac * (times[k + 1] - times[k]))))
    return out


def segment_laps(log: RunLog, ref: ReferenceTrajectory) -> list[Lap]:
    """Complete laps between consecutive forward start-line crossings."""
    if len(log) == 0:
        raise ValueError("empty run log")
    cross = start_line_crossings(log.positions(), log.times, ref)
    return [Lap(i0, i1, t0, t1) for (i0, t0), (i1, t1) in zip(cross, cross[1:])]


# --------------------------------------------------------------------------
# lateral deviation


def _point_segment_dist(px: np.ndarray, py: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Distance from each point to each segment, broadcasting (k,) points against (k, m, 4) or (m, 4)."""
    x1, y1, x2, y2 = segs[..., 0], segs[..., 1], segs[..., 2], segs[..., 3]
    dx = x2 - x1
    dy = y2 - y1
    t = ((px - x1) * dx + (py - y1) * dy) / (dx * dx + dy * dy)
    t = np.clip(t, 0.0, 1.0)
    ex = x1 + t * dx - px
    ey = y1 + t * dy - py
    return np.sqrt(ex * ex + ey * ey)


def nearest_distances_bruteforce(positions: np.ndarray, ref: ReferenceTrajectory) -> np.ndarray:
    segs = ref.segments()
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    return np.array([_point_segment_dist(x, y, segs).min() for x, y in p.tolist()])


def nearest_distances(positions: np.ndarray, ref: ReferenceTrajectory) -> np.ndarray:
    """Unsigned distance from each position to the reference polyline.

    Segment midpoints are indexed in a k-d tree. A segment whose midpoint is
    farther than ``d + half_max`` cannot beat a known distance ``d``, so only
    the ball of that radius is examined exactly.
    """
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    segs = ref.segments()
    mids = 0.5 * (segs[:, :2] + segs[:, 2:])
    half_max = 0.5 * float(ref.segment_lengths().max())
    tree = cKDTree(mids)
    _, first = tree.query(p)
    bound = _point_segment_dist(p[:, 0], p[:, 1], segs[first]) + half_max
    out = np.empty(len(p))
    for i, (cand, (x, y)) in enumerate(zip(tree.query_ball_point(p, bound * (1 + 1e-12) + 1e-12), p.tolist())):
        out[i] = _point_segment_dist(x, y, segs[np.asarray(cand, dtype=np.int64)]).min()
    return out


def lateral_deviation(positions: np.ndarray, ref: ReferenceTrajectory) -> tuple[float, float]:
    """(mean, max) unsigned distance of the path from the reference."""
    d = nearest_distances(positions, ref)
    if d.size == 0:
        raise ValueError("empty path")
    return float(d.mean()), float(d.max())


# --------------------------------------------------------------------------
# lap metrics and gaps


@dataclass(frozen=True)
class LapMetrics:
    T_lap: float
    d_max: float
    d_avg: float

    def to_dict(self) -> dict:
        return {"T_lap": self.T_lap, "d_max": self.d_max, "d_avg": self.d_avg}


def lap_metrics(log: RunLog, ref: ReferenceTrajectory) -> list[LapMetrics]:
    pos = log.positions()
    out = []
    for lap in segment_laps(log, ref):
        d_avg, d_max = lateral_deviation(pos[lap.start : lap.stop], ref)
        out.append(LapMetrics(lap.duration, d_max, d_avg))
    return out


def mean_metrics(laps: list[LapMetrics]) -> LapMetrics:
    """Per-lap metrics averaged over laps."""
    if not laps:
        raise ValueError("no complete laps")
    return LapMetrics(
        float(np.mean([m.T_lap for m in laps])),
        float(np.mean([m.d_max for m in laps])),
        float(np.mean([m.d_avg for m in laps])),
    )


_METRICS = ("T_lap", "d_max", "d_avg")


def reduction(delta_ours: float, delta_baseline: float) -> float | None:
    """Relative reduction of a gap against a baseline gap; None when undefined."""
    if delta_baseline == 0:
        return None
    return 1.0 - delta_ours / delta_baseline


@dataclass(frozen=True)
class GapReport:
    deltas: dict
    baseline_deltas: dict | None = None
    reductions: dict | None = None

    def to_dict(self) -> dict:
        d = {"deltas": self.deltas}
        if self.baseline_deltas is not None:
            d["baseline_deltas"] = self.baseline_deltas
            d["reductions"] = self.reductions
        return d


def gap_delta(sim: LapMetrics, real: LapMetrics, baseline: LapMetrics | None = None) -> GapReport:
    """Componentwise |sim - real|; with a baseline sim, also the gap reduction per metric."""
    deltas = {k: abs(getattr(sim, k) - getattr(real, k)) for k in _METRICS}
    if baseline is None:
        return GapReport(deltas)
    base = {k: abs(getattr(baseline, k) - getattr(real, k)) for k in _METRICS}
    red = {k: reduction(deltas[k], base[k]) for k in _METRICS}
    return GapReport(deltas, base, red)


def format_percent(r: float | None) -> str:
    return "n/a" if r is None else f"{100 * r:.0f}%"


# --------------------------------------------------------------------------
# pose RMSE


def pose_rmse(estimates, truth) -> tuple[float, float]:
    """(position RMSE, heading RMSE) with heading errors wrapped to (-pi, pi]."""
    est = np.asarray(estimates, dtype=np.float64).reshape(-1, 3)
    tru = np.asarray(truth, dtype=np.float64).reshape(-1, 3)
    if len(est) != len(tru):
        raise ValueError(f"length mismatch: {len(est)} estimates vs {len(tru)} truth poses")
    if len(est) == 0:
        raise ValueError("empty pose sequences")
    dpos = est[:, :2] - tru[:, :2]
    dpsi = np.array([wrap_angle(a) for a in (est[:, 2] - tru[:, 2]).tolist()])
    return float(math.sqrt(np.mean(np.sum(dpos * dpos, axis=1)))), float(math.sqrt(np.mean(dpsi * dpsi)))


def align_by_tick(ticks_a: np.ndarray, a: np.ndarray, ticks_b: np.ndarray, b: np.ndarray):
    """Pair two tick-stamped sequences; every tick must appear in both."""
    if not np.array_equal(np.sort(ticks_a), np.sort(ticks_b)):
        missing = sorted(set(ticks_a.tolist()) ^ set(ticks_b.tolist()))
        raise ValueError(f"sequences are not tick-aligned; unmatched ticks start at {missing[:5]}")
    ia = np.argsort(ticks_a, kind="stable")
    ib = np.argsort(ticks_b, kind="stable")
    return a[ia], b[ib]
