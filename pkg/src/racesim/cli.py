"""Command-line entry point.

Exit codes: 0 success, 1 internal error, 2 bad input, 3 environment (e.g. port
in use), 4 connectivity (connection refused, client timeout).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from racesim import __version__

log = logging.getLogger("racesim")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_ENV, EXIT_CONN = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        self.code = code
        super().__init__(message)


def _require_file(path, what: str = "file") -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {p}")
    return p


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_config(args):
    from racesim import config

    cfg = config.load(_require_file(args.config, "config")) if getattr(args, "config", None) else config.RunConfig()
    return cfg


def _load_map_or_grid(path, resolution: float):
    """A TrackMap2D JSON is rasterized; an occupancy-grid JSON is used as is."""
    from racesim.geometry import TrackMap2D
    from racesim.localize import OccupancyGrid, rasterize

    data = json.loads(_require_file(path, "map").read_text())
    if "cells" in data:
        return OccupancyGrid.from_json(data), None
    if "segments" in data:
        track = TrackMap2D.from_json(data)
        return rasterize(track, resolution), track
    raise CliError(f"{path}: neither a track map nor an occupancy grid")


# --------------------------------------------------------------------------
# scenario


def cmd_scenario_gen_oval(args) -> int:
    from racesim import config
    from racesim.evaluation import ReferenceTrajectory
    from racesim.scenario import oval, scan_cloud
    from racesim.sensors import LIDAR_PRESETS, LidarSpec

    sc = oval(args.straight, args.radius, args.width)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sc.track.save(out / "track.json")
    ref = ReferenceTrajectory(sc.centerline[:, :2], True, speeds=np.full(len(sc.centerline), args.speed))
    ref.to_csv(out / "reference.csv")

    rng = np.random.default_rng(args.seed)
    base = LIDAR_PRESETS["ust10lx-like"]
    spec = LidarSpec(base.num_beams, base.fov, base.range_min, base.range_max, base.rate, args.noise)
    idx = np.linspace(0, len(sc.centerline), args.poses, endpoint=False).astype(int)
    cloud = scan_cloud(sc.track, sc.centerline[idx], spec, rng, args.strays)
    cloud_path = out / ("cloud.ply" if args.format == "ply" else "cloud.xyz")
    (cloud.save_ply if args.format == "ply" else cloud.save_xyz)(cloud_path)

    cfg = config.RunConfig(seed=args.seed, map=out / "track.json", start_pose=sc.start_pose())
    config.save(cfg, out / "config.yaml")
    print(json.dumps({"track": str(out / "track.json"), "cloud": str(cloud_path), "points": len(cloud),
                      "reference": str(out / "reference.csv"), "config": str(out / "config.yaml"),
                      "lap_length": sc.lap_length}))
    return EXIT_OK


def cmd_scenario_gen_opponent(args) -> int:
    from racesim.evaluation import ReferenceTrajectory
    from racesim.world import OpponentTrajectory

    ref = ReferenceTrajectory.from_csv(_require_file(args.ref, "reference"))
    s = ref.arc_length
    # resample every `spacing` metres starting `offset` metres along the reference
    total = ref.length
    n = max(int(total / args.spacing), 3)
    targets = (args.offset + np.arange(n) * (total / n)) % total
    seg = ref.segments()
    lens = ref.segment_lengths()
    idx = np.searchsorted(s, targets, side="right") - 1
    frac = (targets - s[idx]) / lens[idx]
    xy = seg[idx, :2] + frac[:, None] * (seg[idx, 2:] - seg[idx, :2])
    tangent = seg[idx, 2:] - seg[idx, :2]
    psi = np.arctan2(tangent[:, 1], tangent[:, 0])
    normal = np.column_stack([-np.sin(psi), np.cos(psi)])
    xy = xy + args.lateral * normal
    wp = np.column_stack([xy, psi, np.full(n, args.speed)])
    OpponentTrajectory(wp, closed=True).to_csv(args.out)
    print(json.dumps({"waypoints": n, "loop_time": OpponentTrajectory(wp).loop_time(), "out": str(args.out)}))
    return EXIT_OK


# --------------------------------------------------------------------------
# twin


def cmd_twin_build(args) -> int:
    from racesim.twin import load_pointcloud
    from racesim.twin.pipeline import TwinParams, build_twin

    params = _load_config(args).twin if args.config else TwinParams()
    if args.poisson_radius is not None:
        params.poisson_radius = args.poisson_radius
    if args.slice_z is not None:
        params.slice_z = args.slice_z
    cloud = load_pointcloud(_require_file(args.cloud, "point cloud"), args.format)
    result = build_twin(cloud, params)
    result.mesh.save(args.out_mesh)
    result.track.save(args.out_map)
    if args.report:
        _write_json(args.report, result.report)
    for st in result.report["stages"]:
        counts = ", ".join(f"{k}={v}" for k, v in st.items() if k != "stage")
        print(f"{st['stage']:<28} {counts}")
    if len(result.track) == 0:
        raise CliError("twin produced an empty map; check the slice height and ball radii")
    return EXIT_OK


# --------------------------------------------------------------------------
# simulation


def make_world(cfg, track=None):
    from racesim.dynamics import VehicleState
    from racesim.geometry import TrackMap2D
    from racesim.world import Opponent, OpponentTrajectory, SimConfig, World

    if track is None:
        if cfg.map is None:
            raise CliError("no map configured; pass --map or set `map` in the config")
        track = TrackMap2D.load(cfg.map)
    sim = SimConfig(
        dt=cfg.dt,
        scan_every=cfg.scan_every,
        vehicle=cfg.vehicle,
        lidar=cfg.lidar,
        imu_noise=cfg.imu_noise,
        odom_noise=cfg.odom_noise,
        ego_half_length=cfg.ego_size[0],
        ego_half_width=cfg.ego_size[1],
        expose_ground_truth=cfg.expose_ground_truth,
    )
    opponents = [
        Opponent(OpponentTrajectory.from_csv(o.path, o.closed), o.half_length, o.half_width) for o in cfg.opponents
    ]
    world = World(track, sim, opponents)
    return world, world.initial_state(VehicleState(*cfg.start_pose), cfg.seed)


def cmd_sim_run(args) -> int:
    from racesim import config
    from racesim.bridge import Server, SessionConfig

    cfg = _load_config(args)
    cfg = config.with_overrides(
        cfg,
        seed=args.seed,
        map=Path(args.map) if args.map else None,
        timeout_ms=args.timeout_ms,
        on_timeout=args.on_timeout,
        max_ticks=args.ticks,
        expose_ground_truth=True if args.expose_ground_truth else None,
        realtime=True if args.realtime else None,
    )
    if cfg.map is not None:
        _require_file(cfg.map, "map")
    world, state = make_world(cfg)
    session = SessionConfig(cfg.timeout_ms, cfg.on_timeout, cfg.max_ticks, cfg.realtime)
    try:
        server = Server(args.host, args.port)
    except OSError as exc:
        raise CliError(f"cannot listen on {args.host}:{args.port}: {exc.strerror or exc}", EXIT_ENV) from None
    with server:
        print(f"listening on {args.host}:{server.port}", flush=True)
        try:
            result = server.serve_one(world, state, session, args.log, args.accept_timeout)
        except TimeoutError:
            raise CliError("no client connected before the accept timeout", EXIT_CONN) from None
    summary = {
        "status": result.status,
        "ticks": len(result.log),
        "frames_sent": result.frames_sent,
        "timeouts": result.timeouts,
        "log_hash": result.log.hash(),
        "collisions": sum(1 for r in result.log.records if r.collisions),
    }
    if result.error:
        summary["error"] = result.error
    print(json.dumps(summary), flush=True)
    if result.status == "protocol-error":
        return EXIT_INPUT
    if result.status == "timeout":
        return EXIT_CONN
    return EXIT_OK


def cmd_drive(args) -> int:
    from racesim.bridge import ConnectionRefused, ProtocolError, run_client
    from racesim.control import Driver, PurePursuit
    from racesim.evaluation import ReferenceTrajectory

    cfg = _load_config(args)
    ref = ReferenceTrajectory.from_csv(_require_file(args.ref, "reference"))
    speed = args.speed
    if speed is None:
        speed = float(np.mean(ref.speeds)) if ref.speeds is not None else 3.0
    ctrl = PurePursuit(ref, cfg.vehicle.wheelbase, speed, delta_max=cfg.vehicle.delta_max)
    grid = None
    if args.map:
        grid, _ = _load_map_or_grid(args.map, args.resolution)
    driver = Driver(ctrl, grid=grid, spec=cfg.lidar)
    try:
        res = run_client(args.host, args.port, driver, range_max=cfg.lidar.range_max)
    except ConnectionRefused as exc:
        raise CliError(str(exc), EXIT_CONN) from None
    except ProtocolError as exc:
        raise CliError(f"server reported: {exc}", EXIT_INPUT) from None
    if args.est_log:
        with open(args.est_log, "w") as fh:
            for tick, est in driver.estimates:
                fh.write(json.dumps({"tick": tick, "estimate": est.to_dict()}, sort_keys=True) + "\n")
    print(json.dumps({"frames": res.frames, "mode": "SE" if grid is not None else "no-SE"}))
    return EXIT_OK


# --------------------------------------------------------------------------
# localization


def cmd_localize(args) -> int:
    from racesim.control import ScanTracker
    from racesim.evaluation import RunLog, pose_rmse
    from racesim.geometry import TrackMap2D
    from racesim.localize import PoseEstimate
    from racesim.sensors import raycast_scan

    cfg = _load_config(args)
    grid, map_track = _load_map_or_grid(args.map, args.resolution)
    if args.track:
        world_track = TrackMap2D.load(_require_file(args.track, "track"))
    elif map_track is not None:
        world_track = map_track
    else:
        raise CliError("--track is required when --map is an occupancy grid")
    runlog = RunLog.read(_require_file(args.log, "run log"))
    if len(runlog) == 0:
        raise CliError("run log is empty")
    seed = cfg.seed if args.seed is None else args.seed
    tracker = None
    est, truth = [], []
    prev = None
    with open(args.out, "w") as fh:
        for rec in runlog.records:
            gt = rec.ground_truth
            if tracker is None:
                tracker = ScanTracker(grid, (gt.x, gt.y, gt.psi), cfg.lidar)
            else:
                # odometry prediction from the logged ground-truth motion
                tracker.predict(prev.v_x, prev.v_y, prev.psi_dot, rec.time - prev_time)
            prev, prev_time = gt, rec.time
            if rec.tick % args.every != 0:
                continue
            rng = np.random.default_rng([seed, rec.tick, 1])
            scan = raycast_scan((gt.x, gt.y, gt.psi), world_track, [], cfg.lidar, rng, rec.tick)
            if scan.valid().any():
                e = tracker.update_scan(scan)
            else:
                e = PoseEstimate(*tracker.pose, 0.0)
            fh.write(json.dumps({"tick": rec.tick, "estimate": e.to_dict()}, sort_keys=True) + "\n")
            est.append(e.pose)
            truth.append((gt.x, gt.y, gt.psi))
    dpos, dpsi = pose_rmse(est, truth)
    print(json.dumps({"estimates": len(est), "rmse_pos": dpos, "rmse_psi": dpsi}))
    return EXIT_OK


# --------------------------------------------------------------------------
# evaluation


def _metrics_for(path, ref):
    from racesim.evaluation import RunLog, lap_metrics, mean_metrics

    laps = lap_metrics(RunLog.read(_require_file(path, "run log")), ref)
    if not laps:
        raise CliError(f"{path}: no complete laps")
    return mean_metrics(laps), len(laps)


def cmd_eval_gap(args) -> int:
    from racesim.evaluation import ReferenceTrajectory, format_percent, gap_delta

    ref = ReferenceTrajectory.from_csv(_require_file(args.ref, "reference"))
    sim, n_sim = _metrics_for(args.sim, ref)
    real, n_real = _metrics_for(args.real, ref)
    baseline = _metrics_for(args.baseline, ref)[0] if args.baseline else None
    report = gap_delta(sim, real, baseline)
    rows = [("", "T_lap [s]", "d_max [m]", "d_avg [m]")]
    rows.append(("sim", *(f"{getattr(sim, k):.4f}" for k in ("T_lap", "d_max", "d_avg"))))
    rows.append(("real", *(f"{getattr(real, k):.4f}" for k in ("T_lap", "d_max", "d_avg"))))
    if baseline is not None:
        rows.append(("baseline", *(f"{getattr(baseline, k):.4f}" for k in ("T_lap", "d_max", "d_avg"))))
    rows.append(("delta", *(f"{report.deltas[k]:.4f}" for k in ("T_lap", "d_max", "d_avg"))))
    if report.reductions is not None:
        rows.append(("baseline delta", *(f"{report.baseline_deltas[k]:.4f}" for k in ("T_lap", "d_max", "d_avg"))))
        rows.append(("reduction", *(format_percent(report.reductions[k]) for k in ("T_lap", "d_max", "d_avg"))))
    for r in rows:
        print(f"{r[0]:<16}" + "".join(f"{c:>12}" for c in r[1:]))
    if args.json:
        out = {"sim": sim.to_dict(), "real": real.to_dict(), "laps": {"sim": n_sim, "real": n_real}, **report.to_dict()}
        if baseline is not None:
            out["baseline"] = baseline.to_dict()
        _write_json(args.json, out)
    return EXIT_OK


def cmd_eval_rmse(args) -> int:
    from racesim.evaluation import align_by_tick, pose_rmse, read_pose_log

    te, est = read_pose_log(_require_file(args.est, "estimate log"))
    tt, tru = read_pose_log(_require_file(args.truth, "truth log"), "ground_truth" if args.truth_key is None else args.truth_key)
    if not args.strict:
        # keep only ticks that carry an estimate; the truth log usually has every tick
        keep = np.isin(tt, te)
        tt, tru = tt[keep], tru[keep]
    est, tru = align_by_tick(te, est, tt, tru)
    dpos, dpsi = pose_rmse(est, tru)
    print(f"pose RMSE over {len(est)} samples: position {dpos:.4f} m, heading {dpsi:.4f} rad")
    if args.json:
        _write_json(args.json, {"samples": len(est), "rmse_pos": dpos, "rmse_psi": dpsi})
    return EXIT_OK


def cmd_eval_reduction(args) -> int:
    from racesim.evaluation import format_percent, reduction

    r = reduction(args.ours, args.baseline)
    print(f"gap {args.baseline:g} -> {args.ours:g}: reduction {format_percent(r)}")
    if args.json:
        _write_json(args.json, {"baseline": args.baseline, "ours": args.ours, "reduction": r})
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="racesim", description="Racing co-simulation, digital-twin and evaluation tools.")
    p.add_argument("--version", action="version", version=f"racesim {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="group", required=True)

    # scenario
    sc = sub.add_parser("scenario", help="synthetic scenarios").add_subparsers(dest="cmd", required=True)
    g = sc.add_parser("gen-oval", help="oval track map, scan cloud, reference trajectory and config")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--straight", type=float, default=10.0)
    g.add_argument("--radius", type=float, default=4.0)
    g.add_argument("--width", type=float, default=2.0)
    g.add_argument("--speed", type=float, default=3.0, help="reference speed written to reference.csv")
    g.add_argument("--poses", type=int, default=30, help="scan poses used to build the cloud")
    g.add_argument("--noise", type=float, default=0.01, help="range noise std of the cloud scans [m]")
    g.add_argument("--strays", type=int, default=200, help="spurious points added to the cloud")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--format", choices=("xyz", "ply"), default="xyz")
    g.set_defaults(func=cmd_scenario_gen_oval)
    g = sc.add_parser("gen-opponent", help="opponent waypoint CSV following a reference trajectory")
    g.add_argument("--ref", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--speed", type=float, default=2.0)
    g.add_argument("--offset", type=float, default=5.0, help="start distance along the reference [m]")
    g.add_argument("--lateral", type=float, default=0.0, help="left offset from the reference [m]")
    g.add_argument("--spacing", type=float, default=0.5)
    g.set_defaults(func=cmd_scenario_gen_opponent)

    # twin
    tw = sub.add_parser("twin", help="digital-twin construction").add_subparsers(dest="cmd", required=True)
    g = tw.add_parser("build", help="point cloud -> mesh -> 2D map")
    g.add_argument("--cloud", "--in", dest="cloud", required=True, help="point cloud (.xyz text or ASCII .ply)")
    g.add_argument("--format", choices=("ascii-ply", "xyz-text"), default=None)
    g.add_argument("--config")
    g.add_argument("--poisson-radius", type=float)
    g.add_argument("--slice-z", type=float, help="height of the slicing plane [m]")
    g.add_argument("--out-mesh", required=True, help="mesh JSON output")
    g.add_argument("--out-map", required=True)
    g.add_argument("--report")
    g.set_defaults(func=cmd_twin_build)

    # sim
    sm = sub.add_parser("sim", help="simulation server").add_subparsers(dest="cmd", required=True)
    g = sm.add_parser("run", help="host one lockstep session")
    g.add_argument("--config")
    g.add_argument("--map", help="track map JSON (overrides the config)")
    g.add_argument("--host", default="127.0.0.1")
    g.add_argument("--port", type=int, default=7700, help="0 picks a free port")
    g.add_argument("--timeout-ms", type=float)
    g.add_argument("--on-timeout", choices=("hold", "zero", "abort"))
    g.add_argument("--expose-ground-truth", action="store_true")
    g.add_argument("--realtime", action="store_true", help="pace frames to wall-clock time")
    g.add_argument("--ticks", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--log", help="run log JSONL output")
    g.add_argument("--accept-timeout", type=float, default=None, help="seconds to wait for a client")
    g.set_defaults(func=cmd_sim_run)

    # drive
    g = sub.add_parser("drive", help="built-in pure-pursuit client")
    g.add_argument("--host", default="127.0.0.1")
    g.add_argument("--port", type=int, default=7700)
    g.add_argument("--ref", required=True, help="reference trajectory CSV (x, y[, v])")
    g.add_argument("--speed", type=float, help="target speed; defaults to the reference's mean v")
    g.add_argument("--config", help="run config providing vehicle and lidar parameters")
    g.add_argument("--map", help="map or grid JSON; enables scan-matching state estimation")
    g.add_argument("--resolution", type=float, default=0.05)
    g.add_argument("--est-log", help="pose estimate JSONL output (SE mode)")
    g.set_defaults(func=cmd_drive)

    # localize
    g = sub.add_parser("localize", help="offline scan matching along a run log")
    g.add_argument("--map", required=True, help="map or grid JSON to localize against")
    g.add_argument("--log", required=True, help="run log providing ground-truth poses")
    g.add_argument("--track", help="map JSON the scans are synthesized from (defaults to --map)")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--every", type=int, default=4, help="ticks between scans")
    g.add_argument("--resolution", type=float, default=0.05)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_localize)

    # eval
    ev = sub.add_parser("eval", help="metrics").add_subparsers(dest="cmd", required=True)
    g = ev.add_parser("gap", help="lap metrics and sim-to-real gap")
    g.add_argument("--sim", required=True)
    g.add_argument("--real", required=True)
    g.add_argument("--ref", required=True)
    g.add_argument("--baseline", help="baseline sim log for reduction ratios")
    g.add_argument("--json")
    g.set_defaults(func=cmd_eval_gap)
    g = ev.add_parser("rmse", help="pose RMSE of estimates against ground truth")
    g.add_argument("--est", required=True)
    g.add_argument("--truth", required=True)
    g.add_argument("--truth-key", help="record key holding the truth pose (default ground_truth)")
    g.add_argument("--strict", action="store_true", help="require identical tick sets")
    g.add_argument("--json")
    g.set_defaults(func=cmd_eval_rmse)
    g = ev.add_parser("reduction", help="relative reduction of a gap")
    g.add_argument("--baseline", type=float, required=True)
    g.add_argument("--ours", type=float, required=True)
    g.add_argument("--json")
    g.set_defaults(func=cmd_eval_reduction)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = os.environ.get("RACESIM_LOG_LEVEL") or ("DEBUG" if args.verbose > 1 else "INFO" if args.verbose else "WARNING")
    logging.basicConfig(level=level.upper(), format="%(levelname)s %(name)s: %(message)s")

    from racesim.bridge import ConnectionRefused, DecodeError
    from racesim.config import ConfigError
    from racesim.twin.cloud import PointCloudParseError
    from racesim.twin.pipeline import TwinStageError

    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConnectionRefused as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONN
    except (ConfigError, PointCloudParseError, TwinStageError, DecodeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - the stable internal-error exit code
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
