"""The command line, exercised as a user would: one subprocess per command."""

import json
import re
import socket
import subprocess
import sys

import pytest

from racesim.evaluation import RunLog


def racesim(*args, timeout=300):
    return subprocess.run(
        [sys.executable, "-m", "racesim.cli", *map(str, args)], capture_output=True, text=True, timeout=timeout
    )


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def serve_and_drive(sim_args, drive_args, timeout=300):
    """Start `sim run` on a free port, run `drive` against it, return both results."""
    sim = subprocess.Popen(
        [sys.executable, "-m", "racesim.cli", "sim", "run", "--port", "0", *map(str, sim_args)],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
    )
    try:
        line = sim.stdout.readline()
        m = re.match(r"listening on [\d.]+:(\d+)", line)
        assert m, line + sim.stderr.read()
        drive = racesim("drive", "--port", m.group(1), *drive_args, timeout=timeout)
        out, err = sim.communicate(timeout=timeout)
    finally:
        if sim.poll() is None:
            sim.kill()
            sim.wait()
    return sim.returncode, out, err, drive


@pytest.fixture(scope="module")
def oval_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("oval")
    r = racesim("scenario", "gen-oval", "--out", d)
    assert r.returncode == 0, r.stderr
    return d


@pytest.fixture(scope="module")
def lap_log(oval_dir):
    """30 s of ground-truth driving on the oval, logged by the server."""
    path = oval_dir / "run.jsonl"
    code, out, err, drive = serve_and_drive(
        ["--config", oval_dir / "config.yaml", "--expose-ground-truth", "--ticks", 3000, "--log", path],
        ["--ref", oval_dir / "reference.csv"],
    )
    assert code == 0 and drive.returncode == 0, err + drive.stderr
    return path


def test_gen_oval_outputs(oval_dir):
    for name in ("track.json", "cloud.xyz", "reference.csv", "config.yaml"):
        assert (oval_dir / name).is_file()
    assert json.loads((oval_dir / "track.json").read_text())["segments"]


def test_version():
    r = racesim("--version")
    assert r.returncode == 0 and "racesim" in r.stdout


def test_twin_build_is_reproducible(oval_dir, tmp_path):
    outs = []
    for k in range(2):
        r = racesim("twin", "build", "--cloud", oval_dir / "cloud.xyz",
                    "--out-mesh", tmp_path / f"m{k}.json", "--out-map", tmp_path / f"t{k}.json",
                    "--report", tmp_path / f"r{k}.json")
        assert r.returncode == 0, r.stderr
        assert "poisson" in r.stdout
        outs.append([(tmp_path / f"{p}{k}.{e}").read_bytes() for p, e in (("m", "json"), ("t", "json"))])
    assert outs[0] == outs[1]


def test_twin_build_slice_above_walls(oval_dir, tmp_path):
    r = racesim("twin", "build", "--in", oval_dir / "cloud.xyz", "--slice-z", 5.0,
                "--out-mesh", tmp_path / "m.json", "--out-map", tmp_path / "t.json")
    assert r.returncode == 2 and "empty map" in r.stderr


def test_twin_build_missing_input(tmp_path):
    r = racesim("twin", "build", "--cloud", tmp_path / "nope.xyz", "--out-mesh", tmp_path / "m.json",
                "--out-map", tmp_path / "t.json")
    assert r.returncode == 2 and "not found" in r.stderr


def test_twin_build_malformed_cloud(tmp_path):
    (tmp_path / "bad.xyz").write_text("0 0 0\n1 1\n")
    r = racesim("twin", "build", "--cloud", tmp_path / "bad.xyz", "--out-mesh", tmp_path / "m.json",
                "--out-map", tmp_path / "t.json")
    assert r.returncode == 2 and "2" in r.stderr


def test_sim_run_port_in_use(oval_dir):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        s.listen(1)
        r = racesim("sim", "run", "--config", oval_dir / "config.yaml", "--port", s.getsockname()[1])
    assert r.returncode == 3 and "cannot listen" in r.stderr


def test_drive_connection_refused(oval_dir):
    r = racesim("drive", "--port", free_port(), "--ref", oval_dir / "reference.csv")
    assert r.returncode == 4 and "cannot connect" in r.stderr


def test_sim_run_fixed_ticks(oval_dir, tmp_path):
    path = tmp_path / "run.jsonl"
    code, out, err, drive = serve_and_drive(
        ["--config", oval_dir / "config.yaml", "--expose-ground-truth", "--ticks", 100, "--log", path],
        ["--ref", oval_dir / "reference.csv"],
    )
    assert code == 0, err
    summary = json.loads(out.strip().splitlines()[-1])
    assert summary["status"] == "completed" and summary["ticks"] == 100
    assert len(RunLog.read(path)) == 100
    assert json.loads(drive.stdout)["mode"] == "no-SE"


def test_drive_without_ground_truth_is_an_error(oval_dir):
    code, _, _, drive = serve_and_drive(["--config", oval_dir / "config.yaml", "--ticks", 10],
                                        ["--ref", oval_dir / "reference.csv"])
    assert drive.returncode == 1 and "ground-truth" in drive.stderr


def test_thirty_seconds_complete_a_lap(lap_log, oval_dir):
    r = racesim("eval", "gap", "--sim", lap_log, "--real", lap_log, "--ref", oval_dir / "reference.csv",
                "--json", oval_dir / "gap.json")
    assert r.returncode == 0, r.stderr
    report = json.loads((oval_dir / "gap.json").read_text())
    assert report["laps"]["sim"] >= 1
    assert report["deltas"] == {"T_lap": 0.0, "d_max": 0.0, "d_avg": 0.0}
    assert report["sim"]["d_max"] < 0.3
    assert "delta" in r.stdout


def test_eval_gap_reports_bad_line(lap_log, tmp_path, oval_dir):
    lines = lap_log.read_text().splitlines()
    lines[4] = lines[4][:-5]
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    r = racesim("eval", "gap", "--sim", bad, "--real", lap_log, "--ref", oval_dir / "reference.csv")
    assert r.returncode == 2 and "bad.jsonl:5" in r.stderr


def test_eval_reduction_prints_percent(tmp_path):
    r = racesim("eval", "reduction", "--baseline", 5.48, "--ours", 1.03, "--json", tmp_path / "r.json")
    assert r.returncode == 0 and "81%" in r.stdout
    assert json.loads((tmp_path / "r.json").read_text())["reduction"] == pytest.approx(0.812, abs=5e-4)


def test_localize_and_rmse(lap_log, oval_dir, tmp_path):
    est = tmp_path / "est.jsonl"
    r = racesim("localize", "--map", oval_dir / "track.json", "--log", lap_log, "--out", est,
                "--config", oval_dir / "config.yaml")
    assert r.returncode == 0, r.stderr
    summary = json.loads(r.stdout)
    # along-track position is weakly observed on the straights, so a few cells of error are expected
    assert summary["estimates"] == 750 and summary["rmse_pos"] < 0.1

    r = racesim("eval", "rmse", "--est", est, "--truth", lap_log, "--json", tmp_path / "rmse.json")
    assert r.returncode == 0, r.stderr
    assert json.loads((tmp_path / "rmse.json").read_text())["rmse_pos"] == pytest.approx(summary["rmse_pos"])

    r = racesim("eval", "rmse", "--est", est, "--truth", lap_log, "--strict")
    assert r.returncode == 2 and "tick-aligned" in r.stderr


def test_gen_opponent(oval_dir, tmp_path):
    r = racesim("scenario", "gen-opponent", "--ref", oval_dir / "reference.csv", "--out", tmp_path / "o.csv")
    assert r.returncode == 0, r.stderr
    assert json.loads(r.stdout)["waypoints"] > 10


def test_unknown_config_key(tmp_path, oval_dir):
    (tmp_path / "c.yaml").write_text("wheels: 4\n")
    r = racesim("sim", "run", "--config", tmp_path / "c.yaml", "--port", 0)
    assert r.returncode == 2 and "wheels" in r.stderr


def test_entry_point_runs_main():
    from racesim import cli

    assert cli.main(["eval", "reduction", "--baseline", "1", "--ours", "1"]) == 0
