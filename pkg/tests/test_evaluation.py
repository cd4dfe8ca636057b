import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from racesim.dynamics import ControlInput, VehicleState
from racesim.evaluation import (
    LapMetrics,
    LogParseError,
    ReferenceTrajectory,
    RunLog,
    RunRecord,
    align_by_tick,
    format_percent,
    gap_delta,
    lap_metrics,
    lateral_deviation,
    mean_metrics,
    nearest_distances,
    nearest_distances_bruteforce,
    pose_rmse,
    read_pose_log,
    reduction,
    segment_laps,
)
from racesim.localize import PoseEstimate

# 5 m square, 20 m around, start line mid-side at the origin pointing +x
SQUARE = ReferenceTrajectory([[0, 0], [2.5, 0], [2.5, 5], [-2.5, 5], [-2.5, 0]])


def point_at(ref: ReferenceTrajectory, s: float) -> tuple[float, float, float]:
    """Pose at arc length ``s`` (wrapped) along a closed reference."""
    s %= ref.length
    seg = ref.segments()
    lens = ref.segment_lengths()
    i = min(int(np.searchsorted(np.cumsum(lens), s, side="right")), len(lens) - 1)
    s0 = float(np.sum(lens[:i]))
    x1, y1, x2, y2 = seg[i]
    t = (s - s0) / lens[i]
    return x1 + t * (x2 - x1), y1 + t * (y2 - y1), math.atan2(y2 - y1, x2 - x1)


def drive_log(ref, speeds, dt=0.01, s0=-0.5, lateral=0.0, tick0=0) -> RunLog:
    """Constant-speed traversal: ``speeds[k]`` m/s at tick k, starting ``-s0`` m before the start line."""
    log = RunLog()
    s = s0
    for k, v in enumerate(speeds):
        x, y, psi = point_at(ref, s)
        x -= lateral * math.sin(psi)
        y += lateral * math.cos(psi)
        log.append(RunRecord(tick0 + k, (tick0 + k) * dt, VehicleState(x, y, psi, v_x=v), ControlInput()))
        s += v * dt
    return log


def test_two_loops_give_two_equal_laps():
    log = drive_log(SQUARE, [5.0] * 900)  # 9 s: 45 m from 0.5 m before the line
    laps = segment_laps(log, SQUARE)
    assert len(laps) == 2
    assert abs((laps[0].stop - laps[0].start) - (laps[1].stop - laps[1].start)) <= 1


def test_twenty_metre_loop_at_five_mps():
    laps = segment_laps(drive_log(SQUARE, [5.0] * 600), SQUARE)
    assert laps and all(abs(lap.duration - 4.0) <= 0.01 for lap in laps)


def test_stationary_log_has_no_laps():
    assert segment_laps(drive_log(SQUARE, [0.0] * 200), SQUARE) == []


def test_empty_log_is_an_error():
    with pytest.raises(ValueError):
        segment_laps(RunLog(), SQUARE)


def test_reverse_crossing_is_not_a_lap():
    log = drive_log(SQUARE, [-5.0] * 900, s0=0.5)
    assert segment_laps(log, SQUARE) == []


def test_crossing_outside_start_line_ignored():
    far = ReferenceTrajectory(SQUARE.points, start_half_width=0.1)
    assert segment_laps(drive_log(far, [5.0] * 900, lateral=0.3), far) == []
    assert len(segment_laps(drive_log(SQUARE, [5.0] * 900, lateral=0.3), SQUARE)) == 2


def test_lap_additivity():
    # two laps at different speeds; each lap's own slice (with its bounding samples)
    # segments to one lap, and joining the slices recovers both times
    speeds = [5.0] * 420 + [4.0] * 600
    run = drive_log(SQUARE, speeds)
    laps = segment_laps(run, SQUARE)
    assert len(laps) == 2
    pieces = [run.records[lap.start - 1 : lap.stop + 1] for lap in laps]
    times = []
    for piece in pieces:
        sub = RunLog(list(piece))
        (lap,) = segment_laps(sub, SQUARE)
        times.append(lap.duration)
    joined = RunLog(list(pieces[0]))
    for rec in pieces[1]:
        if rec.tick > joined.records[-1].tick:
            joined.append(rec)
    again = segment_laps(joined, SQUARE)
    assert len(again) == 2
    for got, want in zip(again, times):
        assert abs(got.duration - want) <= 0.01


def test_lateral_deviation_identity():
    assert lateral_deviation(SQUARE.points, SQUARE) == (0.0, 0.0)


def test_lateral_deviation_constant_offset():
    ref = ReferenceTrajectory([[0, 0], [10, 0]], closed=False)
    path = np.column_stack([np.linspace(0, 10, 51), np.full(51, 0.2)])
    d_avg, d_max = lateral_deviation(path, ref)
    assert d_avg == pytest.approx(0.2, abs=1e-12) and d_max == pytest.approx(0.2, abs=1e-12)


def test_lateral_deviation_excursion():
    ref = ReferenceTrajectory([[0, 0], [10, 0]], closed=False)
    x = np.linspace(0, 10, 100)
    y = np.zeros(100)
    y[40:50] = 0.5
    d_avg, d_max = lateral_deviation(np.column_stack([x, y]), ref)
    assert d_max == 0.5
    assert d_avg == pytest.approx(nearest_distances_bruteforce(np.column_stack([x, y]), ref).mean(), abs=1e-12)
    assert d_avg == pytest.approx(0.05, abs=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_indexed_distances_match_bruteforce(seed, closed):
    rng = np.random.default_rng(seed)
    pts = np.cumsum(rng.uniform(-1, 1, size=(int(rng.integers(2, 60)), 2)), axis=0)
    pts = pts[np.r_[True, np.any(np.diff(pts, axis=0) != 0, axis=1)]]
    if len(pts) < 2 or (closed and np.all(pts[0] == pts[-1])):
        return
    ref = ReferenceTrajectory(pts, closed=closed)
    path = rng.uniform(pts.min(0) - 2, pts.max(0) + 2, size=(200, 2))
    np.testing.assert_allclose(nearest_distances(path, ref), nearest_distances_bruteforce(path, ref), rtol=0, atol=1e-9)


def test_lap_metrics_on_offset_path():
    log = drive_log(SQUARE, [5.0] * 900, lateral=0.1)
    laps = lap_metrics(log, SQUARE)
    assert len(laps) == 2
    for m in laps:
        assert m.T_lap == pytest.approx(4.0, abs=0.01)
        assert 0.0 <= m.d_avg <= m.d_max <= 0.1 + 1e-12


def test_mean_metrics():
    m = mean_metrics([LapMetrics(4.0, 0.2, 0.1), LapMetrics(6.0, 0.4, 0.3)])
    assert (m.T_lap, m.d_max, m.d_avg) == (5.0, pytest.approx(0.3), pytest.approx(0.2))
    with pytest.raises(ValueError):
        mean_metrics([])


def test_gap_reduction_lap_time():
    real = LapMetrics(30.0, 0.5, 0.2)
    ours = LapMetrics(31.03, 0.5, 0.2)
    baseline = LapMetrics(35.48, 0.5, 0.2)
    rep = gap_delta(ours, real, baseline)
    assert rep.reductions["T_lap"] == pytest.approx(1 - 1.03 / 5.48, abs=1e-12)
    assert format_percent(rep.reductions["T_lap"]) == "81%"
    assert rep.reductions["d_max"] is None  # both deltas zero


def test_reduction_values():
    assert round(reduction(1.03, 5.48), 3) == 0.812
    assert round(reduction(0.02, 0.28), 2) == 0.93
    assert reduction(0.1, 0.0) is None
    assert format_percent(None) == "n/a"


def test_identical_metrics_give_zero_gap():
    m = LapMetrics(12.3, 0.4, 0.1)
    assert gap_delta(m, m).deltas == {"T_lap": 0.0, "d_max": 0.0, "d_avg": 0.0}
    assert "reductions" not in gap_delta(m, m).to_dict()


def test_rmse_identity_and_offset():
    truth = np.column_stack([np.linspace(0, 5, 20), np.linspace(0, 1, 20), np.linspace(-1, 1, 20)])
    assert pose_rmse(truth, truth) == (0.0, 0.0)
    est = truth + [3.0, 4.0, 0.0]
    pos, head = pose_rmse(est, truth)
    assert pos == pytest.approx(5.0, abs=1e-12) and head == 0.0


def test_rmse_heading_wraps():
    truth = np.array([[0.0, 0.0, 3.0], [1.0, 0.0, -3.0]])
    assert pose_rmse(truth + [0, 0, 2 * math.pi], truth)[1] == pytest.approx(0.0, abs=1e-12)
    # a 0.1 rad error straddling the ±pi seam is 0.1, not 2pi - 0.1
    est = np.array([[0.0, 0.0, -math.pi + 0.05], [1.0, 0.0, math.pi - 0.05]])
    tru = np.array([[0.0, 0.0, math.pi - 0.05], [1.0, 0.0, -math.pi + 0.05]])
    assert pose_rmse(est, tru)[1] == pytest.approx(0.1, abs=1e-12)


def test_rmse_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        pose_rmse(np.zeros((3, 3)), np.zeros((4, 3)))


def test_rmse_discrepancy_in_centimetres():
    assert round(100 * abs(0.1467 - 0.1641), 2) == 1.74


def test_align_by_tick():
    a, b = align_by_tick(np.array([2, 0, 1]), np.array([20, 0, 10]), np.array([0, 1, 2]), np.array([5, 6, 7]))
    assert a.tolist() == [0, 10, 20] and b.tolist() == [5, 6, 7]
    with pytest.raises(ValueError, match="tick-aligned"):
        align_by_tick(np.array([0, 1]), np.zeros(2), np.array([0, 2]), np.zeros(2))


def test_runlog_round_trip(tmp_path):
    log = drive_log(SQUARE, [5.0] * 50)
    rec = log.records[3]
    log.records[3] = RunRecord(rec.tick, rec.time, rec.ground_truth, ControlInput(0.5, -0.1),
                               PoseEstimate(1.0, 2.0, 0.1, 0.9), (0,))
    log.write(tmp_path / "r.jsonl")
    back = RunLog.read(tmp_path / "r.jsonl")
    assert back.records == log.records and back.hash() == log.hash()


def test_runlog_requires_contiguous_ticks():
    log = RunLog()
    log.append(RunRecord(0, 0.0, VehicleState(), ControlInput()))
    with pytest.raises(ValueError, match="does not follow"):
        log.append(RunRecord(2, 0.02, VehicleState(), ControlInput()))


def test_runlog_parse_errors_carry_line_numbers(tmp_path):
    lines = drive_log(SQUARE, [1.0] * 5).lines()
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(lines[:2] + ["{oops"] + lines[3:]) + "\n")
    with pytest.raises(LogParseError) as info:
        RunLog.read(path)
    assert info.value.lineno == 3 and "bad.jsonl:3" in str(info.value)

    d = json.loads(lines[1])
    del d["cmd"]
    path.write_text("\n".join([lines[0], json.dumps(d)]) + "\n")
    with pytest.raises(LogParseError, match="cmd") as info:
        RunLog.read(path)
    assert info.value.lineno == 2

    path.write_text("\n".join([lines[0], lines[2]]) + "\n")
    with pytest.raises(LogParseError) as info:
        RunLog.read(path)
    assert info.value.lineno == 2


def test_read_pose_log(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text('{"tick":0,"pose":{"x":1,"y":2,"psi":0.5}}\n{"tick":1,"pose":{"x":2,"y":2,"psi":0.5}}\n')
    ticks, poses = read_pose_log(path)
    assert ticks.tolist() == [0, 1] and poses[1].tolist() == [2.0, 2.0, 0.5]
    path.write_text('{"tick":0}\n')
    with pytest.raises(LogParseError, match="no pose"):
        read_pose_log(path)


def test_reference_csv(tmp_path):
    ref = ReferenceTrajectory([[0, 0], [1, 0], [1, 1]], speeds=np.array([1.0, 2.0, 3.0]))
    ref.to_csv(tmp_path / "r.csv")
    back = ReferenceTrajectory.from_csv(tmp_path / "r.csv")
    np.testing.assert_array_equal(back.points, ref.points)
    np.testing.assert_array_equal(back.speeds, ref.speeds)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n3,4\n")
    with pytest.raises(ValueError, match="x and y"):
        ReferenceTrajectory.from_csv(tmp_path / "bad.csv")


def test_reference_validation():
    with pytest.raises(ValueError):
        ReferenceTrajectory([[0, 0]])
    with pytest.raises(ValueError):
        ReferenceTrajectory([[0, 0], [0, 0], [1, 1]])
    assert SQUARE.length == 20.0
    assert SQUARE.arc_length.tolist() == [0.0, 2.5, 7.5, 12.5, 17.5]
