import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _support import ray_segment_oracle, square_room
from racesim.dynamics import ControlInput, VehicleState, preset, step
from racesim.geometry import OrientedBox, TrackMap2D
from racesim.sensors import (
    LIDAR_PRESETS,
    ImuNoise,
    LidarSpec,
    OdomNoise,
    raycast_scan,
    scan_endpoints,
    synth_imu,
    synth_odom,
)

ROOM = TrackMap2D(square_room())
SPEC = LidarSpec(num_beams=181, fov=math.radians(270))


def imu_closed_form(s1, s0, dt, g):
    return ((s1.v_x - s0.v_x) / dt, (s1.v_y - s0.v_y) / dt, g, s1.psi, s1.psi_dot)


def test_imu_constant_velocity():
    s = VehicleState(v_x=3.0)
    imu = synth_imu(s, s, 0.01)
    assert (imu.a_x, imu.a_y, imu.a_z) == (0.0, 0.0, 9.81)


def test_imu_finite_difference():
    imu = synth_imu(VehicleState(v_x=2.0), VehicleState(v_x=1.0), 0.1)
    assert imu.a_x == pytest.approx(10.0, rel=1e-15)


def test_imu_passthrough():
    imu = synth_imu(VehicleState(psi=0.3, psi_dot=0.7), VehicleState(), 0.01)
    assert imu.psi == 0.3 and imu.psi_dot == 0.7


def test_imu_bad_dt():
    with pytest.raises(ValueError):
        synth_imu(VehicleState(), VehicleState(), 0.0)


def test_imu_az_is_never_noisy():
    rng = np.random.default_rng(0)
    imu = synth_imu(VehicleState(), VehicleState(), 0.01, 9.81, ImuNoise(1.0, 1.0, 1.0), rng)
    assert imu.a_z == 9.81
    assert imu.a_x != 0.0


finite = st.floats(-20, 20, allow_nan=False)


@given(st.tuples(*[finite] * 6), st.tuples(*[finite] * 6), st.floats(1e-4, 1.0))
def test_imu_matches_closed_form(a, b, dt):
    s1, s0 = VehicleState(*a), VehicleState(*b)
    imu = synth_imu(s1, s0, dt)
    assert (imu.a_x, imu.a_y, imu.a_z, imu.psi, imu.psi_dot) == imu_closed_form(s1, s0, dt, 9.81)


def trapezoid_check(n=200, dt=0.01):
    """(|trapezoid of a_x - true dv_x|, 2*dt*max|da_x/dt|) over a varying-throttle run.

    Sample k is stamped at t_k; one state before t_0 provides the sample at t_0.
    """
    p = preset("f1tenth")
    states = [VehicleState(v_x=2.0)]
    for k in range(n + 1):
        u = ControlInput(2.0 * math.sin(0.05 * k), 0.15 * math.sin(0.02 * k))
        states.append(step(states[-1], u, dt, p))
    ax = np.array([synth_imu(states[k], states[k - 1], dt).a_x for k in range(1, n + 2)])
    integral = dt * float(np.sum((ax[:-1] + ax[1:]) / 2))
    err = abs(integral - (states[-1].v_x - states[1].v_x))
    bound = 2 * dt * float(np.max(np.abs(np.diff(ax) / dt)))
    return err, bound


def test_imu_trapezoid_reintegration():
    err, bound = trapezoid_check()
    assert err <= bound


def test_odom_passthrough():
    assert synth_odom(VehicleState()) == synth_odom(VehicleState(), OdomNoise(), None)
    o = synth_odom(VehicleState(v_x=4.2, v_y=0.1, psi_dot=-0.3))
    assert (o.v_x, o.v_y, o.psi_dot) == (4.2, 0.1, -0.3)


def test_odom_noise_reproducible():
    noise = OdomNoise(0.1, 0.1, 0.1)
    a = synth_odom(VehicleState(v_x=1.0), noise, np.random.default_rng(5))
    b = synth_odom(VehicleState(v_x=1.0), noise, np.random.default_rng(5))
    assert a == b and a.v_x != 1.0


def test_lidar_spec_validation():
    with pytest.raises(ValueError):
        LidarSpec(num_beams=1)
    with pytest.raises(ValueError):
        LidarSpec(fov=0.0)
    with pytest.raises(ValueError):
        LidarSpec(range_min=5.0, range_max=1.0)
    with pytest.raises(ValueError):
        LidarSpec(noise_std=-1.0)
    assert LIDAR_PRESETS["ust10lx-like"].num_beams == 1081


def test_beam_angles():
    a = SPEC.beam_angles()
    assert a[0] == -SPEC.fov / 2 and a[-1] == pytest.approx(SPEC.fov / 2)
    assert a[90] == pytest.approx(0.0, abs=1e-15)


def test_room_center_forward_beam():
    scan = raycast_scan((0.0, 0.0, 0.0), ROOM, [], SPEC)
    assert scan.ranges[90] == pytest.approx(5.0, abs=1e-12)


def test_open_gap_returns_sentinel():
    track = TrackMap2D(square_room()[1:])  # bottom wall removed
    scan = raycast_scan((0.0, 0.0, -math.pi / 2), track, [], LidarSpec(num_beams=181, range_max=30.0))
    assert scan.ranges[90] == 31.0
    assert not scan.valid()[90]


def test_out_of_range_is_sentinel():
    scan = raycast_scan((0.0, 0.0, 0.0), ROOM, [], LidarSpec(num_beams=181, range_max=4.0))
    assert scan.ranges[90] == 5.0  # sentinel = range_max + 1
    assert np.all((scan.ranges <= 4.0) | (scan.ranges == 5.0))


def test_opponent_occludes_wall():
    box = OrientedBox(2.25, 0.0, 0.0, 0.25, 0.15)  # near edge at x = 2
    scan = raycast_scan((0.0, 0.0, 0.0), ROOM, [box], SPEC)
    segs = np.vstack([ROOM.segments, box.edges()])
    assert scan.ranges[90] == pytest.approx(ray_segment_oracle(0.0, 0.0, 0.0, segs), abs=1e-12)
    assert scan.ranges[90] == pytest.approx(2.0, abs=1e-12)


@given(st.floats(-4, 4), st.floats(-4, 4), st.floats(-math.pi, math.pi))
def test_raycast_matches_oracle(x, y, psi):
    spec = LidarSpec(num_beams=37, fov=2 * math.pi, range_max=20.0)
    scan = raycast_scan((x, y, psi), ROOM, [], spec)
    for i in range(0, 37, 4):
        expect = ray_segment_oracle(x, y, psi + spec.beam_angles()[i], ROOM.segments)
        assert scan.ranges[i] == pytest.approx(expect, abs=1e-9)


def test_scan_symmetry():
    scan = raycast_scan((1.3, 0.0, 0.0), ROOM, [], LidarSpec(num_beams=1081))
    np.testing.assert_allclose(scan.ranges, scan.ranges[::-1], atol=1e-9, rtol=0)


@given(
    st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi),
    st.floats(-4, 4), st.floats(-4, 4), st.floats(-math.pi, math.pi),
)
def test_occlusion_monotone(x, y, psi, bx, by, bpsi):
    box = OrientedBox(bx, by, bpsi, 0.25, 0.15)
    plain = raycast_scan((x, y, psi), ROOM, [], SPEC)
    occluded = raycast_scan((x, y, psi), ROOM, [box], SPEC)
    assert np.all(occluded.ranges <= plain.ranges)


def test_noise_determinism_and_clamp():
    spec = LidarSpec(num_beams=181, noise_std=0.5, range_min=0.5)
    a = raycast_scan((4.6, 0.0, 0.0), ROOM, [], spec, np.random.default_rng(3))
    b = raycast_scan((4.6, 0.0, 0.0), ROOM, [], spec, np.random.default_rng(3))
    assert a == b
    valid = a.valid()
    assert np.all(a.ranges[valid] >= spec.range_min) and np.all(a.ranges[valid] <= spec.range_max)
    assert np.all((a.ranges == spec.sentinel) | valid)


def test_scan_endpoints_land_on_walls():
    scan = raycast_scan((0.5, -1.0, 0.3), ROOM, [], SPEC)
    pts = scan_endpoints(scan, (0.5, -1.0, 0.3), SPEC)
    assert np.allclose(np.max(np.abs(pts), axis=1), 5.0, atol=1e-9)


def test_mount_offset_moves_origin():
    spec = LidarSpec(num_beams=181, mount_offset=(1.0, 0.0))
    scan = raycast_scan((0.0, 0.0, 0.0), ROOM, [], spec)
    assert scan.ranges[90] == pytest.approx(4.0)
