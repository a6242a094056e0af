import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynapitch import field as fs
from dynapitch import protocol as p
from dynapitch.kicker import KickerParams, KickerState
from dynapitch.kinematics import RAD_S_PER_UNIT, BodyTwist, WheelConfig, inverse, to_dxl_units

FP = fs.FieldParams()
CFG = WheelConfig()
DT = FP.physics_dt


def run(world, n):
    for _ in range(n):
        fs.step(world, FP, CFG, DT)
    return world


def test_ball_at_rest_stays():
    w = run(fs.WorldState(fs.Ball(0.3, -0.2)), 1000)
    assert (w.ball.x, w.ball.y, w.ball.vx, w.ball.vy) == (0.3, -0.2, 0.0, 0.0)
    assert w.t == pytest.approx(1.0)


def test_ball_rolls_to_rest_closed_form():
    v0, a = 2.0, 0.35
    t_stop, dist = v0 / a, v0 * v0 / (2 * a)
    assert t_stop == pytest.approx(5.714, abs=1e-3) and dist == pytest.approx(5.714, abs=1e-3)
    w = fs.WorldState(fs.Ball(-4.0, 0.0, v0, 0.0))
    n = 0
    while w.ball.speed > 0:
        fs.step(w, FP, CFG, DT)
        n += 1
    assert abs(n * DT - t_stop) <= DT
    assert abs((w.ball.x + 4.0) - dist) <= v0 * DT
    assert not w.out_of_bounds


def test_ball_direction_never_reverses():
    w = fs.WorldState(fs.Ball(0, 0, 0.00018, -0.00024))
    fs.step(w, FP, CFG, DT)
    assert (w.ball.vx, w.ball.vy) == (0.0, 0.0)


def test_overlapping_robots_separate_symmetrically():
    a, b = fs.Robot(1, -0.05, 0.0), fs.Robot(2, 0.05, 0.0)
    w = run(fs.WorldState(fs.Ball(3, 2), [a, b]), 1)
    assert a.x == pytest.approx(-FP.robot_radius) and b.x == pytest.approx(FP.robot_radius)
    assert a.x + b.x == pytest.approx(0.0, abs=1e-15)
    assert a.y == b.y == 0.0


def test_ball_pushed_out_of_robot():
    r = fs.Robot(1, 0.0, 0.0)
    w = run(fs.WorldState(fs.Ball(0.05, 0.0), [r]), 1)
    assert math.hypot(w.ball.x, w.ball.y) == pytest.approx(FP.robot_radius + FP.ball_radius)


def test_out_of_bounds_freezes_ball():
    w = fs.WorldState(fs.Ball(4.49, 0.0, 5.0, 0.0))
    run(w, 10)
    assert w.out_of_bounds and w.ball.speed == 0.0
    x = w.ball.x
    assert 4.5 < x < 4.5 + 5.0 * DT + 1e-12
    run(w, 10)
    assert w.ball.x == x


def test_twist_from_servos_at_rest():
    assert fs.robot_twist_from_servos(fs.Robot(0), CFG) == BodyTwist()


def test_missing_servo_faults():
    r = fs.Robot(0)
    del r.bus.servos[3]
    with pytest.raises(fs.SimulationFault):
        fs.robot_twist_from_servos(r, CFG)


def _command_servos(robot, twist):
    for servo_id, rate in zip(fs.WHEEL_IDS, inverse(twist, CFG)):
        robot.bus.servos[servo_id].write_value("GoalVelocity", to_dxl_units(float(rate))[0])


@pytest.mark.parametrize("twist", [BodyTwist(1.0, 0.0, 0.0), BodyTwist(0.5, -1.2, 2.0), BodyTwist(0, 0, -6.0)])
def test_settled_servos_reproduce_twist(twist):
    r = fs.Robot(0)
    _command_servos(r, twist)
    for _ in range(300):
        r.bus.step(DT)
    got = fs.robot_twist_from_servos(r, CFG)
    # each wheel is off by at most 0.5 unit (goal rounding) + 1 unit (readback truncation)
    m = CFG.projection()
    pinv = np.linalg.pinv(m) * CFG.wheel_radius * CFG.gear_ratio
    bound = np.abs(pinv).sum(axis=1) * 1.5 * RAD_S_PER_UNIT
    err = np.abs(np.array([got.vx - twist.vx, got.vy - twist.vy, got.omega - twist.omega]))
    assert np.all(err <= bound + 1e-12)


def test_robot_drives_in_world_frame():
    r = fs.Robot(0, 0.0, 0.0, math.pi / 2)
    _command_servos(r, BodyTwist(1.0, 0.0, 0.0))
    run(fs.WorldState(fs.Ball(3, 2), [r]), 1000)
    assert abs(r.x) < 0.02
    assert 0.9 < r.y < 1.0


def test_pose_clamped_to_inflated_field():
    r = fs.Robot(0, 4.55, 0.0)
    _command_servos(r, BodyTwist(2.0, 0.0, 0.0))
    run(fs.WorldState(fs.Ball(0, 0), [r]), 500)
    assert r.x == pytest.approx(4.5 + FP.robot_radius)


# --- kicking -----------------------------------------------------------------


def _kick_world(bearing=0.0, gap=0.0, v_cap=190.0, lockout=0.0):
    reach = FP.robot_radius + FP.ball_radius + gap
    r = fs.Robot(0, 0.0, 0.0, 0.3, kicker=KickerState(v_cap=v_cap, lockout_until=lockout))
    ball = fs.Ball(reach * math.cos(0.3 + bearing), reach * math.sin(0.3 + bearing))
    return fs.WorldState(ball, [r])


def test_kick_from_behind_is_rejected():
    w = _kick_world(bearing=math.pi)
    before = (w.ball.x, w.ball.y, w.robots[0].kicker)
    assert not fs.attempt_kick(w, 0, 1.0, FP, KickerParams())
    assert (w.ball.x, w.ball.y, w.robots[0].kicker) == before
    assert w.ball.speed == 0.0


def test_full_charge_kick():
    w = _kick_world()
    assert fs.attempt_kick(w, 0, 1.0, FP, KickerParams())
    expected = math.sqrt(2 * 0.02 * 0.5 * 2200e-6 * 190**2 / 0.046)
    assert w.ball.speed == pytest.approx(expected, rel=1e-12)
    assert math.atan2(w.ball.vy, w.ball.vx) == pytest.approx(0.3)
    assert w.robots[0].kicker.v_cap == 0.0


def test_kick_capped():
    w = _kick_world()
    fs.attempt_kick(w, 0, 1.0, FP, KickerParams(), max_speed=2.0)
    assert w.ball.speed == pytest.approx(2.0)


def test_kick_during_lockout_leaves_ball():
    w = _kick_world(lockout=1.5)
    w.ball.vx = 0.1
    assert fs.attempt_kick(w, 0, 1.0, FP, KickerParams())
    assert (w.ball.vx, w.ball.vy) == (0.1, 0.0)
    assert w.robots[0].kicker.v_cap == 190.0


@pytest.mark.parametrize("bearing, gap, ok", [(0.25, 0.0, True), (0.27, 0.0, False), (0.0, 0.0099, True), (0.0, 0.0101, False)])
def test_kick_gate_edges(bearing, gap, ok):
    assert fs.attempt_kick(_kick_world(bearing, gap), 0, 1.0, FP, KickerParams()) is ok


# --- parameters and invariants --------------------------------------------------


def test_param_validation():
    with pytest.raises(ValueError):
        fs.FieldParams(physics_dt=0.003)
    with pytest.raises(ValueError):
        fs.FieldParams(physics_dt=0.002, max_ball_speed=11.0)
    with pytest.raises(ValueError):
        fs.FieldParams(ball_decel=0.0)
    with pytest.raises(ValueError):
        fs.step(fs.WorldState(), FP, CFG, 0.002)


@given(st.floats(-50, 50))
def test_normalize_angle_range(a):
    n = fs.normalize_angle(a)
    assert -math.pi < n <= math.pi
    assert math.isclose(math.cos(n), math.cos(a), abs_tol=1e-9)


def _busy_world():
    robots = [fs.Robot(i, -1.0 + i, 0.2 * i, 0.5 * i) for i in range(3)]
    for r, t in zip(robots, [BodyTwist(1.0, 0.2, 3.0), BodyTwist(-0.5, 0.5, -2.0), BodyTwist(0.0, 1.0, 7.0)]):
        _command_servos(r, t)
    return fs.WorldState(fs.Ball(0.2, 0.1, 1.5, -0.7), robots)


def test_determinism_bit_exact():
    a, b = _busy_world(), _busy_world()
    for k in range(10_000):
        fs.step(a, FP, CFG, DT)
        fs.step(b, FP, CFG, DT)
        if k % 100 == 0:
            assert fs.trace_line(fs.trace_record(a, k)) == fs.trace_line(fs.trace_record(b, k))
    assert fs.trace_line(fs.trace_record(a, 0)) == fs.trace_line(fs.trace_record(b, 0))
    for r in a.robots:
        assert -math.pi < r.theta <= math.pi


@settings(max_examples=30)
@given(st.floats(0.01, 6.5), st.floats(-math.pi, math.pi))
def test_ball_speed_nonincreasing_without_contact(speed, heading):
    w = fs.WorldState(fs.Ball(0, 0, speed * math.cos(heading), speed * math.sin(heading)))
    last = w.ball.speed
    for _ in range(300):
        fs.step(w, FP, CFG, DT)
        assert w.ball.speed <= last
        last = w.ball.speed


def test_dribble_holds_ball_velocity_to_robot():
    r = fs.Robot(0, 0.0, 0.0, 0.0, dribble=True)
    _command_servos(r, BodyTwist(0.5, 0.0, 0.0))
    w = fs.WorldState(fs.Ball(FP.robot_radius + FP.ball_radius + 0.001, 0.0), [r])
    run(w, 400)
    assert w.ball.vx == pytest.approx(r.vx, abs=1e-9)


def test_trace_line_is_canonical_json():
    w = fs.WorldState(fs.Ball(1.0, 2.0), [fs.Robot(3)])
    line = fs.trace_line(fs.trace_record(w, 7))
    assert " " not in line and line.startswith('{"ball":[1.0,2.0,0.0,0.0]')
    assert '"tick":7' in line and '"v_cap":0.0' in line


def test_servo_bank_is_velocity_mode():
    r = fs.Robot(0)
    frame = p.encode(p.read(2, 11, 1))
    (reply,) = r.bus.transact(frame)
    assert p.decode_packet(reply).params == b"\x01"
    assert struct.unpack("<B", p.decode_packet(r.bus.transact(p.encode(p.read(2, 64, 1)))[0]).params)[0] == 1
