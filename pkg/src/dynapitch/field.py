"""Deterministic fixed-timestep 2D field: a rolling ball and disc robots whose
motion comes from their simulated servo banks.

One physics tick runs, in this order:

1. step every servo bank's motor dynamics;
2. read each robot's twist from its servos, rotate it into the world frame
   and integrate the pose (explicit Euler);
3. integrate the ball, shrinking its speed by ``ball_decel * dt`` without
   ever reversing it;
4. resolve robot-ball overlaps (the ball is pushed out) and robot-robot
   overlaps (both move apart equally);
5. a ball crossing the field boundary sets ``out_of_bounds`` and stops;
6. advance time.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

from . import kicker as kick
from .kicker import KickerParams, KickerState
from .kinematics import BodyTwist, WheelConfig, forward, from_dxl_units
from .servo import MODE_VELOCITY, VirtualBus

WHEEL_IDS = (1, 2, 3, 4)


class SimulationFault(RuntimeError):
    pass


@dataclass(frozen=True)
class FieldParams:
    length: float = 9.0
    width: float = 6.0
    ball_decel: float = 0.35
    ball_radius: float = 0.0215
    robot_radius: float = 0.09
    kick_gate_angle: float = math.radians(15.0)
    kick_gate_gap: float = 0.01
    physics_dt: float = 0.001
    max_ball_speed: float = 6.5

    def __post_init__(self) -> None:
        for name in ("length", "width", "ball_decel", "ball_radius", "robot_radius",
                     "kick_gate_angle", "kick_gate_gap", "physics_dt", "max_ball_speed"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.physics_dt > 0.002:
            raise ValueError("physics_dt must not exceed 2 ms")
        if self.max_ball_speed * self.physics_dt >= self.ball_radius:
            raise ValueError("ball could tunnel: max_ball_speed * physics_dt must stay below ball_radius")


@dataclass
class Ball:
    x: float = 0.0
    y: float = 0.0
    vx: float = 0.0
    vy: float = 0.0

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass
class Robot:
    robot_id: int
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    bus: VirtualBus = field(default_factory=lambda: make_servo_bank())
    kicker: KickerState = field(default_factory=KickerState)
    last_command_time: float = -math.inf
    dribble: bool = False
    # world-frame velocity from the latest physics tick
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0


@dataclass
class WorldState:
    ball: Ball = field(default_factory=Ball)
    robots: list[Robot] = field(default_factory=list)
    steps: int = 0
    t: float = 0.0
    out_of_bounds: bool = False

    def robot(self, robot_id: int) -> Robot:
        for r in self.robots:
            if r.robot_id == robot_id:
                return r
        raise KeyError(f"no robot {robot_id}")


def make_servo_bank() -> VirtualBus:
    return VirtualBus.with_servos(WHEEL_IDS, operating_mode=MODE_VELOCITY, torque=True)


def normalize_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    return math.pi if a <= -math.pi else a


def robot_twist_from_servos(robot: Robot, cfg: WheelConfig) -> BodyTwist:
    servos = robot.bus.servos
    rates = []
    for servo_id in WHEEL_IDS:
        servo = servos.get(servo_id)
        if servo is None:
            raise SimulationFault(f"robot {robot.robot_id}: servo {servo_id} not on the bus")
        rates.append(from_dxl_units(servo.present_velocity))
    if not any(rates):
        return BodyTwist()
    return forward(rates, cfg)


def _inside(x: float, y: float, params: FieldParams, margin: float = 0.0) -> bool:
    return abs(x) <= params.length / 2 + margin and abs(y) <= params.width / 2 + margin


def step(world: WorldState, params: FieldParams, cfg: WheelConfig, dt: float) -> WorldState:
    """Advance the world by one physics tick, in place. Returns ``world``."""
    if dt != params.physics_dt:
        raise ValueError(f"fixed step only: dt={dt} but physics_dt={params.physics_dt}")

    for robot in world.robots:
        robot.bus.step(dt)

    x_lim = params.length / 2 + params.robot_radius
    y_lim = params.width / 2 + params.robot_radius
    for robot in world.robots:
        tw = robot_twist_from_servos(robot, cfg)
        c, s = math.cos(robot.theta), math.sin(robot.theta)
        robot.vx = c * tw.vx - s * tw.vy
        robot.vy = s * tw.vx + c * tw.vy
        robot.omega = tw.omega
        robot.x = min(x_lim, max(-x_lim, robot.x + robot.vx * dt))
        robot.y = min(y_lim, max(-y_lim, robot.y + robot.vy * dt))
        robot.theta = normalize_angle(robot.theta + robot.omega * dt)

    ball = world.ball
    if not world.out_of_bounds:
        held = False
        for robot in world.robots:
            if robot.dribble and _gate_open(world, robot, params):
                ball.vx, ball.vy = robot.vx, robot.vy
                held = True
        speed = ball.speed
        if speed > 0.0 and not held:
            slower = max(0.0, speed - params.ball_decel * dt)
            scale = slower / speed
            ball.vx *= scale
            ball.vy *= scale
        ball.x += ball.vx * dt
        ball.y += ball.vy * dt

    _resolve_contacts(world, params)

    if not world.out_of_bounds and not _inside(ball.x, ball.y, params):
        world.out_of_bounds = True
        ball.vx = ball.vy = 0.0

    world.steps += 1
    world.t = world.steps * dt
    return world


def _resolve_contacts(world: WorldState, params: FieldParams) -> None:
    ball = world.ball
    reach = params.robot_radius + params.ball_radius
    for robot in world.robots:
        dx, dy = ball.x - robot.x, ball.y - robot.y
        dist = math.hypot(dx, dy)
        if dist >= reach:
            continue
        if dist > 0.0:
            nx, ny = dx / dist, dy / dist
        else:
            nx, ny = math.cos(robot.theta), math.sin(robot.theta)
        ball.x = robot.x + nx * reach
        ball.y = robot.y + ny * reach
        if world.out_of_bounds:
            continue
        # the ball cannot move into the robot along the contact normal
        vn = ball.vx * nx + ball.vy * ny
        rn = robot.vx * nx + robot.vy * ny
        if vn < rn:
            ball.vx += (rn - vn) * nx
            ball.vy += (rn - vn) * ny

    robots = world.robots
    min_gap = 2.0 * params.robot_radius
    for i in range(len(robots)):
        for j in range(i + 1, len(robots)):
            a, b = robots[i], robots[j]
            dx, dy = b.x - a.x, b.y - a.y
            dist = math.hypot(dx, dy)
            if dist >= min_gap:
                continue
            if dist > 0.0:
                nx, ny = dx / dist, dy / dist
            else:
                nx, ny = 1.0, 0.0
            half = 0.5 * (min_gap - dist)
            a.x -= nx * half
            a.y -= ny * half
            b.x += nx * half
            b.y += ny * half


def _gate_open(world: WorldState, robot: Robot, params: FieldParams) -> bool:
    dx, dy = world.ball.x - robot.x, world.ball.y - robot.y
    gap = math.hypot(dx, dy) - params.robot_radius - params.ball_radius
    if gap > params.kick_gate_gap:
        return False
    bearing = normalize_angle(math.atan2(dy, dx) - robot.theta)
    return abs(bearing) <= params.kick_gate_angle


def attempt_kick(
    world: WorldState,
    robot_id: int,
    now: float,
    params: FieldParams,
    kicker_params: KickerParams,
    max_speed: float | None = None,
) -> bool:
    """Fire the kicker if the ball sits in the robot's kick gate.

    Returns whether the gate was open. When it is, the ball velocity is
    replaced by the delivered speed along the robot heading, except inside the
    kicker lockout window where nothing changes.
    """
    robot = world.robot(robot_id)
    if not _gate_open(world, robot, params):
        return False
    if now < robot.kicker.lockout_until:
        return True
    speed, robot.kicker = kick.trigger(robot.kicker, kicker_params, now)
    if max_speed is not None:
        speed = min(speed, max_speed)
    world.ball.vx = speed * math.cos(robot.theta)
    world.ball.vy = speed * math.sin(robot.theta)
    return True


def set_charger(robot: Robot, enabled: bool) -> None:
    if robot.kicker.charging != enabled:
        robot.kicker = replace(robot.kicker, charging=enabled)


# --------------------------------------------------------------------------
# Trace records
# --------------------------------------------------------------------------


def trace_record(world: WorldState, tick: int) -> dict:
    b = world.ball
    return {
        "tick": tick,
        "t": world.t,
        "ball": [b.x, b.y, b.vx, b.vy],
        "robots": [
            {"id": r.robot_id, "pose": [r.x, r.y, r.theta], "v_cap": r.kicker.v_cap} for r in world.robots
        ],
        "oob": world.out_of_bounds,
    }


def trace_line(record: dict) -> str:
    """Canonical one-line JSON form, used for trace files and hashing."""
    return json.dumps(record, separators=(",", ":"), sort_keys=True)
