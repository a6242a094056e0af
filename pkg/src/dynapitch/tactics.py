"""Scripted behaviors turning vision into RobotCommands.

All behaviors share one proportional law: world-frame velocity
``kp * (target - pos)`` clamped to ``v_max``, rotated into the robot frame,
and ``omega = kw * wrap(heading - theta)`` clamped to ``omega_max``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

from .field import normalize_angle
from .net import FLAG_CHARGE, RobotCommand, VisionFrame, command_from_si

Pose = tuple[float, float, float]
Point = tuple[float, float]


@dataclass(frozen=True)
class Gains:
    kp: float = 2.0
    kw: float = 4.0
    v_max: float = 3.0
    omega_max: float = 10.0

    def __post_init__(self) -> None:
        if min(self.kp, self.kw, self.v_max, self.omega_max) <= 0:
            raise ValueError("gains and limits must be positive")


def drive_to(pose: Pose, target: Point, heading: float, gains: Gains) -> tuple[float, float, float]:
    """Robot-frame (vx, vy, omega) steering toward ``target`` while turning to ``heading``."""
    x, y, theta = pose
    wx, wy = gains.kp * (target[0] - x), gains.kp * (target[1] - y)
    speed = math.hypot(wx, wy)
    if speed > gains.v_max:
        wx, wy = wx * gains.v_max / speed, wy * gains.v_max / speed
    c, s = math.cos(theta), math.sin(theta)
    vx, vy = c * wx + s * wy, -s * wx + c * wy
    omega = gains.kw * normalize_angle(heading - theta)
    omega = min(gains.omega_max, max(-gains.omega_max, omega))
    return vx, vy, omega


def _command(robot_id: int, v: tuple[float, float, float], gains: Gains, kick: float = 0.0, flags: int = 0) -> RobotCommand:
    """Quantize to wire units without leaving the gains' speed limits."""
    cmd = command_from_si(robot_id, *v, kick=kick, flags=flags)
    if math.hypot(cmd.vx_mm_s, cmd.vy_mm_s) > gains.v_max * 1000.0 or abs(cmd.omega_mrad_s) > gains.omega_max * 1000.0:
        cmd = replace(
            cmd,
            vx_mm_s=math.trunc(v[0] * 1000.0),
            vy_mm_s=math.trunc(v[1] * 1000.0),
            omega_mrad_s=math.trunc(v[2] * 1000.0),
        )
    return cmd


def _bearing(pose: Pose, point: Point) -> float:
    dx, dy = point[0] - pose[0], point[1] - pose[1]
    if math.hypot(dx, dy) < 1e-3:
        return pose[2]
    return math.atan2(dy, dx)


def go_to_ball(pose: Pose, ball: Point, gains: Gains = Gains(), robot_id: int = 0, flags: int = 0) -> RobotCommand:
    return _command(robot_id, drive_to(pose, ball, _bearing(pose, ball), gains), gains, flags=flags)


def standoff_point(ball: Point, goal: Point, distance: float = 0.15) -> Point:
    """Point ``distance`` behind the ball on the goal-ball line."""
    dx, dy = ball[0] - goal[0], ball[1] - goal[1]
    n = math.hypot(dx, dy)
    if n == 0.0:
        return ball
    return ball[0] + distance * dx / n, ball[1] + distance * dy / n


@dataclass(frozen=True)
class AimAndKick:
    """Approach from behind the ball, square up to the goal, kick.

    Outside a narrow corridor behind the ball the robot heads for the
    standoff point; inside it, it drives onto the ball. The kick field is set
    only while the heading and the bearing to the ball are both within
    ``align_tolerance`` and the ball is within ``kick_gap`` of the front.
    """

    goal: Point = (4.5, 0.0)
    align_tolerance: float = math.radians(5.0)
    kick_speed: float = 6.5
    standoff: float = 0.15
    corridor: float = 0.03
    robot_radius: float = 0.09
    ball_radius: float = 0.0215
    kick_gap: float = 0.01
    gains: Gains = field(default_factory=Gains)

    def __post_init__(self) -> None:
        if not 0 < self.align_tolerance <= math.pi / 4:
            raise ValueError("align_tolerance must lie in (0, pi/4]")

    def target(self, pose: Pose, ball: Point) -> tuple[Point, float]:
        gx, gy = self.goal[0] - ball[0], self.goal[1] - ball[1]
        n = math.hypot(gx, gy) or 1.0
        ux, uy = gx / n, gy / n
        heading = math.atan2(uy, ux)
        rx, ry = pose[0] - ball[0], pose[1] - ball[1]
        along = rx * ux + ry * uy
        lateral = abs(rx * uy - ry * ux)
        if along < 0.0 and lateral < self.corridor:
            # aim a few mm into the ball so contact happens in finite time
            reach = self.robot_radius + self.ball_radius - 0.005
            return (ball[0] - reach * ux, ball[1] - reach * uy), heading
        return standoff_point(ball, self.goal, self.standoff), heading

    def ready_to_kick(self, pose: Pose, ball: Point) -> bool:
        _, heading = self.target(pose, ball)
        if abs(normalize_angle(heading - pose[2])) > self.align_tolerance:
            return False
        dx, dy = ball[0] - pose[0], ball[1] - pose[1]
        gap = math.hypot(dx, dy) - self.robot_radius - self.ball_radius
        if gap > self.kick_gap:
            return False
        return abs(normalize_angle(math.atan2(dy, dx) - pose[2])) <= self.align_tolerance

    def command(self, robot_id: int, pose: Pose, ball: Point) -> RobotCommand:
        target, heading = self.target(pose, ball)
        kick = self.kick_speed if self.ready_to_kick(pose, ball) else 0.0
        return _command(robot_id, drive_to(pose, target, heading, self.gains), self.gains, kick, FLAG_CHARGE)


def aim_and_kick(pose: Pose, ball: Point, goal: Point, cfg: AimAndKick | None = None, robot_id: int = 0) -> RobotCommand:
    cfg = cfg or AimAndKick(goal=goal)
    if cfg.goal != goal:
        cfg = replace(cfg, goal=goal)
    return cfg.command(robot_id, pose, ball)


@dataclass(frozen=True)
class GoToBall:
    gains: Gains = field(default_factory=Gains)

    def command(self, robot_id: int, pose: Pose, ball: Point) -> RobotCommand:
        return go_to_ball(pose, ball, self.gains, robot_id)


@dataclass(frozen=True)
class Goalkeeper:
    line_x: float = -4.2
    y_span: float = 0.5
    gains: Gains = field(default_factory=Gains)

    def target(self, ball: Point) -> Point:
        return self.line_x, min(self.y_span, max(-self.y_span, ball[1]))

    def command(self, robot_id: int, pose: Pose, ball: Point) -> RobotCommand:
        return _command(robot_id, drive_to(pose, self.target(ball), _bearing(pose, ball), self.gains), self.gains)


def goalkeeper(pose: Pose, ball: Point, line_x: float, y_span: float, gains: Gains = Gains(), robot_id: int = 0) -> RobotCommand:
    return Goalkeeper(line_x, y_span, gains).command(robot_id, pose, ball)


Behavior = Union[GoToBall, AimAndKick, Goalkeeper]


def observe(frame: VisionFrame, robot_id: int) -> tuple[Pose, Point]:
    """Robot pose and ball position in SI units from a vision frame."""
    obs = frame.robot(robot_id)
    if obs is None:
        raise KeyError(f"robot {robot_id} not in vision frame {frame.frame_no}")
    pose = (obs.x_mm / 1000.0, obs.y_mm / 1000.0, obs.theta_mrad / 1000.0)
    return pose, (frame.ball_x_mm / 1000.0, frame.ball_y_mm / 1000.0)
