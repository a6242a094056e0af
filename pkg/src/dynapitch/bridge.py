"""Per-robot controller between the command link and the servo bus.

Inbound commands are converted to SI, clamped, slew limited and guarded by
a staleness watchdog; the resulting twist is fanned out to the four wheel
servos as one SYNC_WRITE of GoalVelocity.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field

from . import field as fs
from . import protocol as proto
from .kicker import KickerParams, charge_step
from .kinematics import BodyTwist, WheelConfig, inverse, to_dxl_units
from .net import RobotCommand
from .servo import ADDR

LOGGER = logging.getLogger(__name__)

GOAL_VELOCITY = ADDR["GoalVelocity"]


@dataclass(frozen=True)
class BridgeConfig:
    v_max: float = 3.0
    omega_max: float = 10.0
    accel_max: float = 4.0
    angular_accel_max: float = 40.0
    staleness_timeout: float = 0.2
    kick_cap: float = 6.5
    control_dt: float = 0.01

    def __post_init__(self) -> None:
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class BridgeState:
    last_twist: BodyTwist = field(default_factory=BodyTwist)
    last_rx_time: float = -math.inf
    charger_enabled: bool = False
    target: BodyTwist | None = None


def command_to_twist(cmd: RobotCommand) -> BodyTwist:
    return BodyTwist(cmd.vx_mm_s / 1000.0, cmd.vy_mm_s / 1000.0, cmd.omega_mrad_s / 1000.0)


def clamp_twist(t: BodyTwist, cfg: BridgeConfig) -> BodyTwist:
    vx, vy = t.vx, t.vy
    speed = math.hypot(vx, vy)
    if speed > cfg.v_max:
        vx, vy = vx * cfg.v_max / speed, vy * cfg.v_max / speed
    omega = min(cfg.omega_max, max(-cfg.omega_max, t.omega))
    return BodyTwist(vx, vy, omega)


def slew_twist(last: BodyTwist, target: BodyTwist, cfg: BridgeConfig) -> BodyTwist:
    dvx, dvy = target.vx - last.vx, target.vy - last.vy
    dv = math.hypot(dvx, dvy)
    max_dv = cfg.accel_max * cfg.control_dt
    if dv > max_dv:
        vx, vy = last.vx + dvx * max_dv / dv, last.vy + dvy * max_dv / dv
    else:
        vx, vy = target.vx, target.vy
    max_dw = cfg.angular_accel_max * cfg.control_dt
    omega = last.omega + min(max_dw, max(-max_dw, target.omega - last.omega))
    return BodyTwist(vx, vy, omega)


def filter_command(cmd: RobotCommand, state: BridgeState, cfg: BridgeConfig, now: float) -> BodyTwist:
    """Clamp and slew one received command; updates ``state`` in place."""
    state.target = clamp_twist(command_to_twist(cmd), cfg)
    state.charger_enabled = cmd.charge
    state.last_rx_time = now
    state.last_twist = slew_twist(state.last_twist, state.target, cfg)
    return state.last_twist


def watchdog_check(state: BridgeState, cfg: BridgeConfig, now: float) -> BodyTwist:
    """Zero the twist (no slew) and disable the charger once commands go stale."""
    if now - state.last_rx_time > cfg.staleness_timeout:
        state.last_twist = BodyTwist()
        state.target = None
        state.charger_enabled = False
    return state.last_twist


def command_to_sync_write(twist: BodyTwist, cfg: BridgeConfig, wheel_cfg: WheelConfig) -> tuple[bytes, bool]:
    """Encoded SYNC_WRITE of GoalVelocity for wheels 1..4, plus a saturation flag."""
    slices = {}
    saturated = False
    for servo_id, rate in zip(fs.WHEEL_IDS, inverse(twist, wheel_cfg)):
        units, sat = to_dxl_units(float(rate))
        saturated |= sat
        slices[servo_id] = struct.pack("<i", units)
    return proto.encode_instruction(proto.sync_write(GOAL_VELOCITY, 4, slices)), saturated


class Bridge:
    def __init__(
        self,
        robot_id: int,
        cfg: BridgeConfig | None = None,
        wheel_cfg: WheelConfig | None = None,
        kicker_params: KickerParams | None = None,
        field_params: fs.FieldParams | None = None,
    ):
        self.robot_id = robot_id
        self.cfg = cfg or BridgeConfig()
        self.wheel_cfg = wheel_cfg or WheelConfig()
        self.kicker_params = kicker_params or KickerParams()
        self.field_params = field_params or fs.FieldParams()
        self.state = BridgeState()
        self.pending: RobotCommand | None = None
        self.saturated = False
        self.kicks = 0

    def receive(self, cmd: RobotCommand) -> None:
        """Queue a command for the next tick; a newer one replaces it."""
        if cmd.robot_id != self.robot_id:
            raise ValueError(f"command for robot {cmd.robot_id} sent to bridge {self.robot_id}")
        self.pending = cmd

    def process_tick(self, robot: fs.Robot, world: fs.WorldState, now: float) -> BodyTwist:
        cmd, self.pending = self.pending, None
        state = self.state
        if cmd is not None:
            filter_command(cmd, state, self.cfg, now)
        elif state.target is not None:
            state.last_twist = slew_twist(state.last_twist, state.target, self.cfg)
        twist = watchdog_check(state, self.cfg, now)

        frame, self.saturated = command_to_sync_write(twist, self.cfg, self.wheel_cfg)
        if self.saturated:
            LOGGER.debug("robot %d: wheel command saturated", self.robot_id)
        robot.bus.transact(frame)
        if robot.bus.fault:
            raise fs.SimulationFault(f"robot {self.robot_id}: {robot.bus.diagnostics[-1]}")

        fs.set_charger(robot, state.charger_enabled)
        robot.kicker = charge_step(robot.kicker, self.kicker_params, now, self.cfg.control_dt)
        robot.last_command_time = state.last_rx_time
        if cmd is not None:
            robot.dribble = cmd.dribble
        if state.target is None:
            robot.dribble = False

        if cmd is not None and cmd.kick_mm_s > 0:
            requested = min(cmd.kick_mm_s / 1000.0, self.cfg.kick_cap)
            if fs.attempt_kick(world, self.robot_id, now, self.field_params, self.kicker_params, max_speed=requested):
                self.kicks += 1
        return twist
