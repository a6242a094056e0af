"""Control loop driver and the metric scenarios.

A control tick does: drain the commands queued during the previous tick,
sample vision (60 Hz on the simulation clock), run the behaviors on the
latest frame and queue their commands through the codec for the next tick,
hand the drained commands to the bridges and tick them, then run
``control_dt / physics_dt`` physics steps and append one trace record. The
command link therefore has exactly one control tick of latency.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np

from . import field as fs
from .bridge import Bridge, BridgeConfig
from .kicker import KickerParams, KickerState
from .kinematics import WheelConfig
from .net import LoopbackTransport, RobotCommand, VisionFrame, VisionPublisher, command_from_si, decode_vision
from .tactics import AimAndKick, Gains, GoToBall, drive_to, observe

SCENARIOS = ("sprint", "slalom", "time_to_ball", "kick_distance", "one_v_zero_goal")
CSV_COLUMNS = ("scenario", "seed", "time_to_ball", "sprint_time_4m", "slalom_time", "kick_distance", "trace_hash")

SLALOM_WAYPOINTS = ((0.0, 0.0), (1.0, 0.5), (2.0, -0.5), (3.0, 0.5), (4.0, 0.0))
SLALOM_TOLERANCE = 0.1
SPRINT_DISTANCE = 4.0
GOAL_LINE_X = 4.5
GOAL_HALF_WIDTH = 0.5

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes, h: int = FNV_OFFSET) -> int:
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


Controller = Callable[[Optional[VisionFrame]], Optional[RobotCommand]]


@dataclass(frozen=True)
class ScenarioConfig:
    field_params: fs.FieldParams = field(default_factory=fs.FieldParams)
    wheels: WheelConfig = field(default_factory=WheelConfig)
    kicker: KickerParams = field(default_factory=KickerParams)
    bridge: BridgeConfig = field(default_factory=BridgeConfig)
    gains: Gains = field(default_factory=Gains)
    timeout: float = 30.0
    vision_rate: int = 60
    # seeded perturbation of the robot start pose
    position_jitter: float = 0.005
    heading_jitter: float = 0.005


class UnknownScenario(ValueError):
    pass


class Simulation:
    """Owns the world, one bridge per robot and the command/vision link.

    ``transport`` defaults to an in-process loopback; ``vision_sink``, if
    given, also receives every published frame (used to mirror vision onto
    UDP in serve mode).
    """

    def __init__(
        self,
        world: fs.WorldState,
        config: ScenarioConfig | None = None,
        transport: LoopbackTransport | None = None,
        vision_sink: Callable[[VisionFrame], None] | None = None,
    ):
        self.world = world
        self.config = cfg = config or ScenarioConfig()
        physics_dt, control_dt = cfg.field_params.physics_dt, cfg.bridge.control_dt
        ratio = round(control_dt / physics_dt)
        if ratio < 1 or not math.isclose(ratio * physics_dt, control_dt, rel_tol=1e-9):
            raise ValueError("control_dt must be an integer multiple of physics_dt")
        self.substeps = ratio
        self.bridges = {
            r.robot_id: Bridge(r.robot_id, cfg.bridge, cfg.wheels, cfg.kicker, cfg.field_params) for r in world.robots
        }
        self.transport = transport or LoopbackTransport()
        self.vision_sink = vision_sink
        self.publisher = VisionPublisher(cfg.vision_rate, control_dt)
        self.vision: VisionFrame | None = None
        self.tick = 0
        self.trace: list[str] = []
        self.trace_hash = FNV_OFFSET

    @property
    def now(self) -> float:
        return self.tick * self.config.bridge.control_dt

    def control_tick(
        self,
        controllers: dict[int, Controller] | None = None,
        monitor: Callable[[fs.WorldState], None] | None = None,
    ) -> None:
        world, cfg = self.world, self.config
        # Commands queued during the previous tick; what the behaviors emit
        # below is consumed on the next one.
        arrived = self.transport.commands.drain()
        frame = self.publisher.poll(world, self.tick)
        if frame is not None:
            self.transport.publish(frame)
            if self.vision_sink is not None:
                self.vision_sink(frame)
        if self.transport.vision:
            self.vision = decode_vision(self.transport.vision[-1])
            self.transport.vision.clear()
        for ctrl in (controllers or {}).values():
            cmd = ctrl(self.vision)
            if cmd is not None:
                self.transport.send_command(cmd)
        for cmd in arrived:
            bridge = self.bridges.get(cmd.robot_id)
            if bridge is not None:
                bridge.receive(cmd)
        now = self.now
        for robot in world.robots:
            self.bridges[robot.robot_id].process_tick(robot, world, now)
        for _ in range(self.substeps):
            fs.step(world, cfg.field_params, cfg.wheels, cfg.field_params.physics_dt)
            if monitor is not None:
                monitor(world)
        self.tick += 1
        line = fs.trace_line(fs.trace_record(world, self.tick))
        self.trace.append(line)
        self.trace_hash = fnv1a64(line.encode() + b"\n", self.trace_hash)


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    time_to_ball: float | None = None
    sprint_time_4m: float | None = None
    slalom_time: float | None = None
    kick_distance: float | None = None
    trace_hash: int = 0
    success: bool = False
    failed: bool = False
    goal_time: float | None = None
    out_of_bounds: bool = False
    sim_time: float = 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        d["trace_hash"] = f"{self.trace_hash:016x}"
        return d

    def csv_row(self) -> list[str]:
        d = self.to_json()
        return ["" if d[c] is None else str(d[c]) for c in CSV_COLUMNS]


def metrics_csv(reports: Iterable[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in reports:
        writer.writerow(r.csv_row())
    return buf.getvalue()


def start_pose(rng: np.random.Generator, x: float, y: float, theta: float, cfg: ScenarioConfig) -> tuple[float, float, float]:
    dx, dy = rng.uniform(-1.0, 1.0, 2) * cfg.position_jitter
    dth = rng.uniform(-1.0, 1.0) * cfg.heading_jitter
    return x + float(dx), y + float(dy), theta + float(dth)


def _gap(world: fs.WorldState, robot: fs.Robot, params: fs.FieldParams) -> float:
    d = math.hypot(world.ball.x - robot.x, world.ball.y - robot.y)
    return d - params.robot_radius - params.ball_radius


def run_scenario(
    name: str,
    seed: int = 0,
    config: ScenarioConfig | None = None,
    trace: list[str] | None = None,
) -> MetricsReport:
    """Run one named scenario deterministically and report its metrics.

    If ``trace`` is given, the canonical per-control-tick records are
    appended to it.
    """
    if name not in SCENARIOS:
        raise UnknownScenario(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    cfg = config or ScenarioConfig()
    rng = np.random.default_rng(seed)
    report = MetricsReport(name, seed)
    fp = cfg.field_params
    robot_id = 0
    gate = fp.kick_gate_gap

    if name == "sprint":
        x, y, th = start_pose(rng, -2.0, 0.0, 0.0, cfg)
        world = fs.WorldState(fs.Ball(-4.0, 2.5), [fs.Robot(robot_id, x, y, th)])
        finish_x = x + SPRINT_DISTANCE
        full = command_from_si(robot_id, cfg.bridge.v_max, 0.0, 0.0)

        def controller(_vision):
            return full

        def monitor(w):
            if report.sprint_time_4m is None and w.robots[0].x >= finish_x:
                report.sprint_time_4m = w.t
                report.success = True

    elif name == "slalom":
        x, y, th = start_pose(rng, *SLALOM_WAYPOINTS[0], 0.0, cfg)
        world = fs.WorldState(fs.Ball(-3.0, -2.0), [fs.Robot(robot_id, x, y, th)])
        progress = {"next": 1}

        def controller(vision):
            if vision is None or progress["next"] >= len(SLALOM_WAYPOINTS):
                return command_from_si(robot_id, 0.0, 0.0, 0.0)
            pose, _ = observe(vision, robot_id)
            vx, vy, om = drive_to(pose, SLALOM_WAYPOINTS[progress["next"]], 0.0, cfg.gains)
            return command_from_si(robot_id, vx, vy, om)

        def monitor(w):
            i = progress["next"]
            if i < len(SLALOM_WAYPOINTS):
                r = w.robots[0]
                wx, wy = SLALOM_WAYPOINTS[i]
                if math.hypot(r.x - wx, r.y - wy) <= SLALOM_TOLERANCE:
                    progress["next"] = i + 1
                    if i + 1 == len(SLALOM_WAYPOINTS):
                        report.slalom_time = w.t
                        report.success = True

    elif name == "time_to_ball":
        x, y, th = start_pose(rng, -2.0, 0.0, 0.0, cfg)
        world = fs.WorldState(fs.Ball(0.0, 0.0), [fs.Robot(robot_id, x, y, th)])
        behavior = GoToBall(cfg.gains)

        def controller(vision):
            if vision is None:
                return None
            return behavior.command(robot_id, *observe(vision, robot_id))

        def monitor(w):
            if report.time_to_ball is None and _gap(w, w.robots[0], fp) <= gate:
                report.time_to_ball = w.t
                report.success = True

    elif name == "kick_distance":
        x, y, th = start_pose(rng, -2.0, 0.0, 0.0, cfg)
        reach = fp.robot_radius + fp.ball_radius + 0.5 * gate
        ball = fs.Ball(x + reach * math.cos(th), y + reach * math.sin(th))
        robot = fs.Robot(robot_id, x, y, th, kicker=KickerState(v_cap=cfg.kicker.v_max, charging=False))
        world = fs.WorldState(ball, [robot])
        kick_cmd = command_from_si(robot_id, 0.0, 0.0, 0.0, kick=cfg.bridge.kick_cap)
        idle = command_from_si(robot_id, 0.0, 0.0, 0.0)
        origin = (ball.x, ball.y)
        state = {"sent": False, "launched": False}

        def controller(_vision):
            if state["sent"]:
                return idle
            state["sent"] = True
            return kick_cmd

        def monitor(w):
            b = w.ball
            if not state["launched"]:
                state["launched"] = b.speed > 0.0
                return
            if report.kick_distance is None and (w.out_of_bounds or b.speed == 0.0):
                report.kick_distance = math.hypot(b.x - origin[0], b.y - origin[1])
                report.success = True

    else:  # one_v_zero_goal
        x, y, th = start_pose(rng, -2.0, 0.0, 0.0, cfg)
        world = fs.WorldState(fs.Ball(0.0, 0.0), [fs.Robot(robot_id, x, y, th)])
        behavior = AimAndKick(
            goal=(GOAL_LINE_X, 0.0),
            robot_radius=fp.robot_radius,
            ball_radius=fp.ball_radius,
            kick_gap=gate,
            kick_speed=cfg.bridge.kick_cap,
            gains=cfg.gains,
        )

        def controller(vision):
            if vision is None:
                return None
            return behavior.command(robot_id, *observe(vision, robot_id))

        def monitor(w):
            if report.time_to_ball is None and _gap(w, w.robots[0], fp) <= gate:
                report.time_to_ball = w.t
            if w.out_of_bounds and report.goal_time is None and not report.failed:
                b = w.ball
                if b.x >= GOAL_LINE_X and abs(b.y) <= GOAL_HALF_WIDTH:
                    report.goal_time = w.t
                    report.success = True
                else:
                    report.failed = True

    sim = Simulation(world, cfg)
    controllers = {robot_id: controller}
    max_ticks = int(round(cfg.timeout / cfg.bridge.control_dt))
    while sim.tick < max_ticks and not report.success and not report.failed:
        sim.control_tick(controllers, monitor)

    if not report.success:
        report.failed = True
    report.out_of_bounds = world.out_of_bounds
    report.sim_time = world.t
    report.trace_hash = sim.trace_hash
    if trace is not None:
        trace.extend(sim.trace)
    return report


def sprint_lower_bound(v_max: float, accel_max: float, distance: float = SPRINT_DISTANCE) -> float:
    """Bang-bang minimum time from rest over ``distance`` with a speed cap."""
    t_acc = v_max / accel_max
    d_acc = 0.5 * accel_max * t_acc * t_acc
    if d_acc >= distance:
        return math.sqrt(2.0 * distance / accel_max)
    return t_acc + (distance - d_acc) / v_max


def with_overrides(config: ScenarioConfig, **sections) -> ScenarioConfig:
    """Copy ``config`` replacing fields inside its sections, e.g. bridge={"v_max": 2.0}."""
    changes = {}
    for section, values in sections.items():
        current = getattr(config, section)
        changes[section] = replace(current, **values) if isinstance(values, dict) else values
    return replace(config, **changes)
