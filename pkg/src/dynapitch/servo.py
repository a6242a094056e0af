"""Emulated XL430-class servos on a virtual half-duplex bus."""
from __future__ import annotations

import enum
import logging
import math
import struct
from dataclasses import dataclass, field

from . import protocol as proto
from .protocol import Instruction, StatusError, StatusPacket

LOGGER = logging.getLogger(__name__)

TICKS_PER_REV = 4096
VELOCITY_UNIT_RPM = 0.229
VELOCITY_LIMIT = 265
# ticks per second produced by one velocity unit
TICKS_PER_S_PER_UNIT = VELOCITY_UNIT_RPM * TICKS_PER_REV / 60.0
ACCEL_LIMIT = 2000.0  # velocity units per second

MODEL_NUMBER = 1060
FIRMWARE_VERSION = 0

MODE_VELOCITY = 1
MODE_POSITION = 3
MODE_PWM = 16


class Access(enum.Enum):
    READ_ONLY = "r"
    READ_WRITE = "rw"
    EEPROM = "eeprom"


@dataclass(frozen=True)
class Register:
    name: str
    address: int
    size: int
    access: Access
    signed: bool
    minimum: int
    maximum: int
    default: int = 0

    @property
    def fmt(self) -> str:
        return {1: "b", 2: "h", 4: "i"}[self.size] if self.signed else {1: "B", 2: "H", 4: "I"}[self.size]

    def pack(self, value: int) -> bytes:
        return struct.pack("<" + self.fmt, value)

    def unpack(self, data: bytes) -> int:
        return struct.unpack("<" + self.fmt, data)[0]


_REGISTERS = (
    Register("ID", 7, 1, Access.EEPROM, False, 0, proto.MAX_ID, 1),
    Register("OperatingMode", 11, 1, Access.EEPROM, False, 0, 16, MODE_POSITION),
    Register("TorqueEnable", 64, 1, Access.READ_WRITE, False, 0, 1, 0),
    Register("GoalPwm", 100, 2, Access.READ_WRITE, True, -885, 885, 0),
    Register("GoalVelocity", 104, 4, Access.READ_WRITE, True, -VELOCITY_LIMIT, VELOCITY_LIMIT, 0),
    Register("GoalPosition", 116, 4, Access.READ_WRITE, True, 0, TICKS_PER_REV - 1, 0),
    Register("PresentVelocity", 128, 4, Access.READ_ONLY, True, -VELOCITY_LIMIT, VELOCITY_LIMIT, 0),
    Register("PresentPosition", 132, 4, Access.READ_ONLY, True, 0, TICKS_PER_REV - 1, 0),
)

CONTROL_TABLE: dict[int, Register] = {r.address: r for r in _REGISTERS}
ADDR = {r.name: r.address for r in _REGISTERS}
_MODE, _GOAL_VELOCITY, _GOAL_POSITION = ADDR["OperatingMode"], ADDR["GoalVelocity"], ADDR["GoalPosition"]


def _check_table(table: dict[int, Register]) -> None:
    spans = sorted((r.address, r.address + r.size) for r in table.values())
    for (_, end), (start, _) in zip(spans, spans[1:]):
        if start < end:
            raise ValueError("control table registers overlap")


_check_table(CONTROL_TABLE)


class ServoState:
    """One servo: register values plus continuous motor state.

    ``position`` is in ticks, ``velocity`` in velocity units (0.229 rpm).
    """

    def __init__(self, servo_id: int = 1, operating_mode: int = MODE_POSITION):
        self.values: dict[int, int] = {r.address: r.default for r in _REGISTERS}
        self.values[ADDR["ID"]] = servo_id
        self.values[ADDR["OperatingMode"]] = operating_mode
        self.position = 0.0
        self.velocity = 0.0

    def __repr__(self) -> str:
        return f"ServoState(id={self.id}, mode={self.mode}, pos={self.position:.1f}, vel={self.velocity:.1f})"

    @property
    def id(self) -> int:
        return self.values[ADDR["ID"]]

    @property
    def mode(self) -> int:
        return self.values[ADDR["OperatingMode"]]

    @property
    def torque_on(self) -> bool:
        return self.values[ADDR["TorqueEnable"]] == 1

    @property
    def present_velocity(self) -> int:
        return int(self.velocity)

    @property
    def present_position(self) -> int:
        return int(self.position)

    def _current(self, reg: Register) -> int:
        if reg.name == "PresentVelocity":
            return self.present_velocity
        if reg.name == "PresentPosition":
            return self.present_position
        return self.values[reg.address]

    def read(self, address: int, length: int) -> tuple[bytes, int]:
        """Return (little-endian bytes, status error byte)."""
        reg = CONTROL_TABLE.get(address)
        if reg is None or reg.size != length:
            return b"", StatusError.DATA_LENGTH
        return reg.pack(self._current(reg)), StatusError.NONE

    def read_value(self, name: str) -> int:
        return self._current(CONTROL_TABLE[ADDR[name]])

    def write(self, address: int, data: bytes) -> int:
        """Store a register value, clamped to its limits. Returns the error byte."""
        reg = CONTROL_TABLE.get(address)
        if reg is None or reg.size != len(data):
            return StatusError.DATA_LENGTH
        if reg.access is Access.READ_ONLY:
            return StatusError.ACCESS
        if reg.access is Access.EEPROM and self.torque_on:
            return StatusError.ACCESS
        value = min(reg.maximum, max(reg.minimum, reg.unpack(bytes(data))))
        self.values[address] = value
        return StatusError.NONE

    def write_value(self, name: str, value: int) -> int:
        reg = CONTROL_TABLE[ADDR[name]]
        lo, hi = (-(1 << (8 * reg.size - 1)), (1 << (8 * reg.size - 1)) - 1) if reg.signed else (0, (1 << (8 * reg.size)) - 1)
        return self.write(reg.address, reg.pack(min(hi, max(lo, value))))

    def step(self, dt: float) -> None:
        step_dynamics(self, dt)


def _slew(current: float, target: float, max_delta: float) -> float:
    delta = target - current
    if delta > max_delta:
        return current + max_delta
    if delta < -max_delta:
        return current - max_delta
    return target


def step_dynamics(servo: ServoState, dt: float) -> None:
    """Advance the motor model by ``dt`` seconds.

    Velocity mode slews toward GoalVelocity at ACCEL_LIMIT. Position mode
    follows a trapezoidal profile toward GoalPosition, capped at
    |GoalVelocity| (or the hardware limit when that is zero). With torque
    off, or in an unmodelled mode, the motor coasts down at the same limit.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    max_dv = ACCEL_LIMIT * dt
    v = servo.velocity
    values = servo.values
    mode = values[_MODE]

    if not servo.torque_on or mode not in (MODE_VELOCITY, MODE_POSITION):
        if v == 0.0:
            return
        v = _slew(v, 0.0, max_dv)
    elif mode == MODE_VELOCITY:
        v = _slew(v, float(values[_GOAL_VELOCITY]), max_dv)
    else:
        cap = abs(values[_GOAL_VELOCITY]) or VELOCITY_LIMIT
        error = values[_GOAL_POSITION] - servo.position
        if abs(error) <= 1.0 and abs(v) <= max_dv:
            v = 0.0
        else:
            # Fastest speed that can still stop at the goal, and no overshoot in one step.
            stop_speed = math.sqrt(2.0 * ACCEL_LIMIT * abs(error) / TICKS_PER_S_PER_UNIT)
            one_step = abs(error) / (TICKS_PER_S_PER_UNIT * dt)
            desired = math.copysign(min(cap, stop_speed, one_step), error)
            v = _slew(v, desired, max_dv)
    v = min(VELOCITY_LIMIT, max(-VELOCITY_LIMIT, v))
    servo.velocity = v

    pos = servo.position + v * TICKS_PER_S_PER_UNIT * dt
    if mode == MODE_POSITION:
        pos = min(TICKS_PER_REV - 1.0, max(0.0, pos))
    else:
        pos %= TICKS_PER_REV
    servo.position = pos


@dataclass
class VirtualBus:
    """A bank of servos sharing one half-duplex link.

    ``diagnostics`` collects a message per frame that could not be handled;
    ``fault`` is true once any has been recorded.
    """

    servos: dict[int, ServoState] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)

    @classmethod
    def with_servos(cls, ids, operating_mode: int = MODE_POSITION, torque: bool = False) -> "VirtualBus":
        bus = cls()
        for servo_id in ids:
            bus.add(ServoState(servo_id, operating_mode))
            if torque:
                bus.servos[servo_id].write_value("TorqueEnable", 1)
        return bus

    @property
    def fault(self) -> bool:
        return bool(self.diagnostics)

    def add(self, servo: ServoState) -> None:
        if servo.id == proto.BROADCAST_ID or servo.id in self.servos:
            raise ValueError(f"servo id {servo.id} unavailable")
        self.servos[servo.id] = servo
        self.servos = dict(sorted(self.servos.items()))

    def step(self, dt: float) -> None:
        for servo in self.servos.values():
            step_dynamics(servo, dt)

    def transact(self, frame: bytes) -> list[bytes]:
        return bus_transact(self, frame)

    def _rekey(self) -> None:
        self.servos = dict(sorted((s.id, s) for s in self.servos.values()))


def _status(servo_id: int, error: int = 0, params: bytes = b"") -> bytes:
    return proto.encode_status(StatusPacket(servo_id, int(error), params))


def _ping_reply(servo: ServoState) -> bytes:
    return _status(servo.id, 0, struct.pack("<HB", MODEL_NUMBER, FIRMWARE_VERSION))


def _write_to(bus: VirtualBus, servo: ServoState, address: int, data: bytes) -> int:
    old_id = servo.id
    err = servo.write(address, data)
    if servo.id != old_id:
        if servo.id in bus.servos or servo.id == proto.BROADCAST_ID:
            servo.values[ADDR["ID"]] = old_id
            return StatusError.DATA_RANGE
        bus._rekey()
    return err


def bus_transact(bus: VirtualBus, frame: bytes) -> list[bytes]:
    """Deliver one instruction frame; return the encoded status replies.

    Broadcast WRITE and SYNC_WRITE are silent. An absent unicast target gives
    no reply, like a bus timeout.
    """
    try:
        pkt = proto.decode_packet(frame)
    except proto.ProtocolError as exc:
        bus.diagnostics.append(f"undecodable frame: {exc}")
        return []
    if isinstance(pkt, StatusPacket):
        bus.diagnostics.append("status packet received on instruction side")
        return []

    ins = pkt.instruction
    if ins in (Instruction.SYNC_WRITE, Instruction.SYNC_READ):
        if not pkt.is_broadcast:
            bus.diagnostics.append(f"{ins.name} must use the broadcast id")
            return []
        if ins is Instruction.SYNC_WRITE:
            return _sync_write(bus, pkt.params)
        return _sync_read(bus, pkt.params)

    if pkt.is_broadcast:
        targets = list(bus.servos.values())
    else:
        servo = bus.servos.get(pkt.target_id)
        if servo is None:
            return []
        targets = [servo]

    replies: list[bytes] = []
    if ins is Instruction.PING:
        return [_ping_reply(s) for s in targets]
    if ins is Instruction.READ:
        if pkt.is_broadcast:
            return []
        servo = targets[0]
        if len(pkt.params) != 4:
            return [_status(servo.id, StatusError.DATA_LENGTH)]
        address, length = struct.unpack("<HH", pkt.params)
        data, err = servo.read(address, length)
        return [_status(servo.id, err, data)]
    if ins is Instruction.WRITE:
        if len(pkt.params) < 2:
            return [] if pkt.is_broadcast else [_status(targets[0].id, StatusError.DATA_LENGTH)]
        (address,) = struct.unpack_from("<H", pkt.params)
        for servo in targets:
            err = _write_to(bus, servo, address, pkt.params[2:])
            if not pkt.is_broadcast:
                replies.append(_status(servo.id, err))
        return replies
    bus.diagnostics.append(f"unhandled instruction {ins!r}")
    return []


def _sync_write(bus: VirtualBus, params: bytes) -> list[bytes]:
    try:
        address, size, slices = proto.parse_sync_write(params)
    except proto.ProtocolError as exc:
        bus.diagnostics.append(f"bad sync write: {exc}")
        return []
    # Every slice is applied before anything else happens on the bus.
    for servo_id, data in slices.items():
        servo = bus.servos.get(servo_id)
        if servo is not None:
            _write_to(bus, servo, address, data)
    return []


def _sync_read(bus: VirtualBus, params: bytes) -> list[bytes]:
    if len(params) < 4:
        bus.diagnostics.append("bad sync read parameters")
        return []
    address, length = struct.unpack_from("<HH", params)
    replies = []
    for servo_id in params[4:]:
        servo = bus.servos.get(servo_id)
        if servo is None:
            continue
        data, err = servo.read(address, length)
        replies.append(_status(servo.id, err, data))
    return replies


def table_read(servo: ServoState, address: int, length: int) -> tuple[bytes, int]:
    return servo.read(address, length)


def table_write(servo: ServoState, address: int, data: bytes) -> int:
    return servo.write(address, data)
