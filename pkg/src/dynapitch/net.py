"""Fixed-layout UDP wire formats for robot commands and vision frames.

Both formats are little-endian and end with the same CRC-16 the servo bus
uses, computed over every preceding byte.

Command (17 bytes)::

    magic u32 'SSLC' | version u8 | robot_id u8 | vx i16 | vy i16 | omega i16
    | kick u16 | flags u8 | crc u16

Vision (28 + 11 * count bytes)::

    magic u32 'SSLV' | version u8 | frame_no u32 | t_us u64 | ball_x i32 | ball_y i32
    | count u8 | count * (id u8, x i32, y i32, theta i16) | crc u16
"""
from __future__ import annotations

import enum
import logging
import math
import queue
import socket
import struct
import threading
from collections import deque
from dataclasses import dataclass

from .protocol import crc16

LOGGER = logging.getLogger(__name__)

COMMAND_MAGIC = 0x53534C43
VISION_MAGIC = 0x53534C56
WIRE_VERSION = 1

COMMAND_PORT = 10301
VISION_PORT = 10302

FLAG_DRIBBLE = 0x01
FLAG_CHARGE = 0x02

MAX_VISION_ROBOTS = 16

_COMMAND = struct.Struct("<IBBhhhHB")
_VISION_HEAD = struct.Struct("<IBIQiiB")
_VISION_ROBOT = struct.Struct("<Biih")
_CRC = struct.Struct("<H")

COMMAND_SIZE = _COMMAND.size + _CRC.size
VISION_MIN_SIZE = _VISION_HEAD.size + _CRC.size


class WireErrorCode(enum.Enum):
    LENGTH = "length"
    MAGIC = "magic"
    VERSION = "version"
    CRC = "crc"
    COUNT = "count"


class WireError(ValueError):
    def __init__(self, code: WireErrorCode, message: str):
        super().__init__(f"{code.value}: {message}")
        self.code = code


@dataclass(frozen=True)
class RobotCommand:
    robot_id: int
    vx_mm_s: int = 0
    vy_mm_s: int = 0
    omega_mrad_s: int = 0
    kick_mm_s: int = 0
    flags: int = 0

    @property
    def dribble(self) -> bool:
        return bool(self.flags & FLAG_DRIBBLE)

    @property
    def charge(self) -> bool:
        return bool(self.flags & FLAG_CHARGE)


@dataclass(frozen=True)
class RobotObservation:
    robot_id: int
    x_mm: int
    y_mm: int
    theta_mrad: int


@dataclass(frozen=True)
class VisionFrame:
    frame_no: int
    t_us: int
    ball_x_mm: int
    ball_y_mm: int
    robots: tuple[RobotObservation, ...] = ()

    def robot(self, robot_id: int) -> RobotObservation | None:
        for r in self.robots:
            if r.robot_id == robot_id:
                return r
        return None


def _with_crc(body: bytes) -> bytes:
    return body + _CRC.pack(crc16(body))


def _check_crc(buf: bytes) -> None:
    (crc,) = _CRC.unpack_from(buf, len(buf) - 2)
    if crc16(buf[:-2]) != crc:
        raise WireError(WireErrorCode.CRC, "checksum mismatch")


def _check_head(buf: bytes, magic: int) -> None:
    (got,) = struct.unpack_from("<I", buf)
    if got != magic:
        raise WireError(WireErrorCode.MAGIC, f"magic 0x{got:08X}")
    if buf[4] != WIRE_VERSION:
        raise WireError(WireErrorCode.VERSION, f"version {buf[4]}")


def encode_command(c: RobotCommand) -> bytes:
    try:
        body = _COMMAND.pack(
            COMMAND_MAGIC, WIRE_VERSION, c.robot_id, c.vx_mm_s, c.vy_mm_s, c.omega_mrad_s, c.kick_mm_s, c.flags
        )
    except struct.error as exc:
        raise ValueError(f"command field out of range: {exc}") from exc
    return _with_crc(body)


def decode_command(buf: bytes) -> RobotCommand:
    buf = bytes(buf)
    if len(buf) != COMMAND_SIZE:
        raise WireError(WireErrorCode.LENGTH, f"expected {COMMAND_SIZE} bytes, got {len(buf)}")
    _check_head(buf, COMMAND_MAGIC)
    _check_crc(buf)
    _, _, robot_id, vx, vy, omega, kick, flags = _COMMAND.unpack_from(buf)
    return RobotCommand(robot_id, vx, vy, omega, kick, flags)


def encode_vision(v: VisionFrame) -> bytes:
    if len(v.robots) > MAX_VISION_ROBOTS:
        raise ValueError(f"at most {MAX_VISION_ROBOTS} robots per frame")
    try:
        parts = [_VISION_HEAD.pack(VISION_MAGIC, WIRE_VERSION, v.frame_no, v.t_us, v.ball_x_mm, v.ball_y_mm, len(v.robots))]
        parts += [_VISION_ROBOT.pack(r.robot_id, r.x_mm, r.y_mm, r.theta_mrad) for r in v.robots]
    except struct.error as exc:
        raise ValueError(f"vision field out of range: {exc}") from exc
    return _with_crc(b"".join(parts))


def decode_vision(buf: bytes) -> VisionFrame:
    buf = bytes(buf)
    if len(buf) < VISION_MIN_SIZE:
        raise WireError(WireErrorCode.LENGTH, f"frame of {len(buf)} bytes is shorter than {VISION_MIN_SIZE}")
    _check_head(buf, VISION_MAGIC)
    _, _, frame_no, t_us, bx, by, count = _VISION_HEAD.unpack_from(buf)
    if count > MAX_VISION_ROBOTS:
        raise WireError(WireErrorCode.COUNT, f"count {count} exceeds {MAX_VISION_ROBOTS}")
    expected = VISION_MIN_SIZE + count * _VISION_ROBOT.size
    if len(buf) != expected:
        raise WireError(WireErrorCode.COUNT, f"count {count} needs {expected} bytes, got {len(buf)}")
    _check_crc(buf)
    robots = tuple(
        RobotObservation(*_VISION_ROBOT.unpack_from(buf, _VISION_HEAD.size + i * _VISION_ROBOT.size))
        for i in range(count)
    )
    return VisionFrame(frame_no, t_us, bx, by, robots)


# --------------------------------------------------------------------------
# Unit helpers
# --------------------------------------------------------------------------


def _i16(x: float) -> int:
    return max(-32768, min(32767, int(round(x))))


def command_from_si(robot_id: int, vx: float, vy: float, omega: float, kick: float = 0.0, flags: int = 0) -> RobotCommand:
    """Build a RobotCommand from SI values, rounding to mm/s and mrad/s."""
    return RobotCommand(
        robot_id,
        _i16(vx * 1000.0),
        _i16(vy * 1000.0),
        _i16(omega * 1000.0),
        max(0, min(0xFFFF, int(round(kick * 1000.0)))),
        flags,
    )


def _mm(x: float) -> int:
    return int(math.floor(x * 1000.0 + 0.5))


def vision_from_world(world, frame_no: int, t_us: int) -> VisionFrame:
    """Snapshot ground truth from a field WorldState, quantized to mm and mrad."""
    robots = tuple(
        RobotObservation(r.robot_id, _mm(r.x), _mm(r.y), _mm(r.theta)) for r in world.robots[:MAX_VISION_ROBOTS]
    )
    return VisionFrame(frame_no, t_us, _mm(world.ball.x), _mm(world.ball.y), robots)


class VisionPublisher:
    """Samples the world at ``rate`` Hz on the simulation clock.

    Called once per control tick; emits a frame whenever the tick's time
    crosses into a new sampling period, so one simulated second yields
    exactly ``rate`` frames regardless of the control period.
    """

    def __init__(self, rate: int = 60, control_dt: float = 0.01):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.control_dt_us = round(control_dt * 1_000_000)
        self.frame_no = 0
        self._last_period = -1

    def poll(self, world, tick: int) -> VisionFrame | None:
        t_us = tick * self.control_dt_us
        period = t_us * self.rate // 1_000_000
        if period <= self._last_period:
            return None
        self._last_period = period
        frame = vision_from_world(world, self.frame_no, t_us)
        self.frame_no += 1
        return frame


# --------------------------------------------------------------------------
# Transports
# --------------------------------------------------------------------------


class CommandQueue:
    """Ordered hand-off of decoded commands to the control loop (thread safe)."""

    def __init__(self) -> None:
        self._q: queue.SimpleQueue[RobotCommand] = queue.SimpleQueue()

    def put(self, cmd: RobotCommand) -> None:
        self._q.put(cmd)

    def drain(self) -> list[RobotCommand]:
        out = []
        while True:
            try:
                out.append(self._q.get_nowait())
            except queue.Empty:
                return out


class LoopbackTransport:
    """In-process stand-in for the UDP link; bytes still go through the codecs."""

    def __init__(self, commands: CommandQueue | None = None):
        self.commands = commands or CommandQueue()
        self.vision: deque[bytes] = deque()
        self.rejected = 0

    def send_command(self, cmd: RobotCommand) -> None:
        self.deliver(encode_command(cmd))

    def deliver(self, datagram: bytes) -> None:
        try:
            self.commands.put(decode_command(datagram))
        except WireError as exc:
            self.rejected += 1
            LOGGER.debug("dropped command datagram: %s", exc)

    def publish(self, frame: VisionFrame) -> None:
        self.vision.append(encode_vision(frame))


class UdpCommandReceiver:
    """Background thread decoding command datagrams into a CommandQueue."""

    def __init__(self, commands: CommandQueue, host: str = "127.0.0.1", port: int = COMMAND_PORT):
        self.commands = commands
        self.rejected = 0
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind((host, port))
        self.sock.settimeout(0.1)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="cmd-rx", daemon=True)

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()

    def start(self) -> "UdpCommandReceiver":
        self._thread.start()
        return self

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                datagram, _ = self.sock.recvfrom(2048)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                self.commands.put(decode_command(datagram))
            except WireError as exc:
                self.rejected += 1
                LOGGER.warning("rejected command datagram: %s", exc)

    def close(self) -> None:
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join(timeout=1.0)
        self.sock.close()


class UdpVisionSender:
    def __init__(self, host: str = "127.0.0.1", port: int = VISION_PORT):
        self.target = (host, port)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    def publish(self, frame: VisionFrame) -> None:
        self.sock.sendto(encode_vision(frame), self.target)

    def close(self) -> None:
        self.sock.close()
