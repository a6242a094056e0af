"""Dynamixel Protocol 2.0 style framing: CRC-16, byte stuffing, packet codec
and an incremental stream parser that resynchronizes on corruption.

Frame layout (all multi-byte integers little-endian)::

    FF FF FD 00 | id | len_lo len_hi | instruction | stuffed params | crc_lo crc_hi

The length field counts the instruction byte, the stuffed parameters and the
two CRC bytes. The CRC covers every byte from the first FF through the last
stuffed parameter byte. Status packets use instruction 0x55 followed by an
error byte; the error byte is stuffed together with the parameters.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Union

HEADER = b"\xff\xff\xfd\x00"
STUFF_PATTERN = b"\xff\xff\xfd"
STUFF_BYTE = 0xFD

BROADCAST_ID = 0xFE
RESERVED_IDS = frozenset({0xFD, 0xFF})
MAX_ID = 252

STATUS_INSTRUCTION = 0x55
MAX_PARAMS = 65532
MAX_FRAME = 4096

# header (4) + id (1) + length (2)
_PREFIX_LEN = 7


class Instruction(enum.IntEnum):
    PING = 0x01
    READ = 0x02
    WRITE = 0x03
    SYNC_READ = 0x82
    SYNC_WRITE = 0x83


class StatusError(enum.IntFlag):
    """Bits of the status packet error byte."""

    NONE = 0
    RESULT_FAIL = 0x01
    INSTRUCTION = 0x02
    CRC = 0x04
    DATA_RANGE = 0x08
    DATA_LENGTH = 0x10
    DATA_LIMIT = 0x20
    ACCESS = 0x40


class ProtocolError(ValueError):
    """Base class for codec failures."""


class FramingError(ProtocolError):
    pass


class CrcMismatch(ProtocolError):
    pass


# --------------------------------------------------------------------------
# CRC-16 (poly 0x8005, init 0, no reflection, no final xor)
# --------------------------------------------------------------------------

CRC_POLY = 0x8005


def crc16_bitwise(data: bytes, crc: int = 0) -> int:
    """Bit-at-a-time CRC-16. Slow; kept as the reference for the table."""
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ CRC_POLY) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
    return crc


def _make_table() -> tuple[int, ...]:
    return tuple(crc16_bitwise(bytes([i])) for i in range(256))


CRC_TABLE = _make_table()


def crc16(data: bytes, crc: int = 0) -> int:
    table = CRC_TABLE
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ table[((crc >> 8) ^ byte) & 0xFF]
    return crc


# --------------------------------------------------------------------------
# Byte stuffing
# --------------------------------------------------------------------------


def stuff(payload: bytes) -> bytes:
    """Insert 0xFD after every FF FF FD found in ``payload``."""
    if STUFF_PATTERN not in payload:
        return bytes(payload)
    out = bytearray()
    start = 0
    while True:
        idx = payload.find(STUFF_PATTERN, start)
        if idx < 0:
            out += payload[start:]
            return bytes(out)
        end = idx + len(STUFF_PATTERN)
        out += payload[start:end]
        out.append(STUFF_BYTE)
        start = end


def unstuff(wire: bytes) -> bytes:
    """Remove the escape byte following each FF FF FD.

    Raises FramingError when the pattern is not followed by 0xFD, including
    when the region ends right after it.
    """
    if STUFF_PATTERN not in wire:
        return bytes(wire)
    out = bytearray()
    start = 0
    while True:
        idx = wire.find(STUFF_PATTERN, start)
        if idx < 0:
            out += wire[start:]
            return bytes(out)
        end = idx + len(STUFF_PATTERN)
        if end >= len(wire):
            raise FramingError("escape sequence truncated at end of region")
        if wire[end] != STUFF_BYTE:
            raise FramingError(f"bad escape byte 0x{wire[end]:02X} after FF FF FD")
        out += wire[start:end]
        start = end + 1


# --------------------------------------------------------------------------
# Packets
# --------------------------------------------------------------------------


def _check_id(value: int, *, allow_broadcast: bool) -> None:
    if not 0 <= value <= 0xFF:
        raise ProtocolError(f"id {value} out of byte range")
    if value in RESERVED_IDS:
        raise ProtocolError(f"id 0x{value:02X} is reserved")
    if value == BROADCAST_ID and not allow_broadcast:
        raise ProtocolError("broadcast id not allowed here")


@dataclass(frozen=True)
class InstructionPacket:
    target_id: int
    instruction: Instruction
    params: bytes = b""

    def __post_init__(self) -> None:
        _check_id(self.target_id, allow_broadcast=True)
        object.__setattr__(self, "instruction", Instruction(self.instruction))
        object.__setattr__(self, "params", bytes(self.params))
        if len(self.params) > MAX_PARAMS:
            raise ProtocolError(f"{len(self.params)} parameter bytes exceeds {MAX_PARAMS}")

    @property
    def is_broadcast(self) -> bool:
        return self.target_id == BROADCAST_ID


@dataclass(frozen=True)
class StatusPacket:
    source_id: int
    error: int = 0
    params: bytes = b""

    def __post_init__(self) -> None:
        _check_id(self.source_id, allow_broadcast=False)
        if not 0 <= self.error <= 0xFF:
            raise ProtocolError(f"error byte {self.error} out of range")
        object.__setattr__(self, "params", bytes(self.params))
        if len(self.params) + 1 > MAX_PARAMS:
            raise ProtocolError("too many parameter bytes")


Packet = Union[InstructionPacket, StatusPacket]


def _frame(packet_id: int, body: bytes) -> bytes:
    stuffed = stuff(body)
    head = HEADER + struct.pack("<BH", packet_id, len(stuffed) + 2)
    crc = crc16(head + stuffed)
    return head + stuffed + struct.pack("<H", crc)


def encode_instruction(pkt: InstructionPacket) -> bytes:
    return _frame(pkt.target_id, bytes([pkt.instruction]) + pkt.params)


def encode_status(pkt: StatusPacket) -> bytes:
    return _frame(pkt.source_id, bytes([STATUS_INSTRUCTION, pkt.error]) + pkt.params)


def encode(pkt: Packet) -> bytes:
    if isinstance(pkt, StatusPacket):
        return encode_status(pkt)
    return encode_instruction(pkt)


def decode_packet(frame: bytes) -> Packet:
    """Decode exactly one complete frame."""
    frame = bytes(frame)
    if len(frame) < _PREFIX_LEN + 3 or not frame.startswith(HEADER):
        raise FramingError("missing header or frame too short")
    packet_id, length = struct.unpack_from("<BH", frame, 4)
    if len(frame) != _PREFIX_LEN + length:
        raise FramingError(f"length field {length} disagrees with frame size {len(frame)}")
    (crc,) = struct.unpack_from("<H", frame, len(frame) - 2)
    if crc16(frame[:-2]) != crc:
        raise CrcMismatch("crc mismatch")
    body = unstuff(frame[_PREFIX_LEN:-2])
    instruction = body[0]
    if instruction == STATUS_INSTRUCTION:
        if len(body) < 2:
            raise FramingError("status packet without error byte")
        try:
            return StatusPacket(packet_id, body[1], body[2:])
        except ProtocolError as exc:
            raise FramingError(str(exc)) from exc
    try:
        return InstructionPacket(packet_id, Instruction(instruction), body[1:])
    except ValueError as exc:
        raise FramingError(f"unknown instruction 0x{instruction:02X}") from exc


# Convenience builders for the instructions the bus understands.


def ping(target_id: int) -> InstructionPacket:
    return InstructionPacket(target_id, Instruction.PING)


def read(target_id: int, address: int, length: int) -> InstructionPacket:
    return InstructionPacket(target_id, Instruction.READ, struct.pack("<HH", address, length))


def write(target_id: int, address: int, data: bytes) -> InstructionPacket:
    return InstructionPacket(target_id, Instruction.WRITE, struct.pack("<H", address) + bytes(data))


def sync_write(address: int, size: int, slices: dict[int, bytes]) -> InstructionPacket:
    params = bytearray(struct.pack("<HH", address, size))
    for servo_id, data in slices.items():
        if len(data) != size:
            raise ProtocolError(f"slice for id {servo_id} has {len(data)} bytes, expected {size}")
        _check_id(servo_id, allow_broadcast=False)
        params.append(servo_id)
        params += data
    return InstructionPacket(BROADCAST_ID, Instruction.SYNC_WRITE, bytes(params))


def sync_read(address: int, size: int, ids: list[int]) -> InstructionPacket:
    for servo_id in ids:
        _check_id(servo_id, allow_broadcast=False)
    return InstructionPacket(BROADCAST_ID, Instruction.SYNC_READ, struct.pack("<HH", address, size) + bytes(ids))


def parse_sync_write(params: bytes) -> tuple[int, int, dict[int, bytes]]:
    """Split SYNC_WRITE parameters into (address, size, {id: data})."""
    if len(params) < 4:
        raise FramingError("sync write parameters too short")
    address, size = struct.unpack_from("<HH", params)
    rest = params[4:]
    stride = size + 1
    if size == 0 or len(rest) % stride:
        raise FramingError("sync write payload is not a whole number of slices")
    slices: dict[int, bytes] = {}
    for offset in range(0, len(rest), stride):
        slices[rest[offset]] = bytes(rest[offset + 1 : offset + stride])
    return address, size, slices


# --------------------------------------------------------------------------
# Incremental stream parser
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PacketEvent:
    packet: Packet
    kind = "packet"


@dataclass(frozen=True)
class Desync:
    skipped: int
    kind = "desync"

    def __post_init__(self) -> None:
        if self.skipped <= 0:
            raise ValueError("desync count must be positive")


@dataclass(frozen=True)
class CrcError:
    frame: bytes
    kind = "crc"


ParseEvent = Union[PacketEvent, Desync, CrcError]


@dataclass
class StreamParser:
    """Feed arbitrary chunks, get ParseEvents back.

    Garbage bytes are counted and reported as a single Desync once the next
    header is located, so the event sequence does not depend on how the byte
    stream was chunked. A frame failing its CRC is reported whole and parsing
    resumes after it. A CRC-valid frame that still cannot be decoded (bad
    escape, unknown instruction) is reported as a Desync over its length.
    """

    max_frame: int = MAX_FRAME
    _buf: bytearray = field(default_factory=bytearray, repr=False)
    _skipped: int = 0

    def feed(self, chunk: bytes) -> list[ParseEvent]:
        self._buf += chunk
        events: list[ParseEvent] = []
        buf = self._buf
        while True:
            idx = buf.find(HEADER)
            if idx < 0:
                # Keep a possible partial header at the tail.
                keep = min(len(buf), len(HEADER) - 1)
                drop = len(buf) - keep
                if drop:
                    self._skipped += drop
                    del buf[:drop]
                break
            if idx:
                self._skipped += idx
                del buf[:idx]
            if len(buf) < _PREFIX_LEN:
                break
            (length,) = struct.unpack_from("<H", buf, 5)
            total = _PREFIX_LEN + length
            if length < 3 or total > self.max_frame:
                self._skipped += 1
                del buf[:1]
                continue
            if len(buf) < total:
                break
            if self._skipped:
                events.append(Desync(self._skipped))
                self._skipped = 0
            frame = bytes(buf[:total])
            del buf[:total]
            try:
                events.append(PacketEvent(decode_packet(frame)))
            except CrcMismatch:
                events.append(CrcError(frame))
            except FramingError:
                events.append(Desync(total))
        return events

    def finish(self) -> list[ParseEvent]:
        """Flush at end of stream: everything still buffered is garbage."""
        skipped = self._skipped + len(self._buf)
        self._buf.clear()
        self._skipped = 0
        return [Desync(skipped)] if skipped else []


def decode_stream(state: StreamParser | None, chunk: bytes) -> tuple[StreamParser, list[ParseEvent]]:
    """Functional wrapper around StreamParser.feed; ``None`` starts fresh."""
    if state is None:
        state = StreamParser()
    return state, state.feed(chunk)
