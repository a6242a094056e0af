import random
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dynapitch import protocol as p
from oracles import crc16_longdiv, stuff_reference

PING_1_BODY = bytes.fromhex("FFFFFD0001030001")
# Frozen from crc16_longdiv(PING_1_BODY).
PING_1_CRC = 0x4E19


def test_oracle_value_is_frozen():
    assert crc16_longdiv(PING_1_BODY) == PING_1_CRC


def test_crc_empty():
    assert p.crc16(b"") == 0x0000
    assert p.crc16_bitwise(b"") == 0x0000


def test_crc_ping_frame():
    assert p.crc16(PING_1_BODY) == PING_1_CRC
    assert p.crc16_bitwise(PING_1_BODY) == PING_1_CRC


def test_crc_all_single_bytes():
    for x in range(256):
        data = bytes([x])
        assert p.crc16(data) == p.crc16_bitwise(data) == crc16_longdiv(data)


@given(st.binary(max_size=64))
def test_crc_matches_longdiv(data):
    assert p.crc16(data) == crc16_longdiv(data)


@pytest.mark.parametrize(
    "raw, stuffed",
    [
        ("010203", "010203"),
        ("FFFFFD", "FFFFFDFD"),
        ("FFFFFDFFFFFD", "FFFFFDFDFFFFFDFD"),
        ("FFFFFDFD", "FFFFFDFDFD"),
        ("FFFFFFFD", "FFFFFFFDFD"),
    ],
)
def test_stuff_examples(raw, stuffed):
    raw_b, stuffed_b = bytes.fromhex(raw), bytes.fromhex(stuffed)
    assert p.stuff(raw_b) == stuffed_b == stuff_reference(raw_b)
    assert p.unstuff(stuffed_b) == raw_b


@pytest.mark.parametrize("wire", ["FFFFFD", "0102FFFFFD", "FFFFFD00"])
def test_unstuff_rejects_bad_escape(wire):
    with pytest.raises(p.FramingError):
        p.unstuff(bytes.fromhex(wire))


def _biased_bytes(rng, n):
    # Mostly header-ish bytes so the stuffing path is exercised often.
    return bytes(rng.choice((0xFF, 0xFD, 0x00, rng.randrange(256))) for _ in range(n))


def test_stuff_roundtrip_seeded():
    rng = random.Random(1234)
    for _ in range(10_000):
        x = _biased_bytes(rng, rng.randrange(0, 24))
        s = p.stuff(x)
        assert s == stuff_reference(x)
        assert p.unstuff(s) == x
        assert b"\xff\xff\xfd\x00" not in s


def test_encode_ping():
    frame = p.encode_instruction(p.ping(1))
    assert frame == PING_1_BODY + struct.pack("<H", PING_1_CRC)
    assert frame.hex(" ").upper() == "FF FF FD 00 01 03 00 01 19 4E"


def test_encode_write_goal_position():
    frame = p.encode_instruction(p.write(1, 116, struct.pack("<i", 1500)))
    # instruction + 2 addr + 4 data + 2 crc
    assert struct.unpack_from("<H", frame, 5)[0] == 9
    assert frame[7] == p.Instruction.WRITE
    assert frame[8:14] == bytes.fromhex("7400DC050000")
    assert len(frame) == 16
    assert crc16_longdiv(frame[:-2]) == struct.unpack_from("<H", frame, 14)[0]


@pytest.mark.parametrize("bad", [0xFD, 0xFF])
def test_reserved_ids_rejected(bad):
    with pytest.raises(p.ProtocolError):
        p.InstructionPacket(bad, p.Instruction.PING)


def test_broadcast_status_rejected():
    with pytest.raises(p.ProtocolError):
        p.StatusPacket(p.BROADCAST_ID)


def test_status_roundtrip_with_stuffing():
    pkt = p.StatusPacket(3, int(p.StatusError.DATA_LENGTH), b"\xff\xff\xfd\x00")
    frame = p.encode_status(pkt)
    assert frame[7] == p.STATUS_INSTRUCTION
    assert p.decode_packet(frame) == pkt


def test_decode_packet_crc_mismatch():
    frame = bytearray(p.encode_instruction(p.ping(1)))
    frame[-1] ^= 0xFF
    with pytest.raises(p.CrcMismatch):
        p.decode_packet(bytes(frame))


def test_sync_write_split():
    pkt = p.sync_write(104, 4, {1: b"\x01\x00\x00\x00", 2: b"\x02\x00\x00\x00"})
    assert pkt.target_id == p.BROADCAST_ID
    addr, size, slices = p.parse_sync_write(pkt.params)
    assert (addr, size) == (104, 4)
    assert slices == {1: b"\x01\x00\x00\x00", 2: b"\x02\x00\x00\x00"}


def test_parse_sync_write_ragged():
    with pytest.raises(p.FramingError):
        p.parse_sync_write(struct.pack("<HH", 104, 4) + b"\x01\x00\x00")


valid_ids = st.integers(0, 252)
instruction_packets = st.builds(
    p.InstructionPacket,
    st.one_of(valid_ids, st.just(p.BROADCAST_ID)),
    st.sampled_from(list(p.Instruction)),
    st.binary(max_size=40),
)
status_packets = st.builds(p.StatusPacket, valid_ids, st.integers(0, 255), st.binary(max_size=40))


@given(st.one_of(instruction_packets, status_packets))
def test_roundtrip_property(pkt):
    assert p.decode_packet(p.encode(pkt)) == pkt


# --- stream parser -------------------------------------------------------


def _feed_all(chunks):
    parser = p.StreamParser()
    events = []
    for c in chunks:
        events += parser.feed(c)
    return events, parser


def test_stream_one_byte_chunks():
    frame = p.encode_instruction(p.ping(1))
    events, _ = _feed_all([frame[i : i + 1] for i in range(len(frame))])
    assert events == [p.PacketEvent(p.ping(1))]


def test_stream_crc_error():
    frame = bytearray(p.encode_instruction(p.ping(1)))
    frame[-1] ^= 0x01
    events, _ = _feed_all([bytes(frame)])
    assert events == [p.CrcError(bytes(frame))]


def test_stream_garbage_then_frame():
    frame = p.encode_instruction(p.ping(1))
    garbage = bytes([0x12, 0x34, 0xFF, 0xFF, 0x00, 0xAB, 0xFD])
    events, _ = _feed_all([garbage + frame])
    assert events == [p.Desync(7), p.PacketEvent(p.ping(1))]


def test_stream_resyncs_after_crc_error():
    bad = bytearray(p.encode_instruction(p.ping(2)))
    bad[8] ^= 0x40
    good = p.encode_instruction(p.ping(1))
    events, _ = _feed_all([bytes(bad) + good])
    assert [e.kind for e in events] == ["crc", "packet"]


def test_stream_oversized_length_is_desync():
    junk = p.HEADER + b"\x01" + struct.pack("<H", 5000)
    good = p.encode_instruction(p.ping(1))
    events, _ = _feed_all([junk + good])
    assert events == [p.Desync(len(junk)), p.PacketEvent(p.ping(1))]


def test_stream_finish_reports_trailing_garbage():
    events, parser = _feed_all([b"\x00\x01\x02"])
    assert events == []
    assert parser.finish() == [p.Desync(3)]


def test_stream_undecodable_frame_is_desync():
    # CRC-valid frame carrying an unknown instruction byte.
    body = p.HEADER + struct.pack("<BH", 1, 3) + b"\x07"
    frame = body + struct.pack("<H", p.crc16(body))
    events, _ = _feed_all([frame])
    assert events == [p.Desync(len(frame))]


def test_decode_stream_functional_wrapper():
    frame = p.encode_instruction(p.ping(4))
    state, ev1 = p.decode_stream(None, frame[:5])
    state, ev2 = p.decode_stream(state, frame[5:])
    assert ev1 == [] and ev2 == [p.PacketEvent(p.ping(4))]


def test_desync_count_positive():
    with pytest.raises(ValueError):
        p.Desync(0)


@given(st.lists(st.one_of(instruction_packets, status_packets), min_size=1, max_size=6), st.data())
def test_chunking_invariance_property(pkts, data):
    stream = b"".join(p.encode(x) for x in pkts)
    cuts = sorted(data.draw(st.lists(st.integers(0, len(stream)), max_size=8)))
    bounds = [0, *cuts, len(stream)]
    chunks = [stream[a:b] for a, b in zip(bounds, bounds[1:])]
    events, _ = _feed_all(chunks)
    assert events == [p.PacketEvent(x) for x in pkts]
