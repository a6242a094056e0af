import random
import socket
import struct
import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dynapitch import field as fs
from dynapitch import net
from dynapitch.net import RobotCommand, RobotObservation, VisionFrame, WireError, WireErrorCode
from oracles import crc16_longdiv

u8 = st.integers(0, 255)
i16 = st.integers(-32768, 32767)
i32 = st.integers(-(2**31), 2**31 - 1)

commands = st.builds(RobotCommand, u8, i16, i16, i16, st.integers(0, 0xFFFF), u8)
observations = st.builds(RobotObservation, u8, i32, i32, i16)
frames = st.builds(
    VisionFrame,
    st.integers(0, 2**32 - 1),
    st.integers(0, 2**64 - 1),
    i32,
    i32,
    st.lists(observations, max_size=16).map(tuple),
)

SAMPLE_CMD = RobotCommand(3, 1000, -250, 1571, 6500, net.FLAG_CHARGE)
SAMPLE_FRAME = VisionFrame(42, 700_000, 12, -34, (RobotObservation(1, 1000, -500, 1571), RobotObservation(2, -7, 9, -3)))


def test_zero_command_is_17_bytes():
    buf = net.encode_command(RobotCommand(0))
    assert len(buf) == 17
    assert buf[:4] == b"CLSS" and buf[4] == 1
    assert net.decode_command(buf) == RobotCommand(0)


def test_vx_little_endian_at_offset_6():
    buf = net.encode_command(RobotCommand(1, vx_mm_s=1000))
    assert buf[6:8] == bytes([0xE8, 0x03])


def test_command_crc_matches_oracle():
    buf = net.encode_command(SAMPLE_CMD)
    assert struct.unpack("<H", buf[-2:])[0] == crc16_longdiv(buf[:-2])


def test_flipped_last_byte_is_crc_error():
    buf = bytearray(net.encode_command(SAMPLE_CMD))
    buf[-1] ^= 0xFF
    with pytest.raises(WireError) as e:
        net.decode_command(bytes(buf))
    assert e.value.code is WireErrorCode.CRC


@pytest.mark.parametrize(
    "mutate, code",
    [
        (lambda b: b[:-1], WireErrorCode.LENGTH),
        (lambda b: b + b"\x00", WireErrorCode.LENGTH),
        (lambda b: b"X" + b[1:], WireErrorCode.MAGIC),
        (lambda b: b[:4] + b"\x02" + b[5:], WireErrorCode.VERSION),
    ],
)
def test_command_error_codes(mutate, code):
    with pytest.raises(WireError) as e:
        net.decode_command(mutate(net.encode_command(SAMPLE_CMD)))
    assert e.value.code is code


def test_empty_vision_frame_is_28_bytes():
    v = VisionFrame(0, 0, 0, 0)
    buf = net.encode_vision(v)
    assert len(buf) == 28
    assert net.decode_vision(buf) == v


def test_one_robot_roundtrip():
    v = VisionFrame(1, 16_667, 0, 0, (RobotObservation(5, 1000, -500, 1571),))
    buf = net.encode_vision(v)
    assert len(buf) == 39
    assert buf[26:37] == bytes([5]) + struct.pack("<iih", 1000, -500, 1571)
    assert net.decode_vision(buf) == v


def test_count_mismatch_rejected():
    one = net.encode_vision(VisionFrame(1, 2, 3, 4, (RobotObservation(1, 1, 1, 1),)))
    body = bytearray(one[:-2])
    body[25] = 2
    body = bytes(body)
    forged = body + struct.pack("<H", crc16_longdiv(body))
    with pytest.raises(WireError) as e:
        net.decode_vision(forged)
    assert e.value.code is WireErrorCode.COUNT


def test_too_many_robots():
    with pytest.raises(ValueError):
        net.encode_vision(VisionFrame(0, 0, 0, 0, tuple(RobotObservation(i, 0, 0, 0) for i in range(17))))


def test_out_of_range_field_rejected_on_encode():
    with pytest.raises(ValueError):
        net.encode_command(RobotCommand(0, vx_mm_s=40000))


@given(commands)
def test_command_roundtrip(c):
    assert net.decode_command(net.encode_command(c)) == c


@given(frames)
def test_vision_roundtrip(v):
    assert net.decode_vision(net.encode_vision(v)) == v


def test_roundtrip_10k_random():
    rng = random.Random(1)
    for _ in range(10_000):
        c = RobotCommand(
            rng.randrange(256), rng.randrange(-32768, 32768), rng.randrange(-32768, 32768),
            rng.randrange(-32768, 32768), rng.randrange(65536), rng.randrange(256),
        )
        buf = net.encode_command(c)
        assert net.decode_command(buf) == c
        assert net.encode_command(net.decode_command(buf)) == buf


def _every_single_byte_corruption(buf):
    for pos in range(len(buf)):
        for val in range(256):
            if val != buf[pos]:
                yield buf[:pos] + bytes([val]) + buf[pos + 1 :]


@pytest.mark.parametrize("encode, decode, sample", [
    (net.encode_command, net.decode_command, SAMPLE_CMD),
    (net.encode_vision, net.decode_vision, SAMPLE_FRAME),
])
def test_every_single_byte_corruption_rejected(encode, decode, sample):
    buf = encode(sample)
    n = 0
    for bad in _every_single_byte_corruption(buf):
        with pytest.raises(WireError):
            decode(bad)
        n += 1
    assert n == len(buf) * 255


def test_truncated_and_overlong_fuzz():
    rng = random.Random(2)
    valid = [net.encode_command(SAMPLE_CMD), net.encode_vision(SAMPLE_FRAME)]
    for k in range(10_000):
        src = valid[k % 2]
        if rng.random() < 0.5:
            buf = src[: rng.randrange(len(src))]
        else:
            buf = src + bytes(rng.randrange(256) for _ in range(rng.randrange(1, 20)))
        for decode in (net.decode_command, net.decode_vision):
            with pytest.raises(WireError):
                decode(buf)


@given(st.binary(max_size=300))
def test_decoders_only_raise_wire_errors(buf):
    for decode in (net.decode_command, net.decode_vision):
        try:
            decode(buf)
        except WireError:
            pass


def test_command_from_si_rounds_to_mm():
    c = net.command_from_si(2, 1.2344, -0.0006, 3.14159, kick=6.5, flags=1)
    assert (c.vx_mm_s, c.vy_mm_s, c.omega_mrad_s, c.kick_mm_s) == (1234, -1, 3142, 6500)
    assert c.dribble and not c.charge
    assert net.command_from_si(0, 99.0, -99.0, 0.0).vx_mm_s == 32767


# --- publisher -------------------------------------------------------------------


def _world():
    return fs.WorldState(fs.Ball(1.23456, -0.0004), [fs.Robot(4, -2.0, 0.5, 1.5708)])


@pytest.mark.parametrize("control_dt", [0.01, 0.001, 0.005])
def test_publisher_60_frames_per_second(control_dt):
    pub = net.VisionPublisher(60, control_dt)
    w = _world()
    ticks = round(1.0 / control_dt)
    out = [f for k in range(ticks) if (f := pub.poll(w, k)) is not None]
    assert len(out) == 60
    assert [f.frame_no for f in out] == list(range(60))
    assert all(b.t_us > a.t_us for a, b in zip(out, out[1:]))


def test_publisher_samples_world_in_mm():
    f = net.VisionPublisher().poll(_world(), 0)
    assert (f.ball_x_mm, f.ball_y_mm) == (1235, 0)
    assert f.robot(4) == RobotObservation(4, -2000, 500, 1571)
    assert f.robot(9) is None


def test_publisher_rejects_bad_rate():
    with pytest.raises(ValueError):
        net.VisionPublisher(0)


# --- transports ------------------------------------------------------------------


def test_loopback_keeps_order_and_counts_rejects():
    t = net.LoopbackTransport()
    for i in range(5):
        t.send_command(RobotCommand(i))
    t.deliver(b"garbage")
    assert [c.robot_id for c in t.commands.drain()] == [0, 1, 2, 3, 4]
    assert t.commands.drain() == []
    assert t.rejected == 1
    t.publish(SAMPLE_FRAME)
    assert net.decode_vision(t.vision.popleft()) == SAMPLE_FRAME


def test_udp_command_receiver():
    q = net.CommandQueue()
    rx = net.UdpCommandReceiver(q, port=0).start()
    try:
        tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        tx.sendto(net.encode_command(SAMPLE_CMD), rx.address)
        tx.sendto(b"\x00" * 17, rx.address)
        tx.close()
        got = []
        deadline = time.monotonic() + 2.0
        while time.monotonic() < deadline and (not got or rx.rejected == 0):
            got += q.drain()
            time.sleep(0.01)
    finally:
        rx.close()
    assert got == [SAMPLE_CMD]
    assert rx.rejected == 1


def test_udp_vision_sender():
    sink = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sink.bind(("127.0.0.1", 0))
    sink.settimeout(2.0)
    tx = net.UdpVisionSender(port=sink.getsockname()[1])
    try:
        tx.publish(SAMPLE_FRAME)
        data, _ = sink.recvfrom(2048)
    finally:
        tx.close()
        sink.close()
    assert net.decode_vision(data) == SAMPLE_FRAME
