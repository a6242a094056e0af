# %% [markdown]
# # Talking to a virtual servo bus
#
# Four XL430-style servos share one half-duplex bus. Frames go in as bytes
# and status replies come back as bytes, just like on a real RS-485 line.

# %%
import struct

from dynapitch import protocol as p
from dynapitch.servo import MODE_VELOCITY, VirtualBus

bus = VirtualBus.with_servos([1, 2, 3, 4], operating_mode=MODE_VELOCITY, torque=True)

# %% [markdown]
# ### Broadcast PING
# Every servo answers, in id order.

for reply in bus.transact(p.encode(p.ping(p.BROADCAST_ID))):
    status = p.decode_packet(reply)
    model, firmware = struct.unpack("<HB", status.params)
    print(f"id {status.source_id}: model {model}, firmware {firmware}")

# %% [markdown]
# ### One SYNC_WRITE, four goals
# GoalVelocity lives at address 104 and is 4 bytes wide. No replies come back.

goals = {1: 100, 2: -100, 3: 200, 4: 0}
frame = p.encode(p.sync_write(104, 4, {i: struct.pack("<i", v) for i, v in goals.items()}))
print(frame.hex(" ").upper())
assert bus.transact(frame) == []

# %% [markdown]
# ### Let the motors spin up
# Acceleration is limited to 2000 units/s, so 200 units takes 0.1 s.

for _ in range(150):
    bus.step(0.001)
for sid in goals:
    (reply,) = bus.transact(p.encode(p.read(sid, 128, 4)))
    print(sid, struct.unpack("<i", p.decode_packet(reply).params)[0])

# %% [markdown]
# ### Noise on the line
# The stream parser resynchronizes after garbage and flags bad checksums.

noisy = b"\x13\x37" + p.encode(p.ping(2))
broken = bytearray(p.encode(p.ping(3)))
broken[-1] ^= 1
parser = p.StreamParser()
for ev in parser.feed(noisy + bytes(broken)) + parser.finish():
    print(ev.kind, getattr(ev, "packet", ""))
