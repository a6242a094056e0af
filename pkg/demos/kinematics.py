# %% [markdown]
# # Four omni wheels
#
# Map a body twist to wheel rates and back, then see where the servo
# velocity limit bites.

# %%
import numpy as np

from dynapitch.kinematics import RAD_S_PER_UNIT, BodyTwist, WheelConfig, forward, inverse, to_dxl_units

cfg = WheelConfig()
print(cfg)

# %% [markdown]
# ### Inverse then forward

twist = BodyTwist(1.5, -0.5, 2.0)
rates = inverse(twist, cfg)
print("motor rad/s:", np.round(rates, 3))
print("recovered:", forward(rates, cfg))

# %% [markdown]
# ### Servo units
# 1 unit = 0.229 rpm, saturating at 265.

for speed in (0.5, 1.0, 2.0, 3.0, 4.0):
    units = [to_dxl_units(float(r)) for r in inverse(BodyTwist(speed, 0, 0), cfg)]
    print(f"{speed:.1f} m/s ->", units)

# %% [markdown]
# ### Why the gear ratio matters
# With a low ratio the wheels saturate far below a useful sprint speed.

for g in (1.5, 5.0, 20.0):
    c = WheelConfig(gear_ratio=g)
    per_mps = abs(inverse(BodyTwist(1.0, 0, 0), c)).max() / RAD_S_PER_UNIT
    print(f"G = {g:>4}: {per_mps:6.1f} units per m/s, top forward speed {265 / per_mps:.2f} m/s")
