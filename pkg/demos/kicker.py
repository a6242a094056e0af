# %% [markdown]
# # Capacitor kicker
#
# A boost stage charges the capacitor at constant current; a kick dumps
# a fraction of the stored energy into the ball.

# %%
from dynapitch.kicker import KickerParams, KickerState, charge_step, launch_speed, time_to_full, trigger

params = KickerParams()
print(f"full charge in {time_to_full(params):.3f} s")

# %%
state, t, dt = KickerState(), 0.0, 0.001
while state.v_cap < params.v_max:
    state = charge_step(state, params, t, dt)
    t += dt
print(f"simulated: {t:.3f} s to {state.v_cap:.1f} V")

# %%
speed, state = trigger(state, params, now=t)
print(f"ball leaves at {speed:.3f} m/s, capacitor now {state.v_cap} V")
speed, _ = trigger(state, params, now=t + 0.01)
print("inside the lockout:", speed)

# %% [markdown]
# ### Speed against voltage

for v in range(0, 200, 20):
    print(f"{v:>4} V  {launch_speed(v, params):6.3f} m/s")
