# %% [markdown]
# # Metric scenarios
#
# Each scenario drives robots through the full loop: vision frames out,
# behavior commands in over the wire codec, bridge filtering, SYNC_WRITE to
# the servo bank and fixed-step physics.

# %%
from dynapitch.harness import SCENARIOS, ScenarioConfig, metrics_csv, run_scenario, sprint_lower_bound, with_overrides

reports = [run_scenario(name, seed=7) for name in SCENARIOS]
print(metrics_csv(reports))

# %% [markdown]
# ### Sprint against the bang-bang bound

cfg = ScenarioConfig()
print(f"bound {sprint_lower_bound(cfg.bridge.v_max, cfg.bridge.accel_max):.3f} s, got {reports[0].sprint_time_4m} s")

# %% [markdown]
# ### Gains
# Doubling Kp shortens the approach in the time-to-ball test.

for kp in (1.0, 2.0, 4.0):
    r = run_scenario("time_to_ball", 0, with_overrides(cfg, gains={"kp": kp}))
    print(f"kp = {kp}: {r.time_to_ball} s")

# %% [markdown]
# ### Traces are reproducible

trace = []
r = run_scenario("one_v_zero_goal", 7, trace=trace)
print(len(trace), "records, hash", f"{r.trace_hash:016x}")
print(trace[-1][:120], "...")
