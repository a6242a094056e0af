"""Capacitor-discharge kicker: constant-current step-up charger, relay dump
through the electromagnet, ball launch speed from the energy balance

    E = 1/2 C V^2,   1/2 m v^2 = eta E.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class KickerParams:
    v_max: float = 190.0
    supply: float = 12.0
    capacitance: float = 2200e-6
    charge_current: float = 0.5
    efficiency: float = 0.02
    ball_mass: float = 0.046
    lockout: float = 0.05

    def __post_init__(self) -> None:
        if self.capacitance <= 0 or self.charge_current <= 0:
            raise ValueError("capacitance and charge current must be positive")
        if not 0 < self.efficiency <= 1:
            raise ValueError("efficiency must lie in (0, 1]")
        if self.ball_mass <= 0 or self.v_max <= 0:
            raise ValueError("ball mass and v_max must be positive")
        if self.lockout < 0:
            raise ValueError("lockout must be nonnegative")


@dataclass(frozen=True)
class KickerState:
    v_cap: float = 0.0
    charging: bool = True
    lockout_until: float = 0.0


def charge_step(state: KickerState, params: KickerParams, now: float, dt: float) -> KickerState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not state.charging or now < state.lockout_until or state.v_cap >= params.v_max:
        return state
    v = state.v_cap + params.charge_current * dt / params.capacitance
    # absorb float drift so a ramp of whole steps lands exactly on v_max
    if v >= params.v_max * (1.0 - 1e-12):
        v = params.v_max
    return replace(state, v_cap=v)


def stored_energy(v_cap: float, params: KickerParams) -> float:
    return 0.5 * params.capacitance * v_cap * v_cap


def launch_speed(v_cap: float, params: KickerParams) -> float:
    return math.sqrt(2.0 * params.efficiency * stored_energy(v_cap, params) / params.ball_mass)


def trigger(state: KickerState, params: KickerParams, now: float) -> tuple[float, KickerState]:
    """Fire the relay. Returns (ball speed m/s, new state).

    Inside the lockout window nothing happens and the speed is 0.
    """
    if now < state.lockout_until:
        return 0.0, state
    speed = launch_speed(state.v_cap, params)
    return speed, replace(state, v_cap=0.0, lockout_until=now + params.lockout)


def time_to_full(params: KickerParams) -> float:
    return params.capacitance * params.v_max / params.charge_current
