"""Four-wheel omnidirectional drive kinematics with a gear speed multiplier.

Wheel ``i`` sits at angle ``theta_i`` on a circle of radius R around the
chassis center; its rim moves tangentially, so

    rim_i   = -sin(theta_i) * vx + cos(theta_i) * vy + R * omega
    motor_i = rim_i / (r * G)

where the wheel turns G times faster than the motor shaft.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .servo import VELOCITY_LIMIT, VELOCITY_UNIT_RPM

RAD_S_PER_UNIT = VELOCITY_UNIT_RPM * 2.0 * math.pi / 60.0


class KinematicsConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BodyTwist:
    """Robot-frame chassis velocity: vx forward, vy left (m/s), omega CCW (rad/s)."""

    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(c) for c in (self.vx, self.vy, self.omega)):
            raise ValueError("twist components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.omega])

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass(frozen=True)
class WheelConfig:
    wheel_angles: tuple[float, float, float, float] = tuple(math.radians(a) for a in (45.0, 135.0, 225.0, 315.0))
    chassis_radius: float = 0.08
    wheel_radius: float = 0.027
    gear_ratio: float = 20.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "wheel_angles", tuple(float(a) for a in self.wheel_angles))
        if len(self.wheel_angles) != 4:
            raise KinematicsConfigError("exactly four wheel angles are required")
        if min(self.chassis_radius, self.wheel_radius, self.gear_ratio) <= 0:
            raise KinematicsConfigError("radii and gear ratio must be positive")

    @classmethod
    def from_degrees(cls, angles_deg, **kwargs) -> "WheelConfig":
        return cls(tuple(math.radians(a) for a in angles_deg), **kwargs)

    def projection(self) -> np.ndarray:
        """4x3 matrix mapping (vx, vy, omega) to rim speeds."""
        return _projection(self.wheel_angles, self.chassis_radius)


@lru_cache(maxsize=64)
def _projection(angles: tuple[float, ...], chassis_radius: float) -> np.ndarray:
    m = np.array([[-math.sin(a), math.cos(a), chassis_radius] for a in angles])
    m.setflags(write=False)
    return m


@lru_cache(maxsize=64)
def _normal_solver(cfg: WheelConfig) -> np.ndarray:
    m = cfg.projection()
    if np.linalg.matrix_rank(m) < 3:
        raise KinematicsConfigError("wheel geometry cannot resolve a planar twist (rank < 3)")
    gram = m.T @ m
    solver = np.linalg.solve(gram, m.T)
    solver.setflags(write=False)
    return solver


def inverse(twist: BodyTwist, cfg: WheelConfig) -> np.ndarray:
    """Motor-shaft rates (rad/s) for wheels 1..4."""
    rim = cfg.projection() @ twist.as_array()
    return rim / (cfg.wheel_radius * cfg.gear_ratio)


def forward_lsq(rates, cfg: WheelConfig) -> tuple[BodyTwist, float]:
    """Least-squares twist for the given motor rates, plus the rim-speed residual norm."""
    rim = np.asarray(rates, dtype=float) * (cfg.wheel_radius * cfg.gear_ratio)
    x = _normal_solver(cfg) @ rim
    residual = float(np.linalg.norm(cfg.projection() @ x - rim))
    return BodyTwist(float(x[0]), float(x[1]), float(x[2])), residual


def forward(rates, cfg: WheelConfig) -> BodyTwist:
    return forward_lsq(rates, cfg)[0]


def to_dxl_units(rate: float) -> tuple[int, bool]:
    """Convert a motor rate in rad/s to signed velocity units.

    Rounds half away from zero, then saturates at the servo limit. The
    second element is True when saturation happened.
    """
    units = rate / RAD_S_PER_UNIT
    rounded = int(math.floor(abs(units) + 0.5))
    if rounded > VELOCITY_LIMIT:
        return int(math.copysign(VELOCITY_LIMIT, units)), True
    return (rounded if units >= 0 else -rounded), False


def from_dxl_units(units: float) -> float:
    return units * RAD_S_PER_UNIT
