"""Single-vehicle plant: kinematic bicycle, first-order motor, PWM outputs, RTK GPS."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericDomainError
from .params import SimConfig

# Disarmed outputs are pinned to these regardless of configured trims.
DISARMED_PWM = (1500.0, 1500.0)


def normalize_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float = 0.0

    def __post_init__(self):
        _require_finite(x=self.x, y=self.y, heading=self.heading, speed=self.speed)
        if self.speed < 0:
            raise NumericDomainError(f"speed must be >= 0, got {self.speed}")


@dataclass(frozen=True)
class ActuatorCommand:
    steer: float      # rad, already clamped to the steering limit
    throttle: float   # percent, already clamped to [THR_MIN, THR_MAX]
    armed: bool = True


@dataclass(frozen=True)
class GpsFix:
    x: float
    y: float
    timestamp: float
    valid: bool = True


def _require_finite(**values):
    for name, value in values.items():
        if not math.isfinite(value):
            raise NumericDomainError(f"{name} is not finite ({value})")


def step_bicycle(state: VehicleState, steer: float, dt: float, wheelbase: float) -> VehicleState:
    """Forward-Euler step of the rear-axle kinematic bicycle. Speed is left as is."""
    _require_finite(steer=steer, dt=dt, wheelbase=wheelbase)
    if dt <= 0 or wheelbase <= 0:
        raise NumericDomainError("dt and wheelbase must be > 0")
    v, th = state.speed, state.heading
    return VehicleState(
        x=state.x + v * math.cos(th) * dt,
        y=state.y + v * math.sin(th) * dt,
        heading=normalize_angle(th + (v / wheelbase) * math.tan(steer) * dt),
        speed=v,
    )


def step_speed(v: float, throttle: float, dt: float, max_speed: float, tau: float) -> float:
    """First-order lag toward ``throttle/100 * max_speed``; never negative."""
    _require_finite(v=v, throttle=throttle, dt=dt, max_speed=max_speed, tau=tau)
    if tau <= 0:
        raise NumericDomainError("tau must be > 0")
    commanded = throttle / 100.0 * max_speed
    return max(0.0, v + dt * (commanded - v) / tau)


def command_to_pwm(cmd: ActuatorCommand, cfg: SimConfig) -> tuple[float, float]:
    """Project a command onto (steering, throttle) pulse widths in microseconds."""
    if not cmd.armed:
        return DISARMED_PWM
    ratio = cmd.steer / cfg.max_steer
    if ratio >= 0:
        steer_us = cfg.steer_trim + ratio * (cfg.pwm_max - cfg.steer_trim)
    else:
        steer_us = cfg.steer_trim + ratio * (cfg.steer_trim - cfg.pwm_min)
    throttle_us = cfg.throttle_trim + cmd.throttle / 100.0 * (cfg.pwm_max - cfg.throttle_trim)
    if cfg.pwm_quantize:
        return float(round(steer_us)), float(round(throttle_us))
    return steer_us, throttle_us


def pwm_to_command(steer_us: float, throttle_us: float, cfg: SimConfig) -> ActuatorCommand:
    """Inverse of `command_to_pwm` for armed outputs."""
    if steer_us >= cfg.steer_trim:
        steer = (steer_us - cfg.steer_trim) / (cfg.pwm_max - cfg.steer_trim) * cfg.max_steer
    else:
        steer = (steer_us - cfg.steer_trim) / (cfg.steer_trim - cfg.pwm_min) * cfg.max_steer
    throttle = (throttle_us - cfg.throttle_trim) / (cfg.pwm_max - cfg.throttle_trim) * 100.0
    return ActuatorCommand(steer, throttle, True)


def on_rate_grid(t: float, rate: float, tol: float = 1e-9) -> bool:
    k = t * rate
    return abs(k - round(k)) <= tol * max(1.0, abs(k))


def gps_measure(state: VehicleState, t: float, sigma: float, rng: np.random.Generator,
                rate: float = 10.0) -> Optional[GpsFix]:
    """RTK fix with independent Gaussian noise per axis, or None off the rate grid."""
    if not on_rate_grid(t, rate):
        return None
    noise = rng.standard_normal(2) * sigma
    return GpsFix(state.x + float(noise[0]), state.y + float(noise[1]), t, True)
