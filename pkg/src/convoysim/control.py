"""Lateral (Stanley), longitudinal (speed PID) and convoy time-gap controllers."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import ContractError, NumericDomainError
from .params import SimConfig
from .track import Path, nearest


def _clamp(value, low, high):
    return low if value < low else high if value > high else value


def stanley_steer(cross_track: float, heading_error: float, speed: float,
                  k: float = 2.5, eps: float = 0.1, max_steer: float = 0.44) -> float:
    """Stanley steering angle.

    ``cross_track`` is the signed offset of the path from the steering axle,
    positive when the path lies to the vehicle's left, so a positive value
    steers left. ``heading_error`` is path heading minus vehicle heading.
    """
    for name, value in (("cross_track", cross_track), ("heading_error", heading_error), ("speed", speed)):
        if not math.isfinite(value):
            raise NumericDomainError(f"{name} is not finite ({value})")
    if speed < 0 or k <= 0 or eps <= 0:
        raise ContractError("stanley_steer needs speed >= 0, k > 0, eps > 0")
    delta = heading_error + math.atan2(k * cross_track, speed + eps)
    return _clamp(delta, -max_steer, max_steer)


@dataclass(frozen=True)
class SpeedLoopState:
    integrator: float = 0.0
    last_error: float = 0.0


def speed_pid_step(st: SpeedLoopState, v_target: float, v_meas: float, cfg: SimConfig,
                   dt: float) -> tuple[float, SpeedLoopState]:
    """One speed-loop update; returns (throttle percent, new state).

    The integrator is clamped to +/- speed_imax before the throttle scaler.
    """
    if not dt > 0:
        raise ContractError("dt must be > 0")
    error = v_target - v_meas
    integ = _clamp(st.integrator + cfg.speed_i * error * dt, -cfg.speed_imax, cfg.speed_imax)
    raw = cfg.speed_p * error + integ
    throttle = cfg.thr_cruise + cfg.thr_scaler * cfg.throttle_gain_scale * raw
    return _clamp(throttle, cfg.thr_min, cfg.thr_max), SpeedLoopState(integ, error)


@dataclass(frozen=True)
class GapPolicy:
    standstill_gap: float = 1.0     # m
    headway: float = 1.0            # s
    loss_gain: float = 1.0          # alpha
    gap_gain: float = 0.8           # 1/s
    speed_match: float = 0.3
    stale_after: float = 0.5        # s
    stale_decel: float = 1.0        # m/s^2

    def __post_init__(self):
        if not self.standstill_gap > 0:
            raise ContractError("standstill gap must be > 0")
        if self.headway < 0 or self.loss_gain < 0:
            raise ContractError("headway and loss gain must be >= 0")

    def effective_headway(self, loss: float) -> float:
        return self.headway * (1.0 + self.loss_gain * loss)


@dataclass
class UpstreamEntry:
    bsm: object                      # latest Bsm from this sender
    receipt_time: float
    loss: float = 0.0
    receipts: list = field(default_factory=list)


@dataclass
class UpstreamView:
    """What one follower knows about the vehicles ahead of it."""

    predecessor: int
    leader: Optional[int] = None
    entries: dict = field(default_factory=dict)

    def update(self, msg, now: float):
        entry = self.entries.get(msg.sender)
        if entry is None:
            entry = self.entries[msg.sender] = UpstreamEntry(msg, now)
        elif msg.seq > entry.bsm.seq:
            entry.bsm = msg
            entry.receipt_time = now
        entry.receipts.append(now)

    def refresh_loss(self, cadence: float, window: float, now: float):
        for entry in self.entries.values():
            # drop receipts that can no longer fall inside the window
            cut = bisect.bisect_right(entry.receipts, now - window)
            if cut:
                del entry.receipts[:cut]
            entry.loss = estimate_loss(entry.receipts, cadence, window, now)


@dataclass(frozen=True)
class GapCommand:
    target_speed: float
    desired_gap: float
    measured_gap: float
    effective_headway: float
    stale: bool


def timegap_command(self_state, self_s: float, view: UpstreamView, policy: GapPolicy, now: float,
                    path: Path, vehicle_length: float, max_speed: float) -> GapCommand:
    """Adaptive time-gap law with its intermediate quantities.

    ``self_s`` is the follower's own arc-length position on ``path``.
    """
    entry = view.entries.get(view.predecessor)
    if entry is None:
        raise ContractError(f"no BSM from predecessor {view.predecessor} yet")
    pred = entry.bsm
    v_self = self_state.speed
    h_eff = policy.effective_headway(entry.loss)
    g_des = policy.standstill_gap + h_eff * v_self

    age = max(0.0, now - pred.timestamp)
    pred_s = nearest(path, pred.x, pred.y).s + pred.speed * age
    gap = path.along_distance(self_s, pred_s) - vehicle_length

    if age > policy.stale_after:
        target = min(v_self, pred.speed) - policy.stale_decel * (age - policy.stale_after)
        return GapCommand(_clamp(target, 0.0, max_speed), g_des, gap, h_eff, True)

    target = pred.speed + policy.gap_gain * (gap - g_des)
    if view.leader is not None and view.leader != view.predecessor:
        lead = view.entries.get(view.leader)
        if lead is not None and now - lead.bsm.timestamp <= policy.stale_after:
            target += policy.speed_match * (lead.bsm.speed - pred.speed)
    return GapCommand(_clamp(target, 0.0, max_speed), g_des, gap, h_eff, False)


def timegap_target_speed(self_state, self_s: float, view: UpstreamView, policy: GapPolicy, now: float,
                         path: Path, vehicle_length: float, max_speed: float) -> float:
    return timegap_command(self_state, self_s, view, policy, now, path, vehicle_length, max_speed).target_speed


def estimate_loss(receipt_times: Sequence[float], cadence: float, window: float, now: float) -> float:
    """Fraction of expected messages missing from the window (now - window, now]."""
    if not (cadence > 0 and window > 0):
        raise ContractError("cadence and window must be > 0")
    expected = math.floor(window * cadence + 1e-9)
    if expected == 0:
        return 0.0
    lo = now - window
    received = sum(1 for t in receipt_times if lo < t <= now)
    return _clamp(1.0 - received / expected, 0.0, 1.0)
