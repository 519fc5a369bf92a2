"""Deterministic fixed-step scenario runner.

Each tick runs in fixed phases across all vehicles, in vehicle-id order:

1. GPS fix if due (the estimate is held between fixes)
2. BSM broadcast if due
3. channel poll
4. target speed: lap profile for the leader, time-gap law for followers
5. Stanley steering from the estimated pose
6. speed PID -> throttle
7. plant step

Reordering the phases changes results, so the order is part of the
determinism contract. Vehicle 0 leads; vehicle i follows vehicle i-1.
"""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .control import GapPolicy, SpeedLoopState, UpstreamView, speed_pid_step, stanley_steer, timegap_command
from .dynamics import VehicleState, gps_measure, normalize_angle, step_bicycle, step_speed
from .errors import ConfigError, NumericDomainError
from .params import SimConfig
from .track import Path, nearest, oval_path, rmse, speed_profile
from .v2v import Bsm, Channel, ChannelConfig

BASELINE = "baseline_oval"
CONVOY = "convoy"

GPS_STREAM = 0
CHANNEL_SEED_STREAM = 2

TRACE_HEADER = "t,vehicle,x,y,heading,speed,gps_x,gps_y,steer_cmd,throttle_pct,cross_track,gap"

# Heading is re-estimated only when consecutive fixes are at least this far apart.
HEADING_MIN_BASELINE = 0.05  # m

SETTLING_TIME = 10.0  # s after the leader's last speed change


@dataclass(frozen=True)
class Scenario:
    kind: str = BASELINE
    vehicles: int = 1
    path: Path = field(default_factory=oval_path)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    gap_policy: GapPolicy = field(default_factory=GapPolicy)
    laps: Optional[float] = 2.0         # baseline stop condition
    duration: Optional[float] = None    # seconds; takes precedence over laps
    seed: int = 0
    initial_states: Optional[tuple[VehicleState, ...]] = None
    first_speed: float = 1.0
    cruise_speed: float = 2.0

    def __post_init__(self):
        if self.kind not in (BASELINE, CONVOY):
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.kind == BASELINE and self.vehicles != 1:
            raise ConfigError("baseline_oval runs exactly one vehicle")
        if self.kind == CONVOY and self.vehicles < 2:
            raise ConfigError("convoy needs at least two vehicles")
        if self.duration is None and self.laps is None:
            raise ConfigError("scenario needs a duration or a lap count")
        if self.initial_states is not None and len(self.initial_states) != self.vehicles:
            raise ConfigError("one initial state per vehicle required")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


def baseline_scenario(seed: int = 0, laps: float = 2.0, **kw) -> Scenario:
    return Scenario(kind=BASELINE, vehicles=1, laps=laps, seed=seed, **kw)


def convoy_scenario(seed: int = 0, vehicles: int = 3, duration: float = 60.0, drop_prob: float = 0.0,
                    **kw) -> Scenario:
    channel = kw.pop("channel", ChannelConfig())
    return Scenario(kind=CONVOY, vehicles=vehicles, duration=duration, laps=None, seed=seed,
                    channel=replace(channel, drop_prob=drop_prob), **kw)


def queued_states(scenario: Scenario, cfg: SimConfig) -> tuple[VehicleState, ...]:
    """Vehicles at rest along the path, bumpers one standstill gap apart."""
    if scenario.initial_states is not None:
        return scenario.initial_states
    spacing = scenario.gap_policy.standstill_gap + cfg.vehicle_length
    out = []
    for i in range(scenario.vehicles):
        # the path point is the steering (front) axle; place the rear axle behind it
        x, y, h = scenario.path.point_at(-i * spacing)
        out.append(VehicleState(x - cfg.wheelbase * math.cos(h), y - cfg.wheelbase * math.sin(h), h, 0.0))
    return tuple(out)


class TraceRow(NamedTuple):
    t: float
    vehicle: int
    x: float
    y: float
    heading: float
    speed: float
    gps_x: float
    gps_y: float
    steer_cmd: float
    throttle_pct: float
    cross_track: float
    gap: float            # bumper gap to the predecessor, NaN for the leader
    target_speed: float
    desired_gap: float    # NaN until the follower has heard its predecessor
    effective_headway: float


@dataclass
class RunResult:
    scenario: Scenario
    config: SimConfig
    rows: list[TraceRow]
    ticks: int
    metrics: dict
    sent_log: list = field(default_factory=list)
    delivery_log: list = field(default_factory=list)

    @property
    def collision(self) -> bool:
        return self.metrics["collision"]

    def vehicle_rows(self, vid: int) -> list[TraceRow]:
        return [r for r in self.rows if r.vehicle == vid]

    def trace_csv(self) -> str:
        return export_trace(self.rows)

    def metrics_json(self) -> str:
        return json.dumps(self.metrics, indent=2, sort_keys=True) + "\n"


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else f"{v:.6f}"


def export_trace(rows: Sequence[TraceRow]) -> str:
    buf = io.StringIO()
    buf.write(TRACE_HEADER + "\n")
    for r in rows:
        buf.write(f"{r.t:.6f},{r.vehicle:d},{r.x:.6f},{r.y:.6f},{r.heading:.6f},{r.speed:.6f},"
                  f"{r.gps_x:.6f},{r.gps_y:.6f},{r.steer_cmd:.6f},{r.throttle_pct:.6f},"
                  f"{r.cross_track:.6f},{_fmt(r.gap)}\n")
    return buf.getvalue()


def channel_seed(seed: int, drop_prob: float) -> int:
    """Channel seed derived from the run seed and the drop rate."""
    rate_key = int(round(drop_prob * 1_000_000))
    seq = np.random.SeedSequence(seed, spawn_key=(CHANNEL_SEED_STREAM, rate_key))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


class PoseEstimator:
    """Dead reckoning between GPS fixes, corrected at each fix.

    Between fixes the pose is propagated with the kinematic bicycle from
    odometry speed and the applied steering angle. At a fix, position and
    heading are pulled toward the measurement by complementary gains; the
    heading measurement is the direction between the last two fixes, shifted
    by the yaw accumulated over half the fix interval (a chord is parallel to
    the tangent at its midpoint).
    """

    def __init__(self, state: VehicleState, pos_gain: float, heading_gain: float):
        self.x, self.y, self.heading = state.x, state.y, state.heading
        self.pos_gain = pos_gain
        self.heading_gain = heading_gain
        self._anchor: Optional[tuple[float, float, float]] = None   # x, y, heading at anchor fix

    def predict(self, speed: float, steer: float, dt: float, wheelbase: float):
        self.x += speed * math.cos(self.heading) * dt
        self.y += speed * math.sin(self.heading) * dt
        self.heading = normalize_angle(self.heading + speed / wheelbase * math.tan(steer) * dt)

    def correct(self, fx: float, fy: float):
        self.x += self.pos_gain * (fx - self.x)
        self.y += self.pos_gain * (fy - self.y)
        if self._anchor is None:
            self._anchor = (fx, fy, self.heading)
            return
        ax, ay, a_heading = self._anchor
        dx, dy = fx - ax, fy - ay
        if math.hypot(dx, dy) < HEADING_MIN_BASELINE:
            return
        chord = math.atan2(dy, dx)
        measured = chord + 0.5 * normalize_angle(self.heading - a_heading)
        self.heading = normalize_angle(self.heading + self.heading_gain * normalize_angle(measured - self.heading))
        self._anchor = (fx, fy, self.heading)


class _Vehicle:
    def __init__(self, vid: int, state: VehicleState, seed: int, cfg: SimConfig):
        self.vid = vid
        self.state = state
        self.rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(GPS_STREAM, vid)))
        self.est = PoseEstimator(state, cfg.est_pos_gain, cfg.est_heading_gain)
        self.loop = SpeedLoopState()
        self.distance = 0.0
        self.seq = 0
        self.view: Optional[UpstreamView] = None


def run(scenario: Scenario, config: SimConfig) -> RunResult:
    cfg = config
    path = scenario.path
    dt = cfg.physics_dt
    policy = scenario.gap_policy
    n = scenario.vehicles

    channel = Channel(replace(scenario.channel, cadence=cfg.bsm_rate, latency=cfg.latency,
                              seed=channel_seed(scenario.seed, scenario.channel.drop_prob)),
                      record=True)
    fleet = [_Vehicle(i, st, scenario.seed, cfg) for i, st in enumerate(queued_states(scenario, cfg))]
    for v in fleet:
        channel.register(v.vid)
        if v.vid > 0:
            v.view = UpstreamView(predecessor=v.vid - 1, leader=0)

    if scenario.duration is not None:
        max_ticks = int(round(scenario.duration / dt))
        lap_goal = None
    else:
        lap_goal = scenario.laps * path.total_length
        # generous guard so a stalled vehicle cannot spin forever
        max_ticks = int(math.ceil(lap_goal / (0.25 * scenario.first_speed) / dt))

    rows: list[TraceRow] = []
    last_profile_change = 0.0
    prev_leader_target = None
    tick = 0
    while tick < max_ticks:
        if lap_goal is not None and fleet[0].distance >= lap_goal:
            break
        t = tick * dt
        try:
            tick_rows, leader_target = _tick(tick, t, fleet, channel, scenario, cfg, policy, path)
        except NumericDomainError as exc:
            raise NumericDomainError(str(exc), tick=tick) from exc
        if prev_leader_target is not None and leader_target != prev_leader_target:
            last_profile_change = t
        prev_leader_target = leader_target
        rows.extend(tick_rows)
        tick += 1

    metrics = _metrics(rows, tick, n, channel, cfg, last_profile_change, scenario)
    return RunResult(scenario, cfg, rows, tick, metrics, channel.sent_log, channel.delivery_log)


def _tick(tick, t, fleet, channel, scenario, cfg, policy, path):
    dt = cfg.physics_dt
    # 1. GPS
    if tick % cfg.gps_divisor == 0:
        for v in fleet:
            fix = gps_measure(v.state, t, cfg.gps_sigma, v.rng, rate=cfg.gps_rate)
            if fix is not None:
                v.est.correct(fix.x, fix.y)
    # 2. BSM
    if tick % cfg.bsm_divisor == 0:
        for v in fleet:
            channel.broadcast(Bsm(v.vid, v.seq, t, v.est.x, v.est.y, v.state.speed, v.est.heading), t)
            v.seq += 1
    # 3. poll
    for v in fleet:
        for msg in channel.poll(v.vid, t):
            if v.view is not None and msg.sender < v.vid:
                v.view.update(msg, t)
        if v.view is not None:
            v.view.refresh_loss(cfg.bsm_rate, min(cfg.loss_window, t) if t > 0 else cfg.loss_window, t)

    # true along-path positions for gap bookkeeping
    true_s = [nearest(path, v.state.x, v.state.y).s for v in fleet]

    rows = []
    leader_target = None
    updates = []
    for v in fleet:
        st = v.state
        # 4. target speed
        desired_gap = h_eff = math.nan
        if v.vid == 0:
            target = speed_profile(v.distance, path, scenario.first_speed, scenario.cruise_speed)
            leader_target = target
        elif v.view.predecessor in v.view.entries:
            self_s = nearest(path, v.est.x, v.est.y).s
            cmd = timegap_command(st, self_s, v.view, policy, t, path, cfg.vehicle_length, cfg.max_speed)
            target, desired_gap, h_eff = cmd.target_speed, cmd.desired_gap, cmd.effective_headway
        else:
            target = 0.0
        # 5. Stanley on the estimated front axle
        fx = v.est.x + cfg.wheelbase * math.cos(v.est.heading)
        fy = v.est.y + cfg.wheelbase * math.sin(v.est.heading)
        q = nearest(path, fx, fy)
        steer = stanley_steer(-q.cross_track, normalize_angle(q.heading - v.est.heading), st.speed,
                              cfg.stanley_k, cfg.stanley_eps, cfg.max_steer)
        # 6. speed loop
        throttle, v.loop = speed_pid_step(v.loop, target, st.speed, cfg, dt)

        true_front = nearest(path, st.x + cfg.wheelbase * math.cos(st.heading),
                             st.y + cfg.wheelbase * math.sin(st.heading))
        if v.vid == 0:
            gap = math.nan
        else:
            gap = path.along_distance(true_s[v.vid], true_s[v.vid - 1]) - cfg.vehicle_length
        rows.append(TraceRow(t, v.vid, st.x, st.y, st.heading, st.speed, v.est.x, v.est.y, steer,
                             throttle, true_front.cross_track, gap, target, desired_gap, h_eff))
        updates.append((steer, throttle))

    # 7. plant
    for v, (steer, throttle) in zip(fleet, updates):
        moved = step_bicycle(v.state, steer, dt, cfg.wheelbase)
        speed = step_speed(v.state.speed, throttle, dt, cfg.max_speed, cfg.motor_tau)
        v.distance += v.state.speed * dt
        v.est.predict(v.state.speed, steer, dt, cfg.wheelbase)
        v.state = VehicleState(moved.x, moved.y, moved.heading, speed)
    return rows, leader_target


def _metrics(rows, ticks, n, channel, cfg, last_profile_change, scenario) -> dict:
    per_vehicle = []
    settle_from = last_profile_change + SETTLING_TIME
    min_gap = math.inf
    all_err, all_heads = [], []
    for vid in range(n):
        vr = [r for r in rows if r.vehicle == vid]
        ct = [r.cross_track for r in vr]
        entry = {
            "vehicle": vid,
            "cross_track_rmse": rmse(ct) if ct else 0.0,
            "max_abs_cross_track": max((abs(c) for c in ct), default=0.0),
        }
        if vid > 0:
            gaps = [r.gap for r in vr]
            vmin = min(gaps, default=math.inf)
            min_gap = min(min_gap, vmin)
            errs = [abs(r.gap - r.desired_gap) for r in vr
                    if r.t >= settle_from and not math.isnan(r.desired_gap)]
            heads = [r.effective_headway for r in vr if not math.isnan(r.effective_headway)]
            all_err += errs
            all_heads += heads
            entry.update({
                "min_gap": vmin,
                "steady_gap_error_mean": float(np.mean(errs)) if errs else None,
                "steady_gap_error_max": max(errs) if errs else None,
                "mean_effective_headway": float(np.mean(heads)) if heads else None,
            })
        per_vehicle.append(entry)

    totals = channel.stats.totals()
    resolved = totals.delivered + totals.dropped
    return {
        "scenario": scenario.kind,
        "seed": scenario.seed,
        "drop_prob": scenario.channel.drop_prob,
        "ticks": ticks,
        "duration": ticks * cfg.physics_dt,
        "vehicles": per_vehicle,
        "cross_track_rmse": [v["cross_track_rmse"] for v in per_vehicle],
        "max_abs_cross_track": max(v["max_abs_cross_track"] for v in per_vehicle),
        "min_gap": None if n < 2 else min_gap,
        "settling_start": settle_from if n > 1 else None,
        "mean_gap_error": float(np.mean(all_err)) if all_err else None,
        "max_gap_error": max(all_err) if all_err else None,
        "mean_effective_headway": float(np.mean(all_heads)) if all_heads else None,
        "collision": bool(n > 1 and min_gap <= 0.0),
        "delivered_fraction": totals.delivered / resolved if resolved else None,
        "delivery": channel.stats.as_dict(),
    }


def _run_rate(args):
    scenario, config, rate = args
    return rate, run(replace(scenario, channel=replace(scenario.channel, drop_prob=rate)), config)


def sweep(base: Scenario, rates: Sequence[float], config: SimConfig, jobs: int = 1):
    """One run per drop rate, results in the order given."""
    rates = list(rates)
    for r in rates:
        if not 0.0 <= r <= 1.0:
            raise ConfigError(f"drop rate {r} outside [0, 1]")
    if len(set(rates)) != len(rates):
        raise ConfigError("drop rates must be distinct")
    work = [(base, config, r) for r in rates]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_rate, work))
    return [_run_rate(w) for w in work]
