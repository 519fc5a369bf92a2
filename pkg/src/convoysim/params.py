"""Autopilot parameter sets: parsing, linting and conversion to simulator config.

Parameter files are plain ``NAME VALUE`` lines. ``#`` starts a comment. Numeric
parameters take a single decimal token; enumerated parameters take the rest of
the line, so multi-word tokens such as ``Ground Rover`` survive a round trip.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, NamedTuple, Union

from .errors import ConfigError, DuplicateParamError, ParamParseError, UnknownParamError

FEET_TO_METERS = 0.3048

Value = Union[float, str]

TABLE_DEFAULT = "table-default"
OVERRIDE = "override"


class TableRow(NamedTuple):
    name: str
    value: Value
    unit: str
    ardupilot: str


PARAM_TABLE: tuple[TableRow, ...] = (
    TableRow("GND_SPEED_IMAX", 0.125, "%/m/s", "SPEED_IMAX"),
    TableRow("GND_SPEED_P", 0.250, "%/m/s", "SPEED_P"),
    TableRow("GND_SPEED_THR_SC", 1.000, "%/m/s", "SPEED_SCALER"),
    TableRow("GND_THR_CRUISE", 30.0, "%", "THR_CRUISE"),
    TableRow("GND_THR_MAX", 50.0, "%", "THR_MAX"),
    TableRow("GND_THR_MIN", 0.0, "%", "THR_MIN"),
    TableRow("GND_WHEEL_BASE", 1.575, "ft", "WHEEL_BASE"),
    TableRow("GPS_UBX_BAUD2", 115200.0, "B/s", "GPS_BAUD"),
    TableRow("GPS_UBX_DYNMODEL", "automotive", "", "GPS_NAVFILTER"),
    TableRow("GPS_UBX_MODE", "Rover+Base", "", "GPS_TYPE"),
    TableRow("MAV_1_CONFIG", "TELEM2", "", "SERIALn_PROTOCOL=1"),
    TableRow("MAV_1_RATE", 10000.0, "B/s", "SERIALn_BAUD"),
    TableRow("MAV_TYPE", "Ground Rover", "", "FRAME_CLASS=ROVER"),
    TableRow("PWM_MAIN_DIS2", 1500.0, "us", "SERVOx_TRIM"),
    TableRow("PWM_MAIN_DIS7", 1500.0, "us", "SERVOx_TRIM"),
    TableRow("PWM_MAIN_FUNC2", "Steering", "", "SERVOx_FUNCTION=26"),
    TableRow("PWM_MAIN_FUNC7", "Throttle", "", "SERVOx_FUNCTION=70"),
    TableRow("SER_GPS1_BAUD", 115200.0, "8N1", "SERIALn_BAUD"),
    TableRow("SER_TEL2_BAUD", 115200.0, "8N1", "SERIALn_BAUD"),
)

_TABLE = {row.name: row for row in PARAM_TABLE}

NUMERIC_PARAMS = frozenset(r.name for r in PARAM_TABLE if not isinstance(r.value, str))

# Accepted tokens for enumerated parameters. They have no effect on the
# simulation; membership is only linted.
ENUM_TOKENS: dict[str, frozenset[str]] = {
    "GPS_UBX_DYNMODEL": frozenset({"portable", "stationary", "pedestrian", "automotive",
                                   "sea", "airborne1g", "airborne2g", "airborne4g"}),
    "GPS_UBX_MODE": frozenset({"Default", "Rover+Base"}),
    "MAV_1_CONFIG": frozenset({"Disabled", "TELEM1", "TELEM2", "TELEM3", "GPS1", "GPS2"}),
    "MAV_TYPE": frozenset({"Ground Rover"}),
    "PWM_MAIN_FUNC2": frozenset({"Steering"}),
    "PWM_MAIN_FUNC7": frozenset({"Throttle"}),
}

_NAME_RE = re.compile(r"^[A-Z][A-Z0-9_]*$")


@dataclass(frozen=True)
class ParamSet:
    """Named parameter values plus where each one came from.

    Equality compares values only; provenance is bookkeeping.
    """

    entries: dict[str, Value] = field(default_factory=dict)
    provenance: dict[str, Union[int, str]] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        missing = set(self.entries) - set(self.provenance)
        if missing:
            raise ValueError(f"entries without provenance: {sorted(missing)}")

    def __getitem__(self, name: str) -> Value:
        return self.entries[name]

    def __contains__(self, name: object) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def get(self, name, default=None):
        return self.entries.get(name, default)

    def number(self, name: str) -> float:
        value = self.entries[name]
        if isinstance(value, str):
            raise ConfigError(f"{name} must be numeric, got {value!r}")
        return float(value)

    def with_values(self, **values: Value) -> "ParamSet":
        entries = dict(self.entries)
        provenance = dict(self.provenance)
        for name, value in values.items():
            entries[name] = float(value) if isinstance(value, (int, float)) else value
            provenance[name] = OVERRIDE
        return ParamSet(entries, provenance)

    def overlay_on_defaults(self) -> "ParamSet":
        """Fill known parameter names this set does not define with their defaults."""
        base = table_defaults()
        entries = dict(base.entries)
        provenance = dict(base.provenance)
        entries.update(self.entries)
        provenance.update(self.provenance)
        return ParamSet(entries, provenance)


def _parse_number(token: str) -> float | None:
    try:
        value = float(token)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def parse_param_file(text: Union[str, Iterable[str]]) -> ParamSet:
    lines = text.splitlines() if isinstance(text, str) else list(text)
    entries: dict[str, Value] = {}
    provenance: dict[str, Union[int, str]] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        name = parts[0]
        if not _NAME_RE.match(name):
            raise ParamParseError(lineno, f"invalid parameter name {name!r}")
        if len(parts) < 2:
            raise ParamParseError(lineno, f"{name} has no value")
        rest = parts[1].strip()
        number = _parse_number(rest)
        if number is not None:
            value: Value = number
        elif name in NUMERIC_PARAMS:
            raise ParamParseError(lineno, f"{name} expects a number, got {rest!r}")
        else:
            value = " ".join(rest.split())
        if name in entries:
            raise DuplicateParamError(name, provenance[name], lineno)
        entries[name] = value
        provenance[name] = lineno
    return ParamSet(entries, provenance)


def serialize_params(params: ParamSet) -> str:
    out = []
    for name in sorted(params.entries):
        value = params.entries[name]
        out.append(f"{name} {value!r}" if isinstance(value, float) else f"{name} {value}")
    return "\n".join(out) + ("\n" if out else "")


def table_defaults() -> ParamSet:
    entries = {row.name: row.value for row in PARAM_TABLE}
    return ParamSet(entries, {name: TABLE_DEFAULT for name in entries})


def to_ardupilot(px4_name: str) -> str:
    try:
        return _TABLE[px4_name].ardupilot
    except KeyError:
        raise UnknownParamError(px4_name) from None


# --- physical description and simulator configuration ---------------------


@dataclass(frozen=True)
class PhysicalSpec:
    wheelbase: float = 0.48006       # m
    vehicle_length: float = 0.75     # m
    max_steer: float = 0.44          # rad
    max_speed: float = 6.0           # m/s at 100 % throttle

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"physical spec {f.name} must be finite and > 0, got {value}")
        if self.max_steer >= math.pi / 2:
            raise ConfigError("physical spec max_steer must be below pi/2")


@dataclass(frozen=True)
class SimConfig:
    """Everything the engine needs, in SI units (throttle in percent)."""

    wheelbase: float = 0.48006
    thr_min: float = 0.0
    thr_cruise: float = 30.0
    thr_max: float = 50.0
    speed_p: float = 0.25
    speed_i: float = 0.2
    speed_imax: float = 0.125
    thr_scaler: float = 1.0
    # Percent of throttle per unit of speed-loop output. PX4 rover gains act on
    # normalized [0, 1] throttle, hence 100.
    throttle_gain_scale: float = 100.0
    steer_trim: float = 1500.0
    throttle_trim: float = 1500.0
    pwm_min: float = 1000.0
    pwm_max: float = 2000.0
    pwm_quantize: bool = False
    gps_rate: float = 10.0
    gps_sigma: float = 0.02
    bsm_rate: float = 10.0
    physics_dt: float = 0.01
    motor_tau: float = 0.5
    max_speed: float = 6.0
    max_steer: float = 0.44
    vehicle_length: float = 0.75
    stanley_k: float = 2.5
    stanley_eps: float = 0.1
    latency: float = 0.02
    loss_window: float = 2.0
    est_pos_gain: float = 1.0
    est_heading_gain: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.thr_min <= self.thr_cruise <= self.thr_max <= 100.0:
            raise ConfigError("throttle limits must satisfy 0 <= min <= cruise <= max <= 100")
        if not self.physics_dt > 0:
            raise ConfigError("physics_dt must be > 0")
        for name in ("gps_rate", "bsm_rate"):
            rate = getattr(self, name)
            if not rate > 0:
                raise ConfigError(f"{name} must be > 0")
            divisor = 1.0 / (rate * self.physics_dt)
            if abs(divisor - round(divisor)) > 1e-9 or round(divisor) < 1:
                raise ConfigError(f"{name} {rate} Hz is not an integer divisor of the physics rate")
        positive = ("wheelbase", "motor_tau", "max_speed", "max_steer", "vehicle_length",
                    "stanley_k", "stanley_eps", "loss_window", "speed_imax")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.gps_sigma < 0 or self.latency < 0:
            raise ConfigError("gps_sigma and latency must be >= 0")
        if not self.pwm_min < self.steer_trim < self.pwm_max:
            raise ConfigError("steering trim must lie strictly inside the PWM range")
        if not self.pwm_min <= self.throttle_trim < self.pwm_max:
            raise ConfigError("throttle trim must lie inside the PWM range")

    @property
    def gps_divisor(self) -> int:
        return round(1.0 / (self.gps_rate * self.physics_dt))

    @property
    def bsm_divisor(self) -> int:
        return round(1.0 / (self.bsm_rate * self.physics_dt))

    def replace(self, **changes) -> "SimConfig":
        return replace(self, **changes)


# --- lint ------------------------------------------------------------------

ERROR = "error"
WARNING = "warning"

WHEELBASE_TOLERANCE = 0.01  # m
THROTTLE_ABRUPT_LIMIT = 50.0  # %
PWM_DISARMED_RANGE = (800.0, 2200.0)
BITS_PER_BYTE_8N1 = 10


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    rule: str
    message: str
    params: tuple[str, ...]

    def __post_init__(self):
        if not self.params:
            raise ValueError("a diagnostic must name at least one parameter or PHYSICAL_SPEC")

    def format(self) -> str:
        return f"{self.severity.upper()} {self.rule} {' '.join(self.params)}: {self.message}"

    def as_dict(self) -> dict:
        return {"severity": self.severity, "rule": self.rule,
                "params": list(self.params), "message": self.message}


def _numeric(params: ParamSet, name: str, out: list[Diagnostic]) -> float | None:
    value = params.get(name)
    if isinstance(value, str):
        out.append(Diagnostic(ERROR, "R0", f"expected a number, got {value!r}", (name,)))
        return None
    return value


def lint(params: ParamSet, spec: PhysicalSpec) -> list[Diagnostic]:
    """Check a parameter set against the tuning rules and the physical vehicle.

    Known parameters absent from ``params`` are checked at their defaults.
    Diagnostics come back sorted by rule id, then by parameter names.
    """
    p = params.overlay_on_defaults()
    out: list[Diagnostic] = []
    num = {name: _numeric(p, name, out) for name in sorted(NUMERIC_PARAMS)}

    lo, cruise, hi = num["GND_THR_MIN"], num["GND_THR_CRUISE"], num["GND_THR_MAX"]
    if None not in (lo, cruise, hi) and not (0.0 <= lo <= cruise <= hi <= 100.0):
        out.append(Diagnostic(
            ERROR, "R1",
            f"throttle limits out of order: need 0 <= MIN ({lo}) <= CRUISE ({cruise}) <= MAX ({hi}) <= 100",
            ("GND_THR_MIN", "GND_THR_CRUISE", "GND_THR_MAX")))

    if hi is not None and hi > THROTTLE_ABRUPT_LIMIT:
        out.append(Diagnostic(
            WARNING, "R2",
            f"throttle cap {hi} % above {THROTTLE_ABRUPT_LIMIT} % risks abrupt torque onset at low speed",
            ("GND_THR_MAX",)))

    wb_ft = num["GND_WHEEL_BASE"]
    if wb_ft is not None:
        wb_m = wb_ft * FEET_TO_METERS
        if wb_ft <= 0:
            out.append(Diagnostic(ERROR, "R3", f"wheelbase must be positive, got {wb_ft} ft",
                                  ("GND_WHEEL_BASE", "PHYSICAL_SPEC")))
        elif abs(wb_m - spec.wheelbase) > WHEELBASE_TOLERANCE:
            out.append(Diagnostic(
                ERROR, "R3",
                f"wheelbase {wb_ft} ft = {wb_m:.5f} m differs from measured axle separation "
                f"{spec.wheelbase:.5f} m by more than {WHEELBASE_TOLERANCE} m",
                ("GND_WHEEL_BASE", "PHYSICAL_SPEC")))

    low, high = PWM_DISARMED_RANGE
    for name in ("PWM_MAIN_DIS2", "PWM_MAIN_DIS7"):
        us = num[name]
        if us is not None and not low <= us <= high:
            out.append(Diagnostic(ERROR, "R4", f"disarmed PWM {us} us outside [{low:g}, {high:g}] us", (name,)))

    rate, baud = num["MAV_1_RATE"], num["SER_TEL2_BAUD"]
    if rate is not None and baud is not None and rate * BITS_PER_BYTE_8N1 > baud:
        out.append(Diagnostic(
            WARNING, "R5",
            f"MAVLink rate {rate:g} B/s needs {rate * BITS_PER_BYTE_8N1:g} baud but the link runs at {baud:g}",
            ("MAV_1_RATE", "SER_TEL2_BAUD")))

    for name, allowed in ENUM_TOKENS.items():
        value = p.get(name)
        if value is not None and value not in allowed:
            out.append(Diagnostic(WARNING, "R6", f"unrecognized value {value!r}", (name,)))

    return sorted(out, key=lambda d: (d.rule, d.params, d.message))


# SimConfig fields that come from the parameter set
PARAM_DERIVED_FIELDS = frozenset({"wheelbase", "thr_min", "thr_cruise", "thr_max", "speed_p", "speed_imax",
                                  "thr_scaler", "steer_trim", "throttle_trim"})


def effective_config(params: ParamSet, spec: PhysicalSpec, **overrides) -> SimConfig:
    """Translate parameters into a `SimConfig`.

    Raises ConfigError carrying the diagnostics when lint reports any error.
    Simulator-only fields come from ``overrides`` or the SimConfig defaults.
    """
    diagnostics = lint(params, spec)
    errors = [d for d in diagnostics if d.severity == ERROR]
    if errors:
        raise ConfigError("; ".join(d.format() for d in errors), diagnostics)
    p = params.overlay_on_defaults()
    values = dict(
        wheelbase=p.number("GND_WHEEL_BASE") * FEET_TO_METERS,
        thr_min=p.number("GND_THR_MIN"),
        thr_cruise=p.number("GND_THR_CRUISE"),
        thr_max=p.number("GND_THR_MAX"),
        speed_p=p.number("GND_SPEED_P"),
        speed_imax=p.number("GND_SPEED_IMAX"),
        thr_scaler=p.number("GND_SPEED_THR_SC"),
        steer_trim=p.number("PWM_MAIN_DIS2"),
        throttle_trim=p.number("PWM_MAIN_DIS7"),
        max_speed=spec.max_speed,
        max_steer=spec.max_steer,
        vehicle_length=spec.vehicle_length,
    )
    values.update(overrides)
    return SimConfig(**values)
