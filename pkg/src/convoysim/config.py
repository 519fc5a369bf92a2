"""JSON run configuration for the command line.

A config document has up to six sections, all optional::

    {
      "params": {"GND_THR_MAX": 50.0},   # or "params_file": "rover.params"
      "physical": {"wheelbase": 0.48006},
      "sim": {"gps_sigma": 0.02},
      "gap_policy": {"headway": 1.0},
      "scenario": {"laps": 2, "duration": 60, "vehicles": 3, "seed": 0}
    }

Anything not given takes its built-in default. Unknown keys are
rejected at every level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path as FsPath
from typing import Optional

from .control import GapPolicy
from .engine import BASELINE, CONVOY, Scenario
from .errors import ConfigError
from .params import (PARAM_DERIVED_FIELDS, ParamSet, PhysicalSpec, SimConfig, effective_config,
                     parse_param_file, table_defaults)
from .track import DEFAULT_SPACING, oval_path
from .v2v import ChannelConfig

SECTIONS = {"params", "params_file", "physical", "sim", "gap_policy", "scenario"}
SCENARIO_KEYS = {"vehicles", "laps", "duration", "seed", "drop_rate", "first_speed", "cruise_speed",
                 "track_length", "track_width", "track_spacing"}
# SimConfig fields set through parameters or the physical spec, not "sim"
_NOT_SIM = PARAM_DERIVED_FIELDS | {"max_speed", "max_steer", "vehicle_length"}


def _check_keys(section: str, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(unknown)}")


def _dataclass_keys(cls):
    return {f.name for f in fields(cls)}


@dataclass(frozen=True)
class RunConfig:
    params: ParamSet
    physical: PhysicalSpec
    sim: SimConfig
    gap_policy: GapPolicy
    scenario: dict

    def build_scenario(self, kind: str, seed: Optional[int] = None,
                       drop_rate: Optional[float] = None) -> Scenario:
        sc = self.scenario
        path = oval_path(sc.get("track_length", 8.0), sc.get("track_width", 4.0),
                         sc.get("track_spacing", DEFAULT_SPACING))
        seed = sc.get("seed", 0) if seed is None else seed
        rate = sc.get("drop_rate", 0.0) if drop_rate is None else drop_rate
        common = dict(path=path, gap_policy=self.gap_policy, seed=int(seed),
                      first_speed=sc.get("first_speed", 1.0), cruise_speed=sc.get("cruise_speed", 2.0),
                      channel=ChannelConfig(drop_prob=rate, latency=self.sim.latency, cadence=self.sim.bsm_rate))
        if kind in ("baseline", BASELINE):
            return Scenario(kind=BASELINE, vehicles=1, laps=sc.get("laps", 2.0), duration=None, **common)
        if kind == CONVOY:
            return Scenario(kind=CONVOY, vehicles=int(sc.get("vehicles", 3)), laps=None,
                            duration=sc.get("duration", 60.0), **common)
        raise ConfigError(f"unknown scenario {kind!r}")


def parse_config(doc: dict, base_dir: FsPath = FsPath(".")) -> RunConfig:
    _check_keys("config", doc, SECTIONS)
    if "params" in doc and "params_file" in doc:
        raise ConfigError("give either params or params_file, not both")
    if "params_file" in doc:
        params = parse_param_file((base_dir / doc["params_file"]).read_text())
    elif "params" in doc:
        raw = doc["params"]
        if not isinstance(raw, dict):
            raise ConfigError("section 'params' must be an object")
        params = ParamSet({}, {}).with_values(**raw)
    else:
        params = table_defaults()

    physical_doc = doc.get("physical", {})
    _check_keys("physical", physical_doc, _dataclass_keys(PhysicalSpec))
    physical = PhysicalSpec(**physical_doc)

    sim_doc = doc.get("sim", {})
    _check_keys("sim", sim_doc, _dataclass_keys(SimConfig) - _NOT_SIM)
    sim = effective_config(params, physical, **sim_doc)

    gap_doc = doc.get("gap_policy", {})
    _check_keys("gap_policy", gap_doc, _dataclass_keys(GapPolicy))
    gap_policy = GapPolicy(**gap_doc)

    scenario_doc = doc.get("scenario", {})
    _check_keys("scenario", scenario_doc, SCENARIO_KEYS)
    rate = scenario_doc.get("drop_rate", 0.0)
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"drop_rate {rate} outside [0, 1]")
    return RunConfig(params, physical, sim, gap_policy, dict(scenario_doc))


def load_config(file) -> RunConfig:
    path = FsPath(file)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc, path.parent)


def load_physical_spec(file) -> PhysicalSpec:
    """Physical spec from a JSON file: either the bare fields or a full config's ``physical`` section."""
    try:
        doc = json.loads(FsPath(file).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{file}: invalid JSON ({exc})") from None
    if isinstance(doc, dict) and "physical" in doc:
        doc = doc["physical"]
    _check_keys("physical", doc, _dataclass_keys(PhysicalSpec))
    return PhysicalSpec(**doc)
