"""Experiment configuration: defaults, TOML loading, validation.

Default values reproduce the reference setup: 15/25 s green bounds, 4 s
green intervals, 1 s signal step, 500 m passing zone, 200 m buffer,
14 m/s free speed, +/-2 m/s^2 acceleration bounds, 6 m jam-plus-length,
0.5 s HV reaction time, basic demand of 900 veh/h per arm (400 left /
400 through / 100 right, mixed 50% CAV) scaled by a demand factor of 2.5,
1000 s runs with a 120 s warm-up and five seeds.
"""

from __future__ import annotations

import copy
import io
import os
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .domain import ARMS, KinematicParams, TimingParams

CONTROLLERS = ("SPDL", "SPDL-no-buffer", "BP")
ARRIVAL_PROCESSES = ("uniform", "poisson")


@dataclass
class DemandSpec:
    """Per-arm demand. Proportions are (left, through, right) shares of the
    arm total; CAV penetration applies per arrival draw."""

    total_veh_h: float = 900.0
    proportions: tuple = (4.0 / 9.0, 4.0 / 9.0, 1.0 / 9.0)
    cav_penetration: float = 0.5
    arrival_process: str = "uniform"
    demand_factor: float = 2.5
    seed: int = 1

    def __post_init__(self):
        if abs(sum(self.proportions) - 1.0) > 1e-9:
            raise ValueError("turn proportions must sum to 1")
        if any(p < 0 for p in self.proportions):
            raise ValueError("turn proportions must be nonnegative")
        if not 0.0 <= self.cav_penetration <= 1.0:
            raise ValueError("cav_penetration must lie in [0, 1]")
        if self.total_veh_h < 0 or self.demand_factor < 0:
            raise ValueError("demand rates must be nonnegative")
        if self.arrival_process not in ARRIVAL_PROCESSES:
            raise ValueError(f"unknown arrival process {self.arrival_process}")

    def movement_rate_veh_h(self, turn_index: int) -> float:
        """Scaled arrival rate of one turn stream (0=left, 1=through, 2=right)."""
        return self.total_veh_h * self.demand_factor * self.proportions[turn_index]


@dataclass
class ExperimentConfig:
    # [signal]
    g_min: float = 15.0
    g_max: float = 25.0
    green_interval: float = 4.0
    dt: float = 1.0
    # [kinematics]
    v_max: float = 14.0
    a_up: float = 2.0
    a_low_mag: float = 2.0
    v0_low: float = 3.0
    v0_up: float = 14.0
    passing_zone_length: float = 500.0
    # [vehicle]
    jam_plus_length: float = 6.0
    tau_hv: float = 0.5
    tau_cav: float = 0.0
    # [flow] saturation rates, veh/h per lane
    q_s_through: float = 1650.0
    q_s_left: float = 1550.0
    # [geometry]
    buffer_length: float = 200.0
    box_through: float = 30.0
    box_left: float = 25.0
    box_right: float = 15.0
    # [simulation]
    dt_sim: float = 0.1
    warmup: float = 120.0
    duration: float = 1000.0
    prediction_horizon: float = 120.0
    seeds: tuple = (1, 2, 3, 4, 5)
    controller: str = "SPDL"
    arrival_process: str = "uniform"
    # [demand]
    demand_factor: float = 2.5
    arm_total_veh_h: float = 900.0
    proportions: tuple = (4.0 / 9.0, 4.0 / 9.0, 1.0 / 9.0)
    cav_penetration: float = 0.5
    # [baseline]
    blue_headway: float = 2.0
    # [solver]
    tail_cap: int = 40
    workers: int = 1
    solve_budget_s: float = 0.0  # 0 disables the wall-clock fallback

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}; "
                             f"expected one of {CONTROLLERS}")
        if self.arrival_process not in ARRIVAL_PROCESSES:
            raise ValueError(f"unknown arrival process {self.arrival_process!r}")
        steps = self.dt / self.dt_sim
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("dt_sim must divide dt")
        if self.warmup >= self.duration:
            raise ValueError("warmup must be shorter than duration")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        # construct derived params eagerly so bad values fail here
        self.timing()
        self.kinematics()
        DemandSpec(self.arm_total_veh_h, tuple(self.proportions),
                   self.cav_penetration, self.arrival_process,
                   self.demand_factor)

    def timing(self) -> TimingParams:
        return TimingParams(self.g_min, self.g_max, self.green_interval,
                            self.dt)

    def kinematics(self) -> KinematicParams:
        return KinematicParams(self.v_max, self.a_up, self.a_low_mag,
                               self.v0_low, self.v0_up,
                               self.passing_zone_length)

    def demand(self, seed: int) -> DemandSpec:
        return DemandSpec(self.arm_total_veh_h, tuple(self.proportions),
                          self.cav_penetration, self.arrival_process,
                          self.demand_factor, seed)

    def q_s_veh_h(self, movement_id: int) -> float:
        from .domain import MOVEMENTS, Turn
        return (self.q_s_left if MOVEMENTS[movement_id].turn is Turn.LEFT
                else self.q_s_through)

    def box_length(self, turn) -> float:
        from .domain import Turn
        return {Turn.THROUGH: self.box_through, Turn.LEFT: self.box_left,
                Turn.RIGHT: self.box_right}[turn]

    def approach_length(self) -> float:
        return self.buffer_length + self.passing_zone_length

    def free_flow_time(self, turn) -> float:
        return (self.approach_length() + self.box_length(turn)) / self.v_max

    def to_dict(self) -> dict:
        d = {}
        for name in _SECTION_KEYS_FLAT:
            v = getattr(self, name)
            d[name] = list(v) if isinstance(v, tuple) else v
        return d

    def with_overrides(self, **kw) -> "ExperimentConfig":
        c = copy.deepcopy(self)
        for k, v in kw.items():
            if not hasattr(c, k):
                raise ValueError(f"unknown config key {k!r}")
            setattr(c, k, tuple(v) if isinstance(getattr(c, k), tuple) else v)
        c.validate()
        return c


_SECTIONS = {
    "signal": ("g_min", "g_max", "green_interval", "dt"),
    "kinematics": ("v_max", "a_up", "a_low_mag", "v0_low", "v0_up",
                   "passing_zone_length"),
    "vehicle": ("jam_plus_length", "tau_hv", "tau_cav"),
    "flow": ("q_s_through", "q_s_left"),
    "geometry": ("buffer_length", "box_through", "box_left", "box_right"),
    "simulation": ("dt_sim", "warmup", "duration", "prediction_horizon",
                   "seeds", "controller", "arrival_process"),
    "demand": ("demand_factor", "arm_total_veh_h", "proportions",
               "cav_penetration"),
    "baseline": ("blue_headway",),
    "solver": ("tail_cap", "workers", "solve_budget_s"),
}
_SECTION_KEYS_FLAT = tuple(k for keys in _SECTIONS.values() for k in keys)

ENV_CONFIG_VAR = "SPDLSIM_CONFIG"


def load_config(path: str | None = None) -> ExperimentConfig:
    """Load a TOML config file, falling back to $SPDLSIM_CONFIG, then to the
    built-in defaults. Unknown sections or keys raise with a clear message."""
    if path is None:
        path = os.environ.get(ENV_CONFIG_VAR)
    if path is None:
        return ExperimentConfig()
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return config_from_dict(data, source=path)


def config_from_dict(data: dict, source: str = "<dict>") -> ExperimentConfig:
    kw = {}
    for section, values in data.items():
        if section not in _SECTIONS:
            raise ValueError(f"{source}: unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ValueError(f"{source}: section [{section}] must hold keys")
        for key, v in values.items():
            if key not in _SECTIONS[section]:
                raise ValueError(f"{source}: unknown key {key!r} in "
                                 f"[{section}]")
            kw[key] = tuple(v) if isinstance(v, list) else v
    return ExperimentConfig(**kw)


def dump_config_toml(config: ExperimentConfig) -> str:
    out = io.StringIO()
    for section, keys in _SECTIONS.items():
        out.write(f"[{section}]\n")
        for k in keys:
            v = getattr(config, k)
            if isinstance(v, str):
                out.write(f'{k} = "{v}"\n')
            elif isinstance(v, tuple):
                out.write(f"{k} = {list(v)}\n")
            else:
                out.write(f"{k} = {v}\n")
        out.write("\n")
    return out.getvalue()
