# config/run_config.py
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

from config.settings import ConfigError, settings

SCHEMA_VERSION = 1
FILTERS = ("1-imu", "1-imu-ekm", "5-imu", "5-imu-ekm")
INIT_POLICIES = ("static", "truth")
PATHS = ("straight", "circular")


def _reject_unknown(cls, doc: Dict[str, Any], where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _positive(name: str, value: float, allow_zero: bool = False):
    if not math.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value}")


@dataclass
class NoiseConfig:
    gyro_noise: float = 0.005          # rad/s/√Hz
    accel_noise: float = 0.05          # m/s²/√Hz
    gyro_bias_walk: float = 1e-5       # rad/s²/√Hz
    accel_bias_walk: float = 1e-5      # m/s³/√Hz
    tilt_std: float = 0.005            # rad
    joint_std: float = 0.001           # rad
    deformation_std: float = 0.01      # rad
    slippage_std: float = 0.02         # m/s
    foothold_noise: float = 1e-6       # (m², rad²)/s
    force_std: float = 1.0             # N, simulator only

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "NoiseConfig":
        _reject_unknown(cls, doc, "noise config")
        cfg = cls(**{k: float(v) for k, v in doc.items()})
        cfg.validate()
        return cfg

    @classmethod
    def noiseless(cls) -> "NoiseConfig":
        return cls(**{f.name: 0.0 for f in fields(cls)})

    def validate(self):
        for f in fields(self):
            _positive(f.name, getattr(self, f.name), allow_zero=True)


@dataclass
class ContactConfig:
    threshold: float = settings.CONTACT_THRESHOLD_N
    hysteresis: float = settings.CONTACT_HYSTERESIS_N
    debounce: float = settings.CONTACT_DEBOUNCE_S

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "ContactConfig":
        _reject_unknown(cls, doc, "contact config")
        cfg = cls(**{k: float(v) for k, v in doc.items()})
        _positive("contact threshold", cfg.threshold)
        if not 0 <= cfg.hysteresis < cfg.threshold:
            raise ConfigError("contact hysteresis must be in [0, threshold)")
        _positive("contact debounce", cfg.debounce, allow_zero=True)
        return cfg


@dataclass
class InitialStateConfig:
    policy: str = "static"
    static_window_s: float = 1.0
    orientation_var: float = 1e-4
    position_var: float = 1e-4
    velocity_var: float = 1e-2
    gyro_bias_var: float = 1e-4
    accel_bias_var: float = 1e-4

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "InitialStateConfig":
        _reject_unknown(cls, doc, "initial_state config")
        cfg = cls(**doc)
        if cfg.policy not in INIT_POLICIES:
            raise ConfigError(f"initial_state.policy must be one of {INIT_POLICIES}")
        for name in ("static_window_s", "orientation_var", "position_var", "velocity_var",
                     "gyro_bias_var", "accel_bias_var"):
            _positive(f"initial_state.{name}", float(getattr(cfg, name)))
        return cfg


@dataclass
class GaitSpec:
    speed: float = 0.15                 # m/s
    step_length: float = 0.15           # m
    step_duration: float = 1.0          # s
    roll_amplitude: float = 0.25        # rad, heel-toe pitch at strike and toe-off
    path: str = "straight"
    radius: float = 0.0                 # m, circular path only
    duration: float = 20.0              # s
    sample_rate: float = settings.SAMPLE_RATE_HZ
    seed: int = settings.DEFAULT_SEED
    pelvis_height: float = 0.9          # m above the ground
    sway_amplitude: float = 0.02        # m
    bob_amplitude: float = 0.01         # m
    clearance: float = 0.05             # m
    double_support_fraction: float = 0.2
    ramp_time: float = 1.0              # s
    stand_time: float = 1.0             # s standing still before walking
    deformation_amplitude: float = 0.0  # rad
    body_weight: float = 700.0          # N
    min_load_share: float = 0.2

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "GaitSpec":
        doc = dict(doc)
        version = doc.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"gait spec schema_version must be {SCHEMA_VERSION}")
        _reject_unknown(cls, doc, "gait spec")
        spec = cls(**doc)
        spec.validate()
        return spec

    def to_dict(self) -> Dict[str, Any]:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate)) + 1

    def validate(self):
        _positive("speed", self.speed, allow_zero=True)
        for name in ("step_length", "step_duration", "duration", "sample_rate",
                     "pelvis_height", "body_weight"):
            _positive(name, float(getattr(self, name)))
        for name in ("roll_amplitude", "sway_amplitude", "bob_amplitude", "clearance",
                     "ramp_time", "stand_time", "deformation_amplitude"):
            _positive(name, float(getattr(self, name)), allow_zero=True)
        if self.path not in PATHS:
            raise ConfigError(f"path must be one of {PATHS}")
        if self.path == "circular" and self.radius <= 0:
            raise ConfigError("circular path needs a positive radius")
        if not 0 < self.double_support_fraction < 0.5:
            raise ConfigError("double_support_fraction must be in (0, 0.5)")
        if not 0 < self.min_load_share < 0.5:
            raise ConfigError("min_load_share must be in (0, 0.5)")
        if self.speed > 0 and self.stand_time + 2 * self.ramp_time + 2 * self.step_duration > self.duration:
            raise ConfigError("duration too short for standing, ramps and at least two steps")
        if self.speed > 0:
            nominal = self.speed * self.step_duration
            if abs(self.step_length - nominal) > 0.1 * nominal:
                raise ConfigError(f"step_length {self.step_length} m inconsistent with "
                                 f"speed x step_duration = {nominal:.3f} m")


@dataclass
class RunConfig:
    robot: str = settings.ROBOT_DESCRIPTION_PATH
    filter: str = "5-imu-ekm"
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    contact: ContactConfig = field(default_factory=ContactConfig)
    initial_state: InitialStateConfig = field(default_factory=InitialStateConfig)
    outputs: Dict[str, str] = field(default_factory=dict)
    seed: int = settings.DEFAULT_SEED

    @classmethod
    def from_dict(cls, doc: Dict[str, Any], base_dir: Optional[str] = None) -> "RunConfig":
        doc = dict(doc)
        version = doc.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"run config schema_version must be {SCHEMA_VERSION}")
        _reject_unknown(cls, doc, "run config")
        cfg = cls(
            robot=doc.get("robot", settings.ROBOT_DESCRIPTION_PATH),
            filter=doc.get("filter", "5-imu-ekm"),
            noise=NoiseConfig.from_dict(doc.get("noise", {})),
            contact=ContactConfig.from_dict(doc.get("contact", {})),
            initial_state=InitialStateConfig.from_dict(doc.get("initial_state", {})),
            outputs=dict(doc.get("outputs", {})),
            seed=int(doc.get("seed", settings.DEFAULT_SEED)),
        )
        if base_dir and not os.path.isabs(cfg.robot) and not os.path.exists(cfg.robot):
            candidate = os.path.join(base_dir, os.path.basename(cfg.robot))
            if os.path.exists(candidate):
                cfg.robot = candidate
        cfg.validate()
        return cfg

    def validate(self):
        if self.filter not in FILTERS:
            raise ConfigError(f"filter must be one of {FILTERS}, got {self.filter!r}")
        if not os.path.exists(self.robot):
            raise ConfigError(f"robot description not found: {self.robot}")

    def to_dict(self) -> Dict[str, Any]:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}


def load_json(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})")


def load_run_config(path: str) -> RunConfig:
    return RunConfig.from_dict(load_json(path), base_dir=os.path.dirname(os.path.abspath(path)))


def load_gait_spec(path: str) -> GaitSpec:
    return GaitSpec.from_dict(load_json(path))


def load_run_configs(paths: List[str]) -> List[RunConfig]:
    return [load_run_config(p) for p in paths]
