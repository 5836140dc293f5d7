import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values

from .constants import BACKGROUND_SPACING_M, DEFAULT_HIDDEN_WIDTH, ENV_PREFIX, VEHICLE_EDGE_SPACING_M
from .errors import ConfigError, InvalidParamError
from .interfaces import CameraIntrinsics, SensorConfig
from .logger import logger
from .types import DrivingMode, RoadType, ScenarioSpec, Traffic

PathLike = Union[str, Path]

@dataclass(frozen=True)
class SeparationConfig:
    use_odometry: bool = True
    tau_v: float = 0.5
    delta_d: float = 2.0
    eps_xy: float = 1.0
    eps_v: float = 1.0
    min_pts: int = 3
    min_cluster_size: int = 3
    ransac_iterations: int = 64
    min_consensus: float = 0.5

    def __post_init__(self):
        _require_positive(self, 'tau_v', 'delta_d', 'eps_xy', 'eps_v', 'min_pts', 'min_cluster_size',
                          'ransac_iterations')
        if not 0.0 < self.min_consensus <= 1.0:
            raise InvalidParamError(f"min_consensus must be in (0, 1], got {self.min_consensus}")

@dataclass(frozen=True)
class AlignConfig:
    """max_total_iters is shared by both phases; phase 1 may use at most half of it."""
    max_total_iters: int = 60
    d_max: float = 0.3
    nn_reject_radius: float = 3.0
    bg_eps: float = 1.5
    bg_min_pts: int = 3
    tolerance: float = 1e-6

    def __post_init__(self):
        _require_positive(self, 'max_total_iters', 'd_max', 'nn_reject_radius', 'bg_eps', 'bg_min_pts',
                          'tolerance')
        if self.max_total_iters < 2:
            raise InvalidParamError(f"max_total_iters must be >= 2, got {self.max_total_iters}")

    @property
    def phase1_budget(self) -> int:
        return self.max_total_iters // 2

@dataclass(frozen=True)
class MatchConfig:
    steps: int = 4
    threshold: float = 0.5
    hidden_width: int = DEFAULT_HIDDEN_WIDTH
    learning_rate: float = 1e-3
    epochs: int = 40
    batch_size: int = 8

    def __post_init__(self):
        _require_positive(self, 'steps', 'hidden_width', 'learning_rate', 'epochs', 'batch_size')
        if not 0.0 <= self.threshold:
            raise InvalidParamError(f"threshold must be >= 0, got {self.threshold}")

@dataclass(frozen=True)
class SimConfig:
    fov_deg: float = 120.0
    max_range: float = 100.0
    mount_yaw_offset: float = 0.0
    range_noise_sigma: float = 0.05
    velocity_noise_sigma: float = 0.1
    azimuth_noise_sigma: float = 0.0
    clutter_rate: float = 5.0
    clutter_velocity_max: float = 20.0
    depth_noise_frac: float = 0.05
    miss_rate: float = 0.0
    descriptor_noise_sigma: float = 0.05
    vehicle_spacing: float = VEHICLE_EDGE_SPACING_M
    background_spacing: float = BACKGROUND_SPACING_M
    camera_fx: float = 640.0
    camera_width: int = 1280
    camera_height: int = 720
    camera_mount_height: float = 1.6

    def __post_init__(self):
        _require_positive(self, 'fov_deg', 'max_range', 'vehicle_spacing', 'background_spacing', 'camera_fx',
                          'camera_width', 'camera_height', 'camera_mount_height')
        for name in ('range_noise_sigma', 'velocity_noise_sigma', 'azimuth_noise_sigma', 'clutter_rate',
                     'clutter_velocity_max', 'depth_noise_frac', 'descriptor_noise_sigma'):
            if getattr(self, name) < 0:
                raise InvalidParamError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.miss_rate <= 1.0:
            raise InvalidParamError(f"miss_rate must be in [0, 1], got {self.miss_rate}")
        if self.fov_deg > 360.0:
            raise InvalidParamError(f"fov_deg must be <= 360, got {self.fov_deg}")

    def sensor(self) -> SensorConfig:
        return SensorConfig(
            mount_yaw_offset=self.mount_yaw_offset,
            fov=math.radians(self.fov_deg),
            max_range=self.max_range,
            range_noise_sigma=self.range_noise_sigma,
            velocity_noise_sigma=self.velocity_noise_sigma,
            clutter_rate=self.clutter_rate,
            azimuth_noise_sigma=self.azimuth_noise_sigma,
            clutter_velocity_max=self.clutter_velocity_max,
        )

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(
            fx=self.camera_fx, fy=self.camera_fx,
            cx=self.camera_width / 2.0, cy=self.camera_height / 2.0,
            width=self.camera_width, height=self.camera_height,
            mount_height=self.camera_mount_height,
        )

    @classmethod
    def noise_free(cls, **changes: Any) -> 'SimConfig':
        base = cls(range_noise_sigma=0.0, velocity_noise_sigma=0.0, azimuth_noise_sigma=0.0, clutter_rate=0.0,
                   depth_noise_frac=0.0, descriptor_noise_sigma=0.0)
        return replace(base, **changes)

@dataclass(frozen=True)
class PipelineConfig:
    link_rate_mbps: float = 100.0
    workers: int = 4
    log_level: str = 'INFO'

    def __post_init__(self):
        _require_positive(self, 'link_rate_mbps', 'workers')

@dataclass(frozen=True)
class FusionConfig:
    separation: SeparationConfig = field(default_factory=SeparationConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def to_flat(self) -> Dict[str, Any]:
        """Flat KEY -> value mapping, the same keys a config file uses."""
        flat: Dict[str, Any] = {}
        for section, prefix in _SECTIONS.items():
            part = getattr(self, section)
            for f in fields(part):
                flat[f"{prefix}_{f.name.upper()}"] = getattr(part, f.name)
        return flat

# section attribute -> key prefix in config files
_SECTIONS = {
    'separation': 'SEP',
    'align': 'ALIGN',
    'match': 'MATCH',
    'sim': 'SIM',
    'pipeline': 'PIPELINE',
}

def _require_positive(obj: Any, *names: str) -> None:
    for name in names:
        value = getattr(obj, name)
        if not value > 0:
            raise InvalidParamError(f"{name} must be positive, got {value}")

def _known_keys(config: FusionConfig) -> Dict[str, Tuple[str, str, type]]:
    keys: Dict[str, Tuple[str, str, type]] = {}
    for section, prefix in _SECTIONS.items():
        part = getattr(config, section)
        for f in fields(part):
            keys[f"{prefix}_{f.name.upper()}"] = (section, f.name, type(getattr(part, f.name)))
    keys['LOG_LEVEL'] = ('pipeline', 'log_level', str)
    return keys

def _coerce(key: str, raw: Any, kind: type) -> Any:
    if isinstance(raw, kind) and not (kind is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ('1', 'true', 'yes', 'on'):
                return True
            if lowered in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError as e:
        raise ConfigError(f"Cannot parse {key}={text!r} as {kind.__name__}", e)

def apply_overrides(config: FusionConfig, values: Mapping[str, Any], source: str = 'overrides') -> FusionConfig:
    """Return a copy of config with KEY=value pairs applied. Unknown keys are an error."""
    known = _known_keys(config)
    changes: Dict[str, Dict[str, Any]] = {}
    for raw_key, raw_value in values.items():
        key = raw_key.strip().upper()
        if key not in known:
            logger.info(f"Unknown config key {key!r} in {source}")
            raise ConfigError(f"Unknown config key {key!r} in {source}")
        if raw_value is None:
            raise ConfigError(f"Config key {key!r} in {source} has no value")
        section, name, kind = known[key]
        changes.setdefault(section, {})[name] = _coerce(key, raw_value, kind)

    try:
        updated = {section: replace(getattr(config, section), **kw) for section, kw in changes.items()}
    except InvalidParamError as e:
        logger.info(f"Invalid config value in {source}", e)
        raise ConfigError(f"Invalid config value in {source}: {e.message}", e)
    return replace(config, **updated)

def parse_assignments(assignments: Optional[list]) -> Dict[str, str]:
    """Parse repeated ``KEY=value`` command-line strings."""
    result: Dict[str, str] = {}
    for item in assignments or []:
        key, sep, value = item.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f"Expected KEY=value, got {item!r}")
        result[key.strip()] = value.strip()
    return result

def load_config(
    path: Optional[PathLike] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> FusionConfig:
    """
    Build the effective configuration.

    Precedence, lowest first: built-in defaults, the KEY=value file at ``path``,
    ``COVIS_``-prefixed environment variables, then explicit ``overrides``.

    Raises:
        ConfigError: unreadable file, unknown key, or a value that fails validation
    """
    config = FusionConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            logger.info(f"Config file not found: {p}")
            raise ConfigError(f"Config file not found: {p}")
        config = apply_overrides(config, dotenv_values(p), source=str(p))
        logger.debug(f"Loaded config file {p}")

    env = os.environ if environ is None else environ
    from_env = {k[len(ENV_PREFIX):]: v for k, v in env.items() if k.startswith(ENV_PREFIX)}
    if from_env:
        config = apply_overrides(config, from_env, source='environment')

    if overrides:
        config = apply_overrides(config, overrides)
    return config

def scenario_from_values(values: Mapping[str, Any], source: str = 'scenario') -> ScenarioSpec:
    allowed = {'ROAD_TYPE', 'N_VEHICLES', 'TRAFFIC', 'SEED', 'DRIVING_MODE', 'LANES'}
    normalized = {k.strip().upper(): v for k, v in values.items()}
    unknown = set(normalized) - allowed
    if unknown:
        raise ConfigError(f"Unknown scenario keys in {source}: {sorted(unknown)}")
    try:
        n_raw = normalized.get('N_VEHICLES')
        spec = ScenarioSpec(
            road_type=RoadType(str(normalized.get('ROAD_TYPE', RoadType.STRAIGHT.value)).strip().lower()),
            n_vehicles=None if n_raw in (None, '') else int(n_raw),
            traffic=Traffic(str(normalized.get('TRAFFIC', Traffic.LIGHT.value)).strip().lower()),
            seed=int(normalized.get('SEED', 0)),
            driving_mode=DrivingMode(str(normalized.get('DRIVING_MODE', DrivingMode.SAME.value)).strip().lower()),
            lanes=int(normalized.get('LANES', 4)),
        )
    except ValueError as e:
        logger.info(f"Invalid scenario in {source}", e)
        raise ConfigError(f"Invalid scenario in {source}: {e}", e)
    return spec

def load_scenario(path: PathLike) -> ScenarioSpec:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"Scenario file not found: {p}")
    return scenario_from_values(dotenv_values(p), source=str(p))
