import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict, Iterator, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray

from ..geometry import Point2, Pose2
from .constants import DESCRIPTOR_DIM, RADAR_POINT_HEIGHT_M, SPEED_LIMIT, VEHICLE_HEIGHT_M
from .errors import InvalidParamError

# Sensor-level records
@dataclass(frozen=True)
class SensorConfig:
    """Radar (and co-mounted camera) setup. mount_yaw_offset is the vehicle heading in the sensor frame."""
    mount_yaw_offset: float = 0.0
    fov: float = math.radians(120.0)
    max_range: float = 100.0
    range_noise_sigma: float = 0.05
    velocity_noise_sigma: float = 0.1
    clutter_rate: float = 5.0
    azimuth_noise_sigma: float = 0.0
    clutter_velocity_max: float = 20.0

    def __post_init__(self):
        if not (0.0 < self.fov <= 2.0 * math.pi + 1e-12):
            raise InvalidParamError(f"fov must be in (0, 2*pi], got {self.fov}")
        if self.max_range <= 0:
            raise InvalidParamError(f"max_range must be positive, got {self.max_range}")
        for name in ('range_noise_sigma', 'velocity_noise_sigma', 'clutter_rate',
                     'azimuth_noise_sigma', 'clutter_velocity_max'):
            if getattr(self, name) < 0:
                raise InvalidParamError(f"{name} must be >= 0, got {getattr(self, name)}")

    def as_tuple(self) -> Tuple[float, ...]:
        return (self.mount_yaw_offset, self.fov, self.max_range, self.range_noise_sigma,
                self.velocity_noise_sigma, self.clutter_rate, self.azimuth_noise_sigma,
                self.clutter_velocity_max)

    def to_json(self) -> Dict[str, float]:
        return {
            'mountYawOffset': self.mount_yaw_offset,
            'fov': self.fov,
            'maxRange': self.max_range,
            'rangeNoiseSigma': self.range_noise_sigma,
            'velocityNoiseSigma': self.velocity_noise_sigma,
            'clutterRate': self.clutter_rate,
            'azimuthNoiseSigma': self.azimuth_noise_sigma,
            'clutterVelocityMax': self.clutter_velocity_max,
        }

@dataclass(frozen=True)
class CameraIntrinsics:
    """1-D pinhole over the BEV plane: u = cx - fx * y / x. Rows follow from fixed heights."""
    fx: float = 640.0
    fy: float = 640.0
    cx: float = 640.0
    cy: float = 360.0
    width: int = 1280
    height: int = 720
    mount_height: float = 1.6

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0 or self.width <= 0 or self.height <= 0:
            raise InvalidParamError("Camera focal lengths and image size must be positive")

    @property
    def half_fov(self) -> float:
        return max(math.atan2(self.cx, self.fx), math.atan2(self.width - self.cx, self.fx))

    @property
    def raw_image_bytes(self) -> int:
        return int(self.width) * int(self.height) * 3

    def project_u(self, xy: NDArray) -> NDArray:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        return self.cx - self.fx * xy[:, 1] / xy[:, 0]

    def azimuth_of_u(self, u: Union[float, NDArray]) -> Union[float, NDArray]:
        return np.arctan((self.cx - np.asarray(u, dtype=np.float64)) / self.fx)

    def row_of(self, ranges: Union[float, NDArray], height: float = RADAR_POINT_HEIGHT_M) -> Union[float, NDArray]:
        """Image row of a BEV point at the given range and height above ground."""
        return self.cy + self.fy * (self.mount_height - height) / np.asarray(ranges, dtype=np.float64)

    def vehicle_rows(self, true_range: float) -> Tuple[float, float]:
        """(v_min, v_max) of a vehicle box: roof line to ground contact."""
        v_top = self.cy + self.fy * (self.mount_height - VEHICLE_HEIGHT_M) / true_range
        v_bottom = self.cy + self.fy * self.mount_height / true_range
        return float(v_top), float(v_bottom)

class SourceKind(IntEnum):
    BACKGROUND = 0
    VEHICLE = 1
    CLUTTER = 2

@dataclass(frozen=True)
class TruthSource:
    kind: SourceKind
    vehicle_id: Optional[int] = None

@dataclass(frozen=True)
class RadarPoint:
    position: Point2
    radial_velocity: float
    truth_source: TruthSource = TruthSource(SourceKind.BACKGROUND)

    @property
    def azimuth(self) -> float:
        return math.atan2(self.position.y, self.position.x)

    @property
    def range(self) -> float:
        return math.hypot(self.position.x, self.position.y)

@dataclass(eq=False)
class RadarScan:
    """Columnar list of radar points in one sensor frame; range and azimuth derive from xy."""
    xy: NDArray[np.float64] = field(default_factory=lambda: np.zeros((0, 2)))
    v_r: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))
    source_kind: NDArray[np.int8] = field(default_factory=lambda: np.zeros(0, dtype=np.int8))
    source_id: NDArray[np.int32] = field(default_factory=lambda: np.zeros(0, dtype=np.int32))

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        n = self.xy.shape[0]
        self.v_r = np.asarray(self.v_r, dtype=np.float64).reshape(-1)
        self.source_kind = np.asarray(self.source_kind, dtype=np.int8).reshape(-1)
        self.source_id = np.asarray(self.source_id, dtype=np.int32).reshape(-1)
        if self.source_kind.size == 0 and n:
            self.source_kind = np.zeros(n, dtype=np.int8)
        if self.source_id.size == 0 and n:
            self.source_id = np.full(n, -1, dtype=np.int32)
        if not (self.v_r.shape[0] == self.source_kind.shape[0] == self.source_id.shape[0] == n):
            raise InvalidParamError("RadarScan columns must have equal length")

    @classmethod
    def empty(cls) -> 'RadarScan':
        return cls()

    @classmethod
    def from_points(cls, points: Sequence[RadarPoint]) -> 'RadarScan':
        if not points:
            return cls.empty()
        return cls(
            xy=np.array([[p.position.x, p.position.y] for p in points]),
            v_r=np.array([p.radial_velocity for p in points]),
            source_kind=np.array([int(p.truth_source.kind) for p in points], dtype=np.int8),
            source_id=np.array([-1 if p.truth_source.vehicle_id is None else p.truth_source.vehicle_id
                                for p in points], dtype=np.int32),
        )

    @classmethod
    def concat(cls, scans: Sequence['RadarScan']) -> 'RadarScan':
        scans = [s for s in scans if len(s)]
        if not scans:
            return cls.empty()
        return cls(
            xy=np.concatenate([s.xy for s in scans]),
            v_r=np.concatenate([s.v_r for s in scans]),
            source_kind=np.concatenate([s.source_kind for s in scans]),
            source_id=np.concatenate([s.source_id for s in scans]),
        )

    def __len__(self) -> int:
        return self.xy.shape[0]

    def __getitem__(self, index: int) -> RadarPoint:
        kind = SourceKind(int(self.source_kind[index]))
        vid = int(self.source_id[index])
        return RadarPoint(
            position=Point2(float(self.xy[index, 0]), float(self.xy[index, 1])),
            radial_velocity=float(self.v_r[index]),
            truth_source=TruthSource(kind, vid if kind == SourceKind.VEHICLE else None),
        )

    def __iter__(self) -> Iterator[RadarPoint]:
        for i in range(len(self)):
            yield self[i]

    @property
    def azimuth(self) -> NDArray[np.float64]:
        return np.arctan2(self.xy[:, 1], self.xy[:, 0])

    @property
    def range(self) -> NDArray[np.float64]:
        return np.hypot(self.xy[:, 0], self.xy[:, 1])

    def subset(self, selector: Union[NDArray, Sequence[int]]) -> 'RadarScan':
        sel = np.asarray(selector)
        return RadarScan(self.xy[sel], self.v_r[sel], self.source_kind[sel], self.source_id[sel])

    def equals(self, other: 'RadarScan') -> bool:
        return (np.array_equal(self.xy, other.xy) and np.array_equal(self.v_r, other.v_r)
                and np.array_equal(self.source_kind, other.source_kind)
                and np.array_equal(self.source_id, other.source_id))

@dataclass(eq=False)
class Detection:
    """Camera-style vehicle observation. truth_id is a simulator-only label."""
    bbox: Tuple[float, float, float, float]
    depth: float
    score: float
    descriptor: NDArray[np.float64]
    truth_id: Optional[int] = None

    def __post_init__(self):
        self.bbox = tuple(float(b) for b in self.bbox)
        u_min, v_min, u_max, v_max = self.bbox
        if not (u_min < u_max and v_min < v_max):
            raise InvalidParamError(f"Detection bbox must satisfy u_min < u_max and v_min < v_max, got {self.bbox}")
        if not self.depth > 0:
            raise InvalidParamError(f"Detection depth must be positive, got {self.depth}")
        if not (0.0 < self.score <= 1.0):
            raise InvalidParamError(f"Detection score must be in (0, 1], got {self.score}")
        self.descriptor = np.asarray(self.descriptor, dtype=np.float64).reshape(-1)
        if self.descriptor.shape[0] != DESCRIPTOR_DIM:
            raise InvalidParamError(f"Detection descriptor must have {DESCRIPTOR_DIM} entries")

    @property
    def u_center(self) -> float:
        return 0.5 * (self.bbox[0] + self.bbox[2])

    def equals(self, other: 'Detection') -> bool:
        return (self.bbox == other.bbox and self.depth == other.depth and self.score == other.score
                and np.array_equal(self.descriptor, other.descriptor) and self.truth_id == other.truth_id)

@dataclass(frozen=True)
class VehicleTruth:
    id: int
    pose: Pose2
    speed: float
    length: float
    width: float
    descriptor_seed: int

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise InvalidParamError(f"Vehicle {self.id} extent must be positive")
        if not (0.0 <= self.speed <= SPEED_LIMIT):
            raise InvalidParamError(f"Vehicle {self.id} speed must be in [0, {SPEED_LIMIT}], got {self.speed}")

    @property
    def extent(self) -> Tuple[float, float]:
        return self.length, self.width

    @property
    def velocity(self) -> NDArray[np.float64]:
        return self.speed * np.array([math.cos(self.pose.yaw), math.sin(self.pose.yaw)])

    def corners(self) -> NDArray[np.float64]:
        """Footprint corners in world frame, counter-clockwise from front-left."""
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        return self.pose.apply(local)

    def to_json(self) -> Dict[str, Any]:
        return {
            'id': self.id, 'pose': self.pose.to_json(), 'speed': self.speed,
            'length': self.length, 'width': self.width, 'descriptorSeed': self.descriptor_seed,
        }

    @classmethod
    def from_json(cls, json: Dict[str, Any]) -> 'VehicleTruth':
        return cls(json['id'], Pose2.from_json(json['pose']), json['speed'],
                   json['length'], json['width'], json['descriptorSeed'])
