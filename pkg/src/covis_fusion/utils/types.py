from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from ..geometry import Point2, Pose2
from .interfaces import CameraIntrinsics, Detection, RadarScan, SensorConfig, VehicleTruth

VehicleID = int

class RoadType(str, Enum):
    STRAIGHT = "straight"
    INTERSECTION = "intersection"
    T_JUNCTION = "t_junction"

class Traffic(str, Enum):
    LIGHT = "light"
    HEAVY = "heavy"

class DrivingMode(str, Enum):
    SAME = "same"
    OPPOSITE = "opposite"
    VERTICAL = "vertical"

class NoFusionReason(str, Enum):
    EMPTY_EGO = "EMPTY_EGO"
    EMPTY_CAV = "EMPTY_CAV"
    NO_MATCHES = "NO_MATCHES"
    INSUFFICIENT_PAIRS = "INSUFFICIENT_PAIRS"
    NO_CORRESPONDENCES = "NO_CORRESPONDENCES"

@dataclass(frozen=True)
class ScenarioSpec:
    road_type: RoadType = RoadType.STRAIGHT
    n_vehicles: Optional[int] = None
    traffic: Traffic = Traffic.LIGHT
    seed: int = 0
    driving_mode: DrivingMode = DrivingMode.SAME
    lanes: int = 4

    def with_seed(self, seed: int) -> 'ScenarioSpec':
        return ScenarioSpec(self.road_type, self.n_vehicles, self.traffic, seed, self.driving_mode, self.lanes)

    @classmethod
    def from_json(cls, json: Dict[str, Any]) -> 'ScenarioSpec':
        return cls(
            road_type=RoadType(json['roadType']),
            n_vehicles=json.get('nVehicles'),
            traffic=Traffic(json.get('traffic', Traffic.LIGHT.value)),
            seed=int(json.get('seed', 0)),
            driving_mode=DrivingMode(json.get('drivingMode', DrivingMode.SAME.value)),
            lanes=int(json.get('lanes', 4)),
        )

    def to_json(self) -> Dict[str, Any]:
        return {
            'roadType': self.road_type.value,
            'nVehicles': self.n_vehicles,
            'traffic': self.traffic.value,
            'seed': self.seed,
            'drivingMode': self.driving_mode.value,
            'lanes': self.lanes,
        }

@dataclass(eq=False)
class WorldTruth:
    """Simulated world: vehicles (Ego first, CAV second), roadside segments and buildings."""
    spec: ScenarioSpec
    vehicles: List[VehicleTruth]
    roadside: NDArray[np.float64]                 # (K, 2, 2) line segments
    buildings: List[NDArray[np.float64]] = field(default_factory=list)   # (4, 2) corners each

    @property
    def seed(self) -> int:
        return self.spec.seed

    @property
    def ego(self) -> VehicleTruth:
        return self.vehicles[0]

    @property
    def cav(self) -> VehicleTruth:
        return self.vehicles[1]

    def vehicle(self, vehicle_id: VehicleID) -> Optional[VehicleTruth]:
        for v in self.vehicles:
            if v.id == vehicle_id:
                return v
        return None

@dataclass(eq=False)
class SensorFrame:
    """One vehicle's raw observation: what it senses plus simulator-only truth."""
    observer_id: VehicleID
    sensor: SensorConfig
    intrinsics: CameraIntrinsics
    ego_speed: float
    detections: List[Detection]
    radar: RadarScan
    sensor_pose: Pose2 = Pose2()  # world pose of the sensor, simulator-only

@dataclass(eq=False)
class FramePair:
    frame_id: int
    spec: ScenarioSpec
    ego_frame: SensorFrame
    cav_frame: SensorFrame
    truth_transform: Pose2                 # maps CAV sensor frame into Ego sensor frame
    truth_covis: FrozenSet[Tuple[VehicleID, VehicleID]]

    @property
    def covisible_ids(self) -> List[VehicleID]:
        return sorted(a for a, _ in self.truth_covis)

@dataclass(eq=False)
class VehicleCluster:
    """Moving radar points attributed to one detection of the same frame."""
    detection_index: int
    points: RadarScan

    @property
    def xy(self) -> NDArray[np.float64]:
        return self.points.xy

    @property
    def centroid(self) -> Point2:
        c = self.points.xy.mean(axis=0)
        return Point2(float(c[0]), float(c[1]))

    @property
    def mean_v_r(self) -> float:
        return float(self.points.v_r.mean())

    def __len__(self) -> int:
        return len(self.points)

    def majority_source(self) -> Optional[VehicleID]:
        """Most frequent vehicle label among the points; simulator-only."""
        ids = self.points.source_id[self.points.source_id >= 0]
        if ids.size == 0:
            return None
        values, counts = np.unique(ids, return_counts=True)
        return int(values[np.argmax(counts)])

@dataclass(eq=False)
class ProcessedFrame:
    """
    A frame after radar separation: detections, their vehicle clusters and the
    stationary background. This is what a CAV transmits.
    """
    frame_id: int
    sensor: SensorConfig
    intrinsics: CameraIntrinsics
    ego_speed: float
    detections: List[Detection]
    clusters: List[VehicleCluster]
    background: NDArray[np.float64] = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64).reshape(-1, 2)

    def detection_of(self, cluster: VehicleCluster) -> Detection:
        return self.detections[cluster.detection_index]

    def cluster_points(self) -> NDArray[np.float64]:
        if not self.clusters:
            return np.zeros((0, 2))
        return np.concatenate([c.xy for c in self.clusters])

    def wire_equals(self, other: 'ProcessedFrame') -> bool:
        """Equality over the fields that are transmitted; simulator labels are ignored."""
        if (self.frame_id != other.frame_id or self.sensor != other.sensor or self.intrinsics != other.intrinsics
                or self.ego_speed != other.ego_speed or len(self.detections) != len(other.detections)
                or len(self.clusters) != len(other.clusters)):
            return False
        for a, b in zip(self.detections, other.detections):
            if a.bbox != b.bbox or a.depth != b.depth or a.score != b.score or not np.array_equal(a.descriptor, b.descriptor):
                return False
        for a, b in zip(self.clusters, other.clusters):
            if (a.detection_index != b.detection_index or not np.array_equal(a.points.xy, b.points.xy)
                    or not np.array_equal(a.points.v_r, b.points.v_r)):
                return False
        return np.array_equal(self.background, other.background)
