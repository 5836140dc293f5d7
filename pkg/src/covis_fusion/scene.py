"""
Deterministic two-viewpoint traffic simulator.

Worlds are laid out on a planar road network; each observing vehicle carries a
co-mounted radar and camera whose frame is the vehicle pose rotated by the mount
offset. Radar returns are sampled on sensor-facing surfaces, occlusion-tested
against vehicles and buildings, and labelled with their true source.
"""
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from shapely.geometry import Polygon

from .geometry import Pose2, as_points
from .utils.config import SimConfig
from .utils.constants import (
    DESCRIPTOR_DIM,
    LANE_WIDTH_M,
    MAX_PLACEMENT_ATTEMPTS,
    MAX_VEHICLE_SPEED,
    MIN_VEHICLE_SPEED,
    WORLD_EXTENT_M,
)
from .utils.errors import InvalidParamError, PlacementFailureError
from .utils.interfaces import Detection, RadarScan, SourceKind, VehicleTruth
from .utils.logger import logger
from .utils.types import DrivingMode, FramePair, RoadType, ScenarioSpec, SensorFrame, Traffic, WorldTruth
from .utils.validation_utils import validate_function_params

EGO_ID = 0
CAV_ID = 1

# independent random streams derived from the scenario seed
_LAYOUT_STREAM = 0
_RADAR_STREAMS = (1, 2)
_CAMERA_STREAMS = (3, 4)
_DESCRIPTOR_STREAMS = (5, 6)

FENCE_OFFSET_M = 2.5
BUILDING_SETBACK_M = 6.0
BUILDING_DEPTH_M = 12.0
CAMERA_FACE_SPACING_M = 0.25
MIN_CAMERA_VISIBLE_FRACTION = 0.3
PLACEMENT_MARGIN_M = 1.0
JUNCTION_CLEARANCE_M = 3.0

CANONICAL_SPECS: Dict[str, ScenarioSpec] = {
    'straight_light': ScenarioSpec(RoadType.STRAIGHT, None, Traffic.LIGHT),
    'straight_heavy': ScenarioSpec(RoadType.STRAIGHT, None, Traffic.HEAVY),
    'intersection_light': ScenarioSpec(RoadType.INTERSECTION, None, Traffic.LIGHT),
    'intersection_heavy': ScenarioSpec(RoadType.INTERSECTION, None, Traffic.HEAVY),
    't_junction_light': ScenarioSpec(RoadType.T_JUNCTION, None, Traffic.LIGHT),
    't_junction_heavy': ScenarioSpec(RoadType.T_JUNCTION, None, Traffic.HEAVY),
}

SUITES = ('easy', 'hard', 'mixed')

def stream_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(s) for s in stream]]))

def derive_seed(seed: int, *stream: int) -> int:
    return int(np.random.SeedSequence([int(seed), *[int(s) for s in stream]]).generate_state(1)[0])

def canonical_spec(name: str, seed: int = 0) -> ScenarioSpec:
    if name not in CANONICAL_SPECS:
        raise InvalidParamError(f"Unknown scenario {name!r}; expected one of {sorted(CANONICAL_SPECS)}")
    return CANONICAL_SPECS[name].with_seed(seed)

def valid_driving_modes(road_type: RoadType) -> List[DrivingMode]:
    if road_type == RoadType.STRAIGHT:
        return [DrivingMode.SAME, DrivingMode.OPPOSITE]
    return [DrivingMode.SAME, DrivingMode.OPPOSITE, DrivingMode.VERTICAL]

def suite_spec(suite: str, seed: int, index: int) -> ScenarioSpec:
    """Scenario for frame ``index`` of a suite; a pure function of (suite, seed, index)."""
    frame_seed = derive_seed(seed, index)
    if suite == 'easy':
        return ScenarioSpec(RoadType.STRAIGHT, None, Traffic.LIGHT, frame_seed, DrivingMode.SAME)
    if suite == 'hard':
        rng = stream_rng(seed, index, 99)
        road = list(RoadType)[int(rng.integers(len(RoadType)))]
        modes = valid_driving_modes(road)
        mode = modes[int(rng.integers(len(modes)))]
        return ScenarioSpec(road, None, Traffic.HEAVY, frame_seed, mode)
    if suite == 'mixed':
        names = list(CANONICAL_SPECS)
        return canonical_spec(names[index % len(names)], frame_seed)
    raise InvalidParamError(f"Unknown suite {suite!r}; expected one of {list(SUITES)}")

# Road layout

def _half_width(lanes: int) -> float:
    return lanes * LANE_WIDTH_M / 2.0

def _lane_offsets(lanes: int) -> List[float]:
    w = _half_width(lanes)
    return [-w + LANE_WIDTH_M * (k + 0.5) for k in range(lanes)]

def _rect(x0: float, x1: float, y0: float, y1: float) -> NDArray[np.float64]:
    """Axis-aligned rectangle corners, counter-clockwise."""
    return np.array([[x1, y1], [x0, y1], [x0, y0], [x1, y0]], dtype=np.float64)

def _roadside(road_type: RoadType, lanes: int) -> NDArray[np.float64]:
    w = _half_width(lanes)
    e = WORLD_EXTENT_M
    segments: List[Tuple[Tuple[float, float], Tuple[float, float]]] = []
    for off in (w, w + FENCE_OFFSET_M):
        if road_type == RoadType.STRAIGHT:
            segments += [((-e, off), (e, off)), ((-e, -off), (e, -off))]
        elif road_type == RoadType.INTERSECTION:
            for s in (-1.0, 1.0):
                segments += [((-e, s * off), (-off, s * off)), ((off, s * off), (e, s * off))]
                segments += [((s * off, -e), (s * off, -off)), ((s * off, off), (s * off, e))]
        else:
            segments += [((-e, -off), (e, -off)), ((-e, off), (-off, off)), ((off, off), (e, off))]
            segments += [((-off, off), (-off, e)), ((off, off), (off, e))]
    return np.array(segments, dtype=np.float64)

def _building_row(rng: np.random.Generator, lo: float, hi: float, skip: Optional[Tuple[float, float]]) -> List[Tuple[float, float]]:
    """Spans [a, b] of building frontage along one road side, avoiding ``skip``."""
    spans = []
    pos = lo + float(rng.uniform(0.0, 8.0))
    while pos < hi:
        length = float(rng.uniform(12.0, 30.0))
        end = min(pos + length, hi)
        if skip is None or end <= skip[0] or pos >= skip[1]:
            spans.append((pos, end))
        pos = end + float(rng.uniform(4.0, 12.0))
    return spans

def _buildings(rng: np.random.Generator, road_type: RoadType, lanes: int) -> List[NDArray[np.float64]]:
    s0 = _half_width(lanes) + BUILDING_SETBACK_M
    s1 = s0 + BUILDING_DEPTH_M
    e = WORLD_EXTENT_M
    buildings = []
    for side in (-1.0, 1.0):
        crossing = road_type == RoadType.INTERSECTION or (road_type == RoadType.T_JUNCTION and side > 0)
        for a, b in _building_row(rng, -e, e, (-s1, s1) if crossing else None):
            buildings.append(_rect(a, b, s0, s1) if side > 0 else _rect(a, b, -s1, -s0))
    if road_type != RoadType.STRAIGHT:
        for side in (-1.0, 1.0):
            y_lo = -e if road_type == RoadType.INTERSECTION else s0
            for a, b in _building_row(rng, y_lo, e, (-s0, s0)):
                buildings.append(_rect(s0, s1, a, b) if side > 0 else _rect(-s1, -s0, a, b))
    return buildings

# Vehicle placement

def _footprint(pose: Pose2, length: float, width: float, margin: float = 0.0) -> Polygon:
    hl, hw = 0.5 * length + margin, 0.5 * width + margin
    return Polygon(pose.apply(np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])))

def _x_lane_pose(x: float, lane_y: float) -> Pose2:
    return Pose2(0.0 if lane_y < 0 else math.pi, x, lane_y)

def _y_lane_pose(y: float, lane_x: float) -> Pose2:
    return Pose2(math.pi / 2.0 if lane_x > 0 else -math.pi / 2.0, lane_x, y)

class _Placer:
    def __init__(self, spec: ScenarioSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.lanes = _lane_offsets(spec.lanes)
        self.half_width = _half_width(spec.lanes)
        self.vehicles: List[VehicleTruth] = []
        self.polygons: List[Polygon] = []

    def _dims(self) -> Tuple[float, float]:
        return float(self.rng.uniform(4.2, 5.0)), float(self.rng.uniform(1.8, 2.0))

    def _speed(self) -> float:
        return float(self.rng.uniform(MIN_VEHICLE_SPEED, MAX_VEHICLE_SPEED))

    def _free(self, poly: Polygon) -> bool:
        return not any(poly.intersects(p) for p in self.polygons)

    def place(self, vehicle_id: int, propose) -> VehicleTruth:
        for attempt in range(MAX_PLACEMENT_ATTEMPTS):
            pose = propose()
            length, width = self._dims()
            poly = _footprint(pose, length, width, PLACEMENT_MARGIN_M)
            if self._free(poly):
                vehicle = VehicleTruth(vehicle_id, pose, self._speed(), length, width,
                                       int(self.rng.integers(0, 2 ** 31 - 1)))
                self.vehicles.append(vehicle)
                self.polygons.append(poly)
                return vehicle
        logger.info(f"Could not place vehicle {vehicle_id} after {MAX_PLACEMENT_ATTEMPTS} attempts")
        raise PlacementFailureError(
            f"Vehicle {vehicle_id} could not be placed without overlap in {MAX_PLACEMENT_ATTEMPTS} attempts")

    def lanes_heading(self, positive: bool) -> List[float]:
        return [y for y in self.lanes if (y < 0) == positive]

    def choose(self, values: Sequence[float]) -> float:
        return float(values[int(self.rng.integers(len(values)))])

    def propose_ego(self) -> Pose2:
        return _x_lane_pose(float(self.rng.uniform(-45.0, -30.0)), self.choose(self.lanes_heading(True)))

    def propose_cav(self, ego: VehicleTruth) -> Pose2:
        mode = self.spec.driving_mode
        if mode == DrivingMode.SAME:
            x = ego.pose.tx + float(self.rng.uniform(10.0, 25.0))
            return _x_lane_pose(x, self.choose(self.lanes_heading(True)))
        if mode == DrivingMode.OPPOSITE:
            x = ego.pose.tx + float(self.rng.uniform(35.0, 60.0))
            return _x_lane_pose(x, self.choose(self.lanes_heading(False)))
        # approaching the junction from the +y branch, heading -y
        lane_x = self.choose([x for x in self.lanes if x < 0])
        return _y_lane_pose(float(self.rng.uniform(25.0, 40.0)), lane_x)

    def propose_other(self, ego: VehicleTruth) -> Pose2:
        road_type = self.spec.road_type
        clear = self.half_width + JUNCTION_CLEARANCE_M
        on_cross_road = road_type != RoadType.STRAIGHT and self.rng.random() < 0.35
        if on_cross_road:
            lo = -40.0 if road_type == RoadType.INTERSECTION else clear
            y = float(self.rng.uniform(lo, 60.0))
            while road_type == RoadType.INTERSECTION and abs(y) < clear:
                y = float(self.rng.uniform(lo, 60.0))
            return _y_lane_pose(y, self.choose(self.lanes))
        x = float(self.rng.uniform(ego.pose.tx + 6.0, ego.pose.tx + 90.0))
        if road_type != RoadType.STRAIGHT and abs(x) < clear:
            x = clear + (clear - abs(x)) if x >= 0 else -clear - (clear - abs(x))
        return _x_lane_pose(x, self.choose(self.lanes))

def _vehicle_count(spec: ScenarioSpec, rng: np.random.Generator) -> int:
    if spec.n_vehicles is not None:
        return spec.n_vehicles
    if spec.traffic == Traffic.LIGHT:
        return int(rng.integers(3, 6))
    return int(rng.integers(7, 13))

def generate_scene(spec: ScenarioSpec) -> WorldTruth:
    """
    Lay out a world for ``spec``: Ego (id 0), CAV (id 1) and the remaining traffic.

    Raises:
        InvalidParamError: fewer than two vehicles, bad lane count, or a crossing
            driving mode on a straight road
        PlacementFailureError: a vehicle cannot be placed without overlap
    """
    if spec.n_vehicles is not None:
        validate_function_params([
            {'input': spec.n_vehicles, 'param_name': 'n_vehicles', 'is_int': True, 'min_value': 2},
        ], 'generate_scene')
    validate_function_params([
        {'input': spec.lanes, 'param_name': 'lanes', 'is_int': True, 'min_value': 2, 'max_value': 10},
    ], 'generate_scene')
    if spec.lanes % 2:
        raise InvalidParamError(f"lanes must be even, got {spec.lanes}")
    if spec.driving_mode not in valid_driving_modes(spec.road_type):
        raise InvalidParamError(f"Driving mode {spec.driving_mode.value} needs a crossing road, "
                                f"got {spec.road_type.value}")

    rng = stream_rng(spec.seed, _LAYOUT_STREAM)
    count = _vehicle_count(spec, rng)
    placer = _Placer(spec, rng)
    ego = placer.place(EGO_ID, placer.propose_ego)
    placer.place(CAV_ID, lambda: placer.propose_cav(ego))
    for vid in range(2, count):
        placer.place(vid, lambda: placer.propose_other(ego))

    world = WorldTruth(spec, placer.vehicles, _roadside(spec.road_type, spec.lanes),
                       _buildings(rng, spec.road_type, spec.lanes))
    logger.debug(f"Generated {spec.road_type.value} world with {count} vehicles, "
                 f"{len(world.buildings)} buildings (seed={spec.seed})")
    return world

# Sensing

def sensor_pose_of(vehicle: VehicleTruth, config: SimConfig) -> Pose2:
    """World pose of the sensor frame; the vehicle heading reads as mount_yaw_offset in it."""
    return Pose2(vehicle.pose.yaw - config.mount_yaw_offset, vehicle.pose.tx, vehicle.pose.ty)

def _edges(polygon: NDArray) -> NDArray[np.float64]:
    return np.stack([polygon, np.roll(polygon, -1, axis=0)], axis=1)

def _facing_edges(polygon: NDArray, origin: NDArray) -> NDArray[np.float64]:
    """Edges of a counter-clockwise polygon whose outward normal points at ``origin``."""
    edges = _edges(polygon)
    d = edges[:, 1] - edges[:, 0]
    normals = np.stack([d[:, 1], -d[:, 0]], axis=1)
    facing = np.einsum('ij,ij->i', normals, origin - edges[:, 0]) > 0.0
    return edges[facing]

def _sample_segments(segments: NDArray, spacing: float, rng: Optional[np.random.Generator]) -> NDArray[np.float64]:
    out = []
    for a, b in segments:
        length = float(np.hypot(*(b - a)))
        if length <= 0.0:
            continue
        phase = float(rng.uniform(0.0, spacing)) if rng is not None else 0.5 * spacing
        t = np.arange(phase, length, spacing)
        out.append(a + np.outer(t / length, b - a))
    if not out:
        return np.zeros((0, 2))
    return np.concatenate(out)

def _blocked(origin: NDArray, targets: NDArray, edges: NDArray) -> NDArray[np.bool_]:
    """True where the sight line from origin to a target crosses any occluder edge."""
    if targets.shape[0] == 0 or edges.shape[0] == 0:
        return np.zeros(targets.shape[0], dtype=bool)
    ray = (targets - origin)[:, None, :] * (1.0 - 1e-6)
    a = edges[None, :, 0, :]
    e = edges[None, :, 1, :] - a
    ao = a - origin
    denom = ray[..., 0] * e[..., 1] - ray[..., 1] * e[..., 0]
    with np.errstate(divide='ignore', invalid='ignore'):
        t = (ao[..., 0] * e[..., 1] - ao[..., 1] * e[..., 0]) / denom
        u = (ao[..., 0] * ray[..., 1] - ao[..., 1] * ray[..., 0]) / denom
    hit = (np.abs(denom) > 1e-12) & (t >= 0.0) & (t <= 1.0) & (u >= 0.0) & (u <= 1.0)
    return hit.any(axis=1)

def _occluders(world: WorldTruth, exclude: Sequence[int]) -> NDArray[np.float64]:
    edges = [_edges(v.corners()) for v in world.vehicles if v.id not in exclude]
    edges += [_edges(b) for b in world.buildings]
    if not edges:
        return np.zeros((0, 2, 2))
    return np.concatenate(edges)

def _observer(world: WorldTruth, observer: int) -> VehicleTruth:
    vehicle = world.vehicle(observer)
    if vehicle is None:
        raise InvalidParamError(f"Observer {observer} is not in the world")
    return vehicle

def radar_scan(world: WorldTruth, observer: int, config: Optional[SimConfig] = None,
               rng: Optional[np.random.Generator] = None) -> RadarScan:
    """
    Simulated radar frame of ``observer`` in its sensor frame.

    Radial velocities are exact before noise: stationary returns follow
    v_r = -u . v_obs and vehicle returns v_r = u . (v_target - v_obs).
    """
    config = config or SimConfig()
    vehicle = _observer(world, observer)
    if rng is None:
        rng = stream_rng(world.seed, _RADAR_STREAMS[0] if observer == EGO_ID else _RADAR_STREAMS[1], observer)
    sensor = config.sensor()
    pose = sensor_pose_of(vehicle, config)
    origin = pose.translation
    occluders = _occluders(world, exclude=[observer])

    chunks: List[Tuple[NDArray, NDArray, int, int]] = []  # world points, world velocities, kind, id
    bg = [_sample_segments(world.roadside, config.background_spacing, rng)]
    bg += [_sample_segments(_facing_edges(b, origin), config.background_spacing, rng) for b in world.buildings]
    bg_points = np.concatenate(bg) if bg else np.zeros((0, 2))
    chunks.append((bg_points, np.zeros((bg_points.shape[0], 2)), int(SourceKind.BACKGROUND), -1))
    for other in world.vehicles:
        if other.id == observer:
            continue
        pts = _sample_segments(_facing_edges(other.corners(), origin), config.vehicle_spacing, rng)
        chunks.append((pts, np.tile(other.velocity, (pts.shape[0], 1)), int(SourceKind.VEHICLE), other.id))

    world_pts = np.concatenate([c[0] for c in chunks])
    world_vel = np.concatenate([c[1] for c in chunks])
    kinds = np.concatenate([np.full(c[0].shape[0], c[2], dtype=np.int8) for c in chunks])
    ids = np.concatenate([np.full(c[0].shape[0], c[3], dtype=np.int32) for c in chunks])

    local = pose.inverse().apply(world_pts)
    ranges = np.hypot(local[:, 0], local[:, 1])
    azimuth = np.arctan2(local[:, 1], local[:, 0])
    in_view = (ranges > 0.5) & (ranges <= sensor.max_range) & (np.abs(azimuth) <= 0.5 * sensor.fov)
    idx = np.flatnonzero(in_view)
    idx = idx[~_blocked(origin, world_pts[idx], occluders)]

    local, ranges, azimuth = local[idx], ranges[idx], azimuth[idx]
    # row vectors: v @ R == (R^T v)^T, i.e. world velocities expressed in the sensor frame
    rel_vel = (world_vel[idx] - vehicle.velocity) @ pose.rotation
    unit = local / ranges[:, None]
    v_r = np.einsum('ij,ij->i', unit, rel_vel)

    n = idx.size
    if sensor.range_noise_sigma > 0 or sensor.azimuth_noise_sigma > 0:
        ranges = np.maximum(ranges + rng.normal(0.0, sensor.range_noise_sigma, n), 0.1)
        azimuth = azimuth + rng.normal(0.0, sensor.azimuth_noise_sigma, n)
        local = np.stack([ranges * np.cos(azimuth), ranges * np.sin(azimuth)], axis=1)
    if sensor.velocity_noise_sigma > 0:
        v_r = v_r + rng.normal(0.0, sensor.velocity_noise_sigma, n)

    scan = RadarScan(local, v_r, kinds[idx], ids[idx])
    clutter = _clutter(sensor, rng)
    logger.trace(f"radar_scan observer={observer}: {len(scan)} surface points, {len(clutter)} clutter")
    return RadarScan.concat([scan, clutter])

def _clutter(sensor, rng: np.random.Generator) -> RadarScan:
    count = int(rng.poisson(sensor.clutter_rate)) if sensor.clutter_rate > 0 else 0
    if count == 0:
        return RadarScan.empty()
    r = rng.uniform(2.0, sensor.max_range, count)
    w = rng.uniform(-0.5 * sensor.fov, 0.5 * sensor.fov, count)
    v = rng.uniform(-sensor.clutter_velocity_max, sensor.clutter_velocity_max, count)
    xy = np.stack([r * np.cos(w), r * np.sin(w)], axis=1)
    return RadarScan(xy, v, np.full(count, int(SourceKind.CLUTTER), dtype=np.int8), np.full(count, -1, dtype=np.int32))

def descriptor_for(vehicle: VehicleTruth, view_seed: int, noise_sigma: float) -> NDArray[np.float64]:
    """Unit appearance descriptor: a per-vehicle base direction plus per-view Gaussian noise."""
    validate_function_params([
        {'input': noise_sigma, 'param_name': 'noise_sigma', 'non_negative': True},
    ], 'descriptor_for')
    base = np.random.default_rng(vehicle.descriptor_seed).normal(size=DESCRIPTOR_DIM)
    base /= np.linalg.norm(base)
    if noise_sigma > 0:
        base = base + np.random.default_rng(view_seed).normal(0.0, noise_sigma, DESCRIPTOR_DIM)
    return base / np.linalg.norm(base)

def visible_fraction(world: WorldTruth, observer: int, target: VehicleTruth, origin: NDArray) -> float:
    faces = _facing_edges(target.corners(), origin)
    samples = _sample_segments(faces, CAMERA_FACE_SPACING_M, None)
    if samples.shape[0] == 0:
        return 0.0
    blocked = _blocked(origin, samples, _occluders(world, exclude=[observer, target.id]))
    return float(1.0 - blocked.mean())

def camera_detect(world: WorldTruth, observer: int, config: Optional[SimConfig] = None,
                  rng: Optional[np.random.Generator] = None) -> List[Detection]:
    """One Detection per sufficiently unoccluded vehicle inside the camera view, minus simulated misses."""
    config = config or SimConfig()
    vehicle = _observer(world, observer)
    if rng is None:
        rng = stream_rng(world.seed, _CAMERA_STREAMS[0] if observer == EGO_ID else _CAMERA_STREAMS[1], observer)
    stream = _DESCRIPTOR_STREAMS[0] if observer == EGO_ID else _DESCRIPTOR_STREAMS[1]
    k = config.intrinsics()
    pose = sensor_pose_of(vehicle, config)
    origin = pose.translation
    to_local = pose.inverse()

    detections = []
    for target in world.vehicles:
        if target.id == observer:
            continue
        center = to_local.apply(target.pose.translation[None, :])[0]
        true_range = float(np.hypot(*center))
        if true_range > config.max_range or abs(math.atan2(center[1], center[0])) > k.half_fov:
            continue
        corners = to_local.apply(target.corners())
        if np.any(corners[:, 0] <= 0.5):
            continue
        if visible_fraction(world, observer, target, origin) < MIN_CAMERA_VISIBLE_FRACTION:
            continue

        u = np.clip(k.project_u(corners), 0.0, float(k.width))
        u_min, u_max = float(u.min()), float(u.max())
        if u_max - u_min < 1.0:
            continue
        v_min, v_max = k.vehicle_rows(true_range)

        # draw every random number before the miss test so streams do not shift with miss_rate
        depth_noise = float(rng.normal(0.0, config.depth_noise_frac * true_range)) if config.depth_noise_frac > 0 else 0.0
        score_noise = float(rng.normal(0.0, 0.05))
        missed = rng.random() < config.miss_rate
        if missed:
            continue
        depth = max(true_range + depth_noise, 0.5)
        score = float(np.clip(1.0 - 0.5 * true_range / config.max_range + score_noise, 0.5, 1.0))
        view_seed = derive_seed(world.seed, stream, target.id)
        detections.append(Detection((u_min, v_min, u_max, v_max), depth, score,
                                    descriptor_for(target, view_seed, config.descriptor_noise_sigma),
                                    truth_id=target.id))
    logger.trace(f"camera_detect observer={observer}: {len(detections)} detections")
    return detections

def observe(world: WorldTruth, observer: int, config: Optional[SimConfig] = None) -> SensorFrame:
    config = config or SimConfig()
    vehicle = _observer(world, observer)
    return SensorFrame(
        observer_id=observer,
        sensor=config.sensor(),
        intrinsics=config.intrinsics(),
        ego_speed=vehicle.speed,
        detections=camera_detect(world, observer, config),
        radar=radar_scan(world, observer, config),
        sensor_pose=sensor_pose_of(vehicle, config),
    )

def truth_transform(world: WorldTruth, config: Optional[SimConfig] = None) -> Pose2:
    """CAV sensor frame -> Ego sensor frame."""
    config = config or SimConfig()
    return sensor_pose_of(world.ego, config).inverse() @ sensor_pose_of(world.cav, config)

def simulate_pair(spec: ScenarioSpec, config: Optional[SimConfig] = None, frame_id: int = 0) -> FramePair:
    config = config or SimConfig()
    world = generate_scene(spec)
    ego_frame = observe(world, EGO_ID, config)
    cav_frame = observe(world, CAV_ID, config)
    ego_ids = {d.truth_id for d in ego_frame.detections}
    covis = frozenset((d.truth_id, d.truth_id) for d in cav_frame.detections
                      if d.truth_id in ego_ids)
    logger.debug(f"simulate_pair frame={frame_id}: {len(ego_frame.detections)} ego / "
                 f"{len(cav_frame.detections)} cav detections, {len(covis)} co-visible")
    return FramePair(frame_id, spec, ego_frame, cav_frame, truth_transform(world, config), covis)

