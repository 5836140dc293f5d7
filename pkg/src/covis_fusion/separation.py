"""
Moving-vehicle radar separation.

Stationary returns lie on the curve v_r(w) = -v_t * cos(w - theta); anything off it
by more than tau_v is a mover. Movers are attributed to camera detections through
the bbox projection and a depth-bounded frustum, then sanitized with a joint
position/velocity density filter.
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from .utils.clustering import largest_cluster_mask
from .utils.config import SeparationConfig
from .utils.errors import FitFailureError, InvalidParamError
from .utils.interfaces import CameraIntrinsics, Detection, RadarScan
from .utils.logger import logger
from .utils.types import ProcessedFrame, SensorFrame, VehicleCluster
from .utils.validation_utils import validate_function_params

MIN_FIT_POINTS = 8
MIN_HYPOTHESIS_COS = 0.2
MIN_FRUSTUM_DEPTH = 1e-6

@dataclass(frozen=True)
class SinusoidModel:
    v_t: float
    theta: float
    tau_v: float

    def __post_init__(self):
        if self.v_t < 0:
            raise InvalidParamError(f"v_t must be >= 0, got {self.v_t}")
        if self.tau_v <= 0:
            raise InvalidParamError(f"tau_v must be positive, got {self.tau_v}")

    def predict(self, azimuth) -> NDArray[np.float64]:
        azimuth = np.asarray(azimuth, dtype=np.float64)
        return -self.v_t * (np.sin(self.theta) * np.sin(azimuth) + np.cos(self.theta) * np.cos(azimuth))

    def residual(self, scan: RadarScan) -> NDArray[np.float64]:
        return scan.v_r - self.predict(scan.azimuth)

    def inliers(self, scan: RadarScan) -> NDArray[np.bool_]:
        return np.abs(self.residual(scan)) <= self.tau_v

@dataclass(frozen=True)
class Frustum:
    az_lo: float
    az_hi: float
    depth_lo: float
    depth_hi: float

    def __post_init__(self):
        if not self.az_lo < self.az_hi:
            raise InvalidParamError(f"Frustum azimuth interval is empty: [{self.az_lo}, {self.az_hi}]")
        if not 0.0 < self.depth_lo <= self.depth_hi:
            raise InvalidParamError(f"Frustum depth interval must be positive: [{self.depth_lo}, {self.depth_hi}]")

    @property
    def is_empty(self) -> bool:
        return self.depth_lo == self.depth_hi

    @property
    def depth_center(self) -> float:
        return 0.5 * (self.depth_lo + self.depth_hi)

    def contains(self, scan: RadarScan) -> NDArray[np.bool_]:
        if self.is_empty:
            return np.zeros(len(scan), dtype=bool)
        az, r = scan.azimuth, scan.range
        return (az >= self.az_lo) & (az <= self.az_hi) & (r >= self.depth_lo) & (r <= self.depth_hi)

def fit_stationary_sinusoid(
    scan: RadarScan,
    odometry_v_t: Optional[float] = None,
    theta: float = 0.0,
    tau_v: float = 0.5,
    seed: int = 0,
    iterations: int = 64,
    min_consensus: float = 0.5,
) -> SinusoidModel:
    """
    Fit the stationary-return velocity curve.

    With odometry the speed is taken as given and nothing is estimated. Without it,
    a one-point RANSAC proposes v_t = -v_r / cos(w - theta) per sampled point,
    scores by inliers within tau_v, and refines on the best consensus set with
    v_t = -sum(v_r c) / sum(c^2).

    Raises:
        InvalidParamError: fewer than 8 points on the RANSAC path
        FitFailureError: best consensus below ``min_consensus`` of the points
    """
    if odometry_v_t is not None:
        validate_function_params([
            {'input': odometry_v_t, 'param_name': 'odometry_v_t', 'non_negative': True},
        ], 'fit_stationary_sinusoid')
        model = SinusoidModel(float(odometry_v_t), theta, tau_v)
        if len(scan):
            logger.trace(f"Odometry curve v_t={odometry_v_t:.3f}: {model.inliers(scan).mean():.1%} inliers")
        return model

    n = len(scan)
    if n < MIN_FIT_POINTS:
        logger.info(f"fit_stationary_sinusoid needs {MIN_FIT_POINTS} points, got {n}")
        raise InvalidParamError(f"Need at least {MIN_FIT_POINTS} radar points to fit, got {n}")

    c = np.cos(scan.azimuth - theta)
    v_r = scan.v_r
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)[:min(iterations, n)]

    best_count, best_mask = -1, None
    for i in order:
        if abs(c[i]) < MIN_HYPOTHESIS_COS:
            continue
        v_t = -v_r[i] / c[i]
        if v_t < 0:
            continue
        mask = np.abs(v_r + v_t * c) <= tau_v
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask

    if best_mask is None or best_count < min_consensus * n:
        logger.info(f"Stationary curve consensus too small: {max(best_count, 0)}/{n}")
        raise FitFailureError(f"Best consensus {max(best_count, 0)} of {n} points is below {min_consensus:.0%}")

    cs, vs = c[best_mask], v_r[best_mask]
    v_t = max(float(-(vs @ cs) / (cs @ cs)), 0.0)
    logger.debug(f"RANSAC curve fit: v_t={v_t:.4f} with {best_count}/{n} inliers")
    return SinusoidModel(v_t, theta, tau_v)

def classify_points(scan: RadarScan, model: SinusoidModel) -> Tuple[RadarScan, RadarScan]:
    """Split into (moving, stationary); exhaustive and disjoint."""
    moving = moving_mask(scan, model)
    return scan.subset(moving), scan.subset(~moving)

def moving_mask(scan: RadarScan, model: SinusoidModel) -> NDArray[np.bool_]:
    if len(scan) == 0:
        return np.zeros(0, dtype=bool)
    return ~model.inliers(scan)

def build_frustum(det: Detection, intrinsics: CameraIntrinsics, delta_d: float,
                  max_range: float = math.inf) -> Frustum:
    """
    Azimuth from the bbox columns, depth [d - delta_d, d + delta_d] clamped to (0, max_range].
    A detection deeper than max_range + delta_d gets an empty frustum that contains nothing.
    """
    validate_function_params([
        {'input': delta_d, 'param_name': 'delta_d', 'positive': True},
    ], 'build_frustum')
    u_min, _, u_max, _ = det.bbox
    az_hi = float(intrinsics.azimuth_of_u(u_min))
    az_lo = float(intrinsics.azimuth_of_u(u_max))
    hi = min(det.depth + delta_d, max_range)
    lo = max(det.depth - delta_d, MIN_FRUSTUM_DEPTH)
    if lo >= hi:
        logger.trace(f"Detection depth {det.depth:.2f} lies beyond the radar range; empty frustum")
        return Frustum(az_lo, az_hi, hi, hi)
    return Frustum(az_lo, az_hi, lo, hi)

def bbox_mask(scan: RadarScan, det: Detection, intrinsics: CameraIntrinsics) -> NDArray[np.bool_]:
    """Points whose image projection falls inside the detection box."""
    front = scan.xy[:, 0] > 1e-6
    mask = np.zeros(len(scan), dtype=bool)
    if not front.any():
        return mask
    xy = scan.xy[front]
    u = intrinsics.project_u(xy)
    v = intrinsics.row_of(np.hypot(xy[:, 0], xy[:, 1]))
    u_min, v_min, u_max, v_max = det.bbox
    mask[front] = (u >= u_min) & (u <= u_max) & (v >= v_min) & (v <= v_max)
    return mask

def assign_points(
    moving: RadarScan,
    detections: List[Detection],
    intrinsics: CameraIntrinsics,
    delta_d: float,
    max_range: float = math.inf,
    min_cluster_size: int = 3,
) -> List[VehicleCluster]:
    """
    Attribute moving points to detections. A point is a candidate for a detection
    if it projects into the box or lies inside the frustum. Points claimed by several
    detections go to the nearest depth-interval center, then the higher score.
    """
    if not detections or len(moving) == 0:
        return []
    ranges = moving.range
    candidates = np.zeros((len(detections), len(moving)), dtype=bool)
    centers = np.empty(len(detections))
    for k, det in enumerate(detections):
        frustum = build_frustum(det, intrinsics, delta_d, max_range)
        candidates[k] = bbox_mask(moving, det, intrinsics) | frustum.contains(moving)
        centers[k] = frustum.depth_center

    scores = np.array([d.score for d in detections])
    # nearest depth center wins; ties go to the higher score, then the lower index (argmax takes the first)
    cost = np.where(candidates, np.abs(ranges[None, :] - centers[:, None]), np.inf)
    nearest = candidates & (cost == cost.min(axis=0, keepdims=True))
    owner = np.argmax(np.where(nearest, scores[:, None], -np.inf), axis=0)
    owner[~candidates.any(axis=0)] = -1

    clusters = []
    for k in range(len(detections)):
        idx = np.flatnonzero(owner == k)
        if idx.size >= min_cluster_size:
            clusters.append(VehicleCluster(k, moving.subset(idx)))
    return clusters

def spatial_doppler_filter(cluster: VehicleCluster, eps_xy: float, eps_v: float,
                           min_pts: int) -> Optional[VehicleCluster]:
    """Keep the largest density cluster in scaled (x, y, v_r) space; None when nothing survives."""
    validate_function_params([
        {'input': eps_xy, 'param_name': 'eps_xy', 'positive': True},
        {'input': eps_v, 'param_name': 'eps_v', 'positive': True},
        {'input': min_pts, 'param_name': 'min_pts', 'is_int': True, 'min_value': 1},
    ], 'spatial_doppler_filter')
    pts = cluster.points
    if len(pts) < min_pts:
        return None
    features = np.column_stack([pts.xy / eps_xy, pts.v_r / eps_v])
    keep = largest_cluster_mask(features, 1.0, min_pts)
    if not keep.any():
        return None
    return VehicleCluster(cluster.detection_index, pts.subset(keep))

def select_moving(frame: SensorFrame, config: SeparationConfig, seed: int = 0) -> Tuple[RadarScan, RadarScan, SinusoidModel]:
    """Fit the stationary curve and split the scan; falls back to odometry when the fit fails."""
    theta = frame.sensor.mount_yaw_offset
    odometry = frame.ego_speed if config.use_odometry else None
    try:
        model = fit_stationary_sinusoid(frame.radar, odometry, theta, config.tau_v, seed,
                                        config.ransac_iterations, config.min_consensus)
    except (FitFailureError, InvalidParamError) as e:
        if odometry is not None:
            raise
        logger.warn(f"Curve fit failed for observer {frame.observer_id}; using odometry speed", e)
        model = SinusoidModel(frame.ego_speed, theta, config.tau_v)
    moving, stationary = classify_points(frame.radar, model)
    return moving, stationary, model

def cluster_moving(frame: SensorFrame, moving: RadarScan, config: SeparationConfig) -> List[VehicleCluster]:
    raw = assign_points(moving, frame.detections, frame.intrinsics, config.delta_d,
                        frame.sensor.max_range, config.min_cluster_size)
    clusters = []
    for cluster in raw:
        filtered = spatial_doppler_filter(cluster, config.eps_xy, config.eps_v, config.min_pts)
        if filtered is not None and len(filtered) >= config.min_cluster_size:
            clusters.append(filtered)
    return clusters

def separate_frame(frame: SensorFrame, config: Optional[SeparationConfig] = None, seed: int = 0,
                   frame_id: int = 0) -> ProcessedFrame:
    """
    Full separation of one raw frame. The background is every stationary point;
    density filtering of it happens at alignment time.
    """
    config = config or SeparationConfig()
    moving, stationary, _ = select_moving(frame, config, seed)
    clusters = cluster_moving(frame, moving, config)
    logger.debug(f"separate_frame observer={frame.observer_id}: {len(moving)} moving, "
                 f"{len(stationary)} stationary, {len(clusters)} clusters")
    return ProcessedFrame(frame_id, frame.sensor, frame.intrinsics, frame.ego_speed,
                          list(frame.detections), clusters, stationary.xy.copy())
