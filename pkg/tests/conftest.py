import math
from typing import Optional, Sequence, Tuple

import numpy as np
import pytest

from covis_fusion.geometry import Pose2
from covis_fusion.utils.config import FusionConfig, SimConfig
from covis_fusion.utils.constants import DESCRIPTOR_DIM
from covis_fusion.utils.interfaces import CameraIntrinsics, Detection, RadarScan, SensorConfig, SourceKind
from covis_fusion.utils.logger import LogLevel, logger
from covis_fusion.utils.types import ProcessedFrame, VehicleCluster


@pytest.fixture(autouse=True, scope='session')
def quiet_logger():
    logger.set_log_level(LogLevel.WARN)
    yield


@pytest.fixture
def noise_free_config() -> FusionConfig:
    return FusionConfig(sim=SimConfig.noise_free())


def unit_descriptor(seed: int) -> np.ndarray:
    d = np.random.default_rng(seed).standard_normal(DESCRIPTOR_DIM)
    return d / np.linalg.norm(d)


def box_outline(cx: float, cy: float, yaw: float = 0.0, length: float = 4.6, width: float = 1.9,
                spacing: float = 0.5) -> np.ndarray:
    """Points along a vehicle footprint outline in some frame."""
    hl, hw = length / 2, width / 2
    xs = np.arange(-hl, hl + 1e-9, spacing)
    ys = np.arange(-hw, hw + 1e-9, spacing)
    local = np.concatenate([
        np.column_stack([xs, np.full_like(xs, hw)]),
        np.column_stack([xs, np.full_like(xs, -hw)]),
        np.column_stack([np.full_like(ys, hl), ys]),
        np.column_stack([np.full_like(ys, -hl), ys]),
    ])
    return Pose2(yaw, cx, cy).apply(local)


def make_detection(xy: Tuple[float, float], descriptor: np.ndarray, truth_id: Optional[int] = None,
                   intrinsics: CameraIntrinsics = CameraIntrinsics()) -> Detection:
    x, y = xy
    depth = math.hypot(x, y)
    u = float(intrinsics.project_u(np.array([[x, y]]))[0])
    v_min, v_max = intrinsics.vehicle_rows(depth)
    return Detection((u - 40.0, v_min, u + 40.0, v_max), depth, 0.9, descriptor, truth_id)


def make_frame(centroids: Sequence[Tuple[float, float]], descriptors: Sequence[np.ndarray],
               truth_ids: Optional[Sequence[int]] = None, frame_id: int = 0,
               background: Optional[np.ndarray] = None) -> ProcessedFrame:
    """A processed frame with one small cluster per detection, centered on each centroid."""
    detections, clusters = [], []
    offsets = np.array([[-0.4, -0.3], [0.4, -0.3], [0.4, 0.3], [-0.4, 0.3]])
    for k, (c, d) in enumerate(zip(centroids, descriptors)):
        tid = None if truth_ids is None else truth_ids[k]
        detections.append(make_detection(c, d, tid))
        xy = np.asarray(c, dtype=np.float64) + offsets
        scan = RadarScan(xy, np.full(4, -5.0), np.full(4, int(SourceKind.VEHICLE), dtype=np.int8),
                         np.full(4, -1 if tid is None else tid, dtype=np.int32))
        clusters.append(VehicleCluster(k, scan))
    return ProcessedFrame(frame_id, SensorConfig(), CameraIntrinsics(), 12.0, detections, clusters,
                          np.zeros((0, 2)) if background is None else background)
