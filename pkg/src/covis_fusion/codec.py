"""
Binary formats.

Frame message (what a CAV transmits), all little-endian:

    header      4s magic 'CVFM' | u16 version | u16 reserved | u32 frame id | f64 ego speed
    sections    u8 tag | u32 body length | body, tags 1..4 in order, each exactly once
      1 sensor      8 x f64 radar config | 5 x f64 fx, fy, cx, cy, mount height | 2 x u16 width, height
      2 detections  u16 n | n x 4 f32 bbox | n f32 depth | n f32 score | n x 32 f32 descriptor
      3 clusters    u16 k | k u16 detection index | k u16 point count | P x 2 f32 xy | P f32 v_r
      4 background  u32 m | m x 2 f32 xy

Frame-pair record (one dataset file): magic 'CVFP', u16 version, then the scenario,
the truth transform and co-visible ids, and both raw sensor frames at f64 precision
with their simulator labels.
"""
import struct
from typing import List, Tuple

import numpy as np
from numpy.typing import NDArray

from .geometry import Pose2
from .utils.constants import DESCRIPTOR_DIM, FRAME_FORMAT_VERSION, FRAME_MAGIC, PAIR_MAGIC, RAW_POINT_BYTES
from .utils.errors import FusionError, MalformedFrameError
from .utils.interfaces import CameraIntrinsics, Detection, RadarScan, SensorConfig
from .utils.logger import logger
from .utils.types import (
    DrivingMode,
    FramePair,
    ProcessedFrame,
    RoadType,
    ScenarioSpec,
    SensorFrame,
    Traffic,
    VehicleCluster,
)

FrameMessage = ProcessedFrame

TAG_SENSOR = 1
TAG_DETECTIONS = 2
TAG_CLUSTERS = 3
TAG_BACKGROUND = 4

_FRAME_HEADER = struct.Struct('<4sHHId')
_SECTION = struct.Struct('<BI')
_SENSOR = struct.Struct('<8d5d2H')
_PAIR_HEADER = struct.Struct('<4sHIBBBBhQ')

_ROAD_CODES = list(RoadType)
_TRAFFIC_CODES = list(Traffic)
_MODE_CODES = list(DrivingMode)

class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.offset = 0

    def take(self, size: int) -> memoryview:
        if size < 0 or self.offset + size > len(self.data):
            raise MalformedFrameError(f"Truncated input: need {size} bytes at offset {self.offset}, "
                                      f"have {len(self.data) - self.offset}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: struct.Struct) -> tuple:
        return fmt.unpack(self.take(fmt.size))

    def array(self, dtype: str, count: int, shape: Tuple[int, ...] = ()) -> NDArray:
        dt = np.dtype(dtype)
        raw = self.take(dt.itemsize * count)
        arr = np.frombuffer(raw, dtype=dt, count=count)
        return arr.reshape(shape) if shape else arr

    def done(self) -> None:
        if self.offset != len(self.data):
            raise MalformedFrameError(f"{len(self.data) - self.offset} trailing bytes")

def _f32(values) -> bytes:
    return np.ascontiguousarray(values, dtype='<f4').tobytes()

def _sensor_bytes(sensor: SensorConfig, k: CameraIntrinsics) -> bytes:
    return _SENSOR.pack(*sensor.as_tuple(), k.fx, k.fy, k.cx, k.cy, k.mount_height, int(k.width), int(k.height))

def _read_sensor(reader: _Reader) -> Tuple[SensorConfig, CameraIntrinsics]:
    values = reader.unpack(_SENSOR)
    sensor = SensorConfig(*values[:8])
    fx, fy, cx, cy, mount_height, width, height = values[8:]
    return sensor, CameraIntrinsics(fx, fy, cx, cy, width, height, mount_height)

def _section(tag: int, body: bytes) -> bytes:
    return _SECTION.pack(tag, len(body)) + body

def serialize_frame(msg: FrameMessage) -> bytes:
    """Encode a processed frame; simulator labels are not transmitted."""
    n = len(msg.detections)
    if n:
        bbox = np.array([d.bbox for d in msg.detections])
        depth = np.array([d.depth for d in msg.detections])
        score = np.array([d.score for d in msg.detections])
        desc = np.vstack([d.descriptor for d in msg.detections])
    else:
        bbox, depth, score, desc = np.zeros((0, 4)), np.zeros(0), np.zeros(0), np.zeros((0, DESCRIPTOR_DIM))
    detections = struct.pack('<H', n) + _f32(bbox) + _f32(depth) + _f32(score) + _f32(desc)

    k = len(msg.clusters)
    index = np.array([c.detection_index for c in msg.clusters], dtype='<u2')
    sizes = np.array([len(c) for c in msg.clusters], dtype='<u2')
    xy = np.concatenate([c.points.xy for c in msg.clusters]) if k else np.zeros((0, 2))
    v_r = np.concatenate([c.points.v_r for c in msg.clusters]) if k else np.zeros(0)
    clusters = struct.pack('<H', k) + index.tobytes() + sizes.tobytes() + _f32(xy) + _f32(v_r)

    background = struct.pack('<I', msg.background.shape[0]) + _f32(msg.background)

    return b''.join([
        _FRAME_HEADER.pack(FRAME_MAGIC, FRAME_FORMAT_VERSION, 0, msg.frame_id, msg.ego_speed),
        _section(TAG_SENSOR, _sensor_bytes(msg.sensor, msg.intrinsics)),
        _section(TAG_DETECTIONS, detections),
        _section(TAG_CLUSTERS, clusters),
        _section(TAG_BACKGROUND, background),
    ])

def _expect_section(reader: _Reader, tag: int) -> _Reader:
    got, length = reader.unpack(_SECTION)
    if got != tag:
        raise MalformedFrameError(f"Expected section {tag}, found {got}")
    return _Reader(reader.take(length))

def deserialize_frame(data: bytes) -> FrameMessage:
    """
    Decode bytes produced by ``serialize_frame``.

    Raises:
        MalformedFrameError: truncation, bad magic, version mismatch, unexpected
            sections, invalid field values or trailing bytes
    """
    try:
        return _deserialize_frame(data)
    except MalformedFrameError as e:
        logger.debug(f"Rejected frame message: {e.message}")
        raise
    except (FusionError, ValueError) as e:
        logger.debug("Rejected frame message with invalid contents", e)
        raise MalformedFrameError("Frame message contains invalid values", e)

def _deserialize_frame(data: bytes) -> FrameMessage:
    reader = _Reader(data)
    magic, version, _, frame_id, ego_speed = reader.unpack(_FRAME_HEADER)
    if magic != FRAME_MAGIC:
        raise MalformedFrameError(f"Bad magic {bytes(magic)!r}")
    if version != FRAME_FORMAT_VERSION:
        raise MalformedFrameError(f"Unsupported frame version {version}, expected {FRAME_FORMAT_VERSION}")

    body = _expect_section(reader, TAG_SENSOR)
    sensor, intrinsics = _read_sensor(body)
    body.done()

    body = _expect_section(reader, TAG_DETECTIONS)
    (n,) = body.unpack(struct.Struct('<H'))
    bbox = body.array('<f4', 4 * n, (n, 4)).astype(np.float64)
    depth = body.array('<f4', n).astype(np.float64)
    score = body.array('<f4', n).astype(np.float64)
    desc = body.array('<f4', DESCRIPTOR_DIM * n, (n, DESCRIPTOR_DIM)).astype(np.float64)
    body.done()
    detections = [Detection(tuple(bbox[i]), float(depth[i]), float(score[i]), desc[i].copy()) for i in range(n)]

    body = _expect_section(reader, TAG_CLUSTERS)
    (k,) = body.unpack(struct.Struct('<H'))
    index = body.array('<u2', k).astype(np.int64)
    sizes = body.array('<u2', k).astype(np.int64)
    total = int(sizes.sum())
    xy = body.array('<f4', 2 * total, (total, 2)).astype(np.float64)
    v_r = body.array('<f4', total).astype(np.float64)
    body.done()
    if np.any(index >= max(n, 1)) or (k and n == 0):
        raise MalformedFrameError("Cluster refers to a missing detection")
    clusters = []
    start = 0
    for i in range(k):
        stop = start + int(sizes[i])
        clusters.append(VehicleCluster(int(index[i]), RadarScan(xy[start:stop], v_r[start:stop])))
        start = stop

    body = _expect_section(reader, TAG_BACKGROUND)
    (m,) = body.unpack(struct.Struct('<I'))
    background = body.array('<f4', 2 * m, (m, 2)).astype(np.float64)
    body.done()
    reader.done()

    return ProcessedFrame(frame_id, sensor, intrinsics, ego_speed, detections, clusters, background)


# Dataset records

def _raw_frame_bytes(frame: SensorFrame) -> bytes:
    n = len(frame.detections)
    bbox = np.array([d.bbox for d in frame.detections]).reshape(n, 4)
    depth = np.array([d.depth for d in frame.detections])
    score = np.array([d.score for d in frame.detections])
    desc = np.vstack([d.descriptor for d in frame.detections]) if n else np.zeros((0, DESCRIPTOR_DIM))
    truth = np.array([-1 if d.truth_id is None else d.truth_id for d in frame.detections], dtype='<i4')
    radar = frame.radar
    pose = frame.sensor_pose
    return b''.join([
        struct.pack('<Id3d', frame.observer_id, frame.ego_speed, pose.yaw, pose.tx, pose.ty),
        _sensor_bytes(frame.sensor, frame.intrinsics),
        struct.pack('<H', n),
        np.ascontiguousarray(bbox, dtype='<f8').tobytes(), depth.astype('<f8').tobytes(),
        score.astype('<f8').tobytes(), np.ascontiguousarray(desc, dtype='<f8').tobytes(), truth.tobytes(),
        struct.pack('<I', len(radar)),
        np.ascontiguousarray(radar.xy, dtype='<f8').tobytes(), radar.v_r.astype('<f8').tobytes(),
        radar.source_kind.astype('<i1').tobytes(), radar.source_id.astype('<i4').tobytes(),
    ])

def _read_raw_frame(reader: _Reader) -> SensorFrame:
    observer, ego_speed, yaw, tx, ty = reader.unpack(struct.Struct('<Id3d'))
    sensor, intrinsics = _read_sensor(reader)
    (n,) = reader.unpack(struct.Struct('<H'))
    bbox = reader.array('<f8', 4 * n, (n, 4))
    depth = reader.array('<f8', n)
    score = reader.array('<f8', n)
    desc = reader.array('<f8', DESCRIPTOR_DIM * n, (n, DESCRIPTOR_DIM))
    truth = reader.array('<i4', n)
    detections = [Detection(tuple(float(b) for b in bbox[i]), float(depth[i]), float(score[i]), desc[i].copy(),
                            None if truth[i] < 0 else int(truth[i])) for i in range(n)]
    (m,) = reader.unpack(struct.Struct('<I'))
    xy = reader.array('<f8', 2 * m, (m, 2)).copy()
    v_r = reader.array('<f8', m).copy()
    kind = reader.array('<i1', m).copy()
    ids = reader.array('<i4', m).copy()
    return SensorFrame(observer, sensor, intrinsics, ego_speed, detections, RadarScan(xy, v_r, kind, ids),
                       Pose2(yaw, tx, ty))

def serialize_pair(pair: FramePair) -> bytes:
    spec = pair.spec
    covis = sorted(pair.truth_covis)
    t = pair.truth_transform
    return b''.join([
        _PAIR_HEADER.pack(PAIR_MAGIC, FRAME_FORMAT_VERSION, pair.frame_id, _ROAD_CODES.index(spec.road_type),
                          _TRAFFIC_CODES.index(spec.traffic), _MODE_CODES.index(spec.driving_mode), spec.lanes,
                          -1 if spec.n_vehicles is None else spec.n_vehicles, spec.seed),
        struct.pack('<3d', t.yaw, t.tx, t.ty),
        struct.pack('<H', len(covis)),
        b''.join(struct.pack('<II', a, b) for a, b in covis),
        _raw_frame_bytes(pair.ego_frame),
        _raw_frame_bytes(pair.cav_frame),
    ])

def deserialize_pair(data: bytes) -> FramePair:
    """
    Raises:
        MalformedFrameError: truncation, bad magic, version mismatch or trailing bytes
    """
    try:
        reader = _Reader(data)
        magic, version, frame_id, road, traffic, mode, lanes, n_vehicles, seed = reader.unpack(_PAIR_HEADER)
        if magic != PAIR_MAGIC:
            raise MalformedFrameError(f"Bad magic {bytes(magic)!r}")
        if version != FRAME_FORMAT_VERSION:
            raise MalformedFrameError(f"Unsupported record version {version}")
        spec = ScenarioSpec(_ROAD_CODES[road], None if n_vehicles < 0 else n_vehicles, _TRAFFIC_CODES[traffic],
                            seed, _MODE_CODES[mode], lanes)
        yaw, tx, ty = reader.unpack(struct.Struct('<3d'))
        (count,) = reader.unpack(struct.Struct('<H'))
        covis: List[Tuple[int, int]] = [reader.unpack(struct.Struct('<II')) for _ in range(count)]
        ego = _read_raw_frame(reader)
        cav = _read_raw_frame(reader)
        reader.done()
    except MalformedFrameError:
        raise
    except (FusionError, ValueError, IndexError) as e:
        raise MalformedFrameError("Frame-pair record contains invalid values", e)
    return FramePair(frame_id, spec, ego, cav, Pose2(yaw, tx, ty), frozenset(covis))

def payload_size(msg: FrameMessage) -> int:
    return len(serialize_frame(msg))

def raw_equivalent_bytes(frame: SensorFrame) -> int:
    """Bytes needed to share the raw camera image and every raw radar point instead."""
    return frame.intrinsics.raw_image_bytes + RAW_POINT_BYTES * len(frame.radar)
