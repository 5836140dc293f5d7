import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covis_fusion.scene import EGO_ID, canonical_spec, generate_scene, observe, simulate_pair, suite_spec
from covis_fusion.separation import (SinusoidModel, assign_points, bbox_mask, build_frustum, classify_points,
                                     cluster_moving, fit_stationary_sinusoid, moving_mask, select_moving,
                                     separate_frame, spatial_doppler_filter)
from covis_fusion.utils.config import SeparationConfig, SimConfig
from covis_fusion.utils.errors import FitFailureError, InvalidParamError
from covis_fusion.utils.interfaces import CameraIntrinsics, Detection, RadarScan, SourceKind
from covis_fusion.utils.types import ScenarioSpec, SensorFrame, VehicleCluster

from .conftest import unit_descriptor

INTRINSICS = CameraIntrinsics()


def _synthetic_scan(seed=0, v_t=10.0, n_static=80, n_moving=20):
    rng = np.random.default_rng(seed)
    az = rng.uniform(-1.0, 1.0, n_static + n_moving)
    r = rng.uniform(5.0, 60.0, az.size)
    v_r = -v_t * np.cos(az)
    offset = rng.uniform(2.0, 8.0, n_moving) * rng.choice([-1.0, 1.0], n_moving)
    v_r[n_static:] += offset
    kinds = np.r_[np.zeros(n_static), np.ones(n_moving)].astype(np.int8)
    return RadarScan(np.column_stack([r * np.cos(az), r * np.sin(az)]), v_r, kinds)


def _det(u_min, u_max, depth, score=0.9, v=(0.0, 720.0)):
    return Detection((u_min, v[0], u_max, v[1]), depth, score, unit_descriptor(int(depth * 10)))


def test_odometry_speed_is_taken_as_given():
    model = fit_stationary_sinusoid(_synthetic_scan(), odometry_v_t=12.5)
    assert model.v_t == 12.5


def test_ransac_recovers_speed():
    "one-point RANSAC finds the curve despite a fifth of the points moving"
    scan = _synthetic_scan()
    model = fit_stationary_sinusoid(scan, seed=0)
    assert model.v_t == pytest.approx(10.0, abs=1e-6)
    moving, stationary = classify_points(scan, model)
    assert len(moving) == 20 and len(stationary) == 80
    assert np.all(moving.source_kind == 1)


def test_all_stationary_scan_is_all_inliers():
    scan = _synthetic_scan(n_moving=0)
    model = fit_stationary_sinusoid(scan, seed=3)
    assert model.inliers(scan).all()


def test_parked_observer_flags_any_doppler():
    "with zero speed the curve is zero and any fast point is moving"
    scan = RadarScan([[10, 0], [10, 1], [20, -2]], [0.1, 3.0, -0.2])
    model = SinusoidModel(0.0, 0.0, 0.5)
    np.testing.assert_array_equal(model.predict(scan.azimuth), 0.0)
    moving, stationary = classify_points(scan, model)
    assert len(moving) == 1 and moving.v_r[0] == 3.0
    assert len(stationary) == 2


def test_too_few_points_for_ransac():
    with pytest.raises(InvalidParamError):
        fit_stationary_sinusoid(_synthetic_scan(n_static=5, n_moving=0))


def test_no_consensus_is_fit_failure():
    "scattered velocities leave no hypothesis with half the points"
    az = np.zeros(10)
    scan = RadarScan(np.column_stack([np.linspace(5, 50, 10), az]), -3.0 * np.arange(10))
    with pytest.raises(FitFailureError):
        fit_stationary_sinusoid(scan, seed=1)


@settings(max_examples=30)
@given(st.integers(0, 2 ** 31), st.floats(0.0, 20.0))
def test_classification_partitions_scan(seed, v_t):
    "moving and stationary are disjoint and together cover the scan"
    scan = _synthetic_scan(seed)
    moving, stationary = classify_points(scan, SinusoidModel(v_t, 0.0, 0.5))
    assert len(moving) + len(stationary) == len(scan)
    both = np.concatenate([moving.xy, stationary.xy])
    assert np.unique(both, axis=0).shape[0] == len(scan)


def test_classify_empty_scan():
    moving, stationary = classify_points(RadarScan.empty(), SinusoidModel(5.0, 0.0, 0.5))
    assert len(moving) == 0 and len(stationary) == 0


def test_noise_free_straight_road_classification():
    "on a straight road every vehicle return moves and every background return is stationary"
    config = SeparationConfig()
    for seed in range(3):
        pair = simulate_pair(canonical_spec('straight_heavy', seed), SimConfig.noise_free())
        for frame in (pair.ego_frame, pair.cav_frame):
            moving, stationary, model = select_moving(frame, config)
            assert model.v_t == frame.ego_speed
            assert np.all(moving.source_kind == int(SourceKind.VEHICLE))
            assert np.all(stationary.source_kind == int(SourceKind.BACKGROUND))


def test_frustum_symmetric_for_centered_box():
    det = _det(540.0, 740.0, 20.0)
    f = build_frustum(det, INTRINSICS, 0.1)
    assert f.az_lo == pytest.approx(-f.az_hi, abs=1e-12)
    assert f.az_hi == pytest.approx(math.atan(100.0 / 640.0))
    assert (f.depth_lo, f.depth_hi) == pytest.approx((19.9, 20.1))


def test_frustum_clipped_at_max_range():
    f = build_frustum(_det(540.0, 740.0, 99.0), INTRINSICS, 2.0, max_range=100.0)
    assert f.depth_hi == 100.0


def test_frustum_beyond_max_range_is_empty():
    f = build_frustum(_det(540.0, 740.0, 103.0), INTRINSICS, 2.0, max_range=100.0)
    assert f.is_empty
    assert not f.contains(_movers([55.0, 99.0, 100.0], [0.0, 0.0, 0.0])).any()
    # rows far above the horizon keep the bbox from claiming anything either
    det = _det(540.0, 740.0, 103.0, v=(0.0, 1.0))
    assert assign_points(_movers([99.0] * 5, [0.0] * 5), [det], INTRINSICS, 2.0, max_range=100.0) == []


def _movers(ranges, azimuths, v_r=-4.0):
    r, a = np.asarray(ranges, float), np.asarray(azimuths, float)
    return RadarScan(np.column_stack([r * np.cos(a), r * np.sin(a)]), np.full(r.size, v_r))


def test_assign_points_single_detection():
    "points inside the only frustum form one cluster"
    movers = _movers(np.linspace(19.5, 20.5, 10), np.linspace(-0.05, 0.05, 10))
    clusters = assign_points(movers, [_det(540.0, 740.0, 20.0, v=(300.0, 400.0))], INTRINSICS, 2.0)
    assert len(clusters) == 1
    assert len(clusters[0]) == 10 and clusters[0].detection_index == 0


def test_assign_points_without_detections():
    assert assign_points(_movers([10.0] * 5, [0.0] * 5), [], INTRINSICS, 2.0) == []


def test_conflicting_claim_goes_to_nearest_depth():
    "a point claimed by two detections goes to the closer depth center"
    near, far = _det(540.0, 740.0, 20.0), _det(540.0, 740.0, 22.0)
    movers = _movers([21.2, 21.3, 21.4, 19.0, 19.1, 19.2], [0.0] * 6)
    clusters = assign_points(movers, [near, far], INTRINSICS, 2.0)
    owners = {c.detection_index: sorted(np.round(c.points.range, 6)) for c in clusters}
    assert owners[1] == [21.2, 21.3, 21.4]
    assert owners[0] == [19.0, 19.1, 19.2]


def test_equal_depth_conflict_goes_to_higher_score():
    low, high = _det(540.0, 740.0, 20.0, score=0.6), _det(540.0, 740.0, 20.0, score=0.95)
    clusters = assign_points(_movers([20.0, 20.1, 19.9], [0.0] * 3), [low, high], INTRINSICS, 2.0)
    assert [c.detection_index for c in clusters] == [1]


def _ranked_owner(moving, detections, delta_d):
    """Per-point owner by nearest depth center, then higher score, then lower index; -1 when unclaimed."""
    frustums = [build_frustum(d, INTRINSICS, delta_d) for d in detections]
    owners = []
    for p in range(len(moving)):
        point = moving.subset([p])
        best = None
        for k, (det, f) in enumerate(zip(detections, frustums)):
            if not (bbox_mask(point, det, INTRINSICS)[0] or f.contains(point)[0]):
                continue
            key = (abs(point.range[0] - f.depth_center), -det.score, k)
            best = key if best is None or key < best else best
        owners.append(-1 if best is None else best[2])
    return np.array(owners)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_assignment_matches_per_point_ranking(seed):
    rng = np.random.default_rng(seed)
    detections = []
    for _ in range(rng.integers(1, 5)):
        u0 = rng.uniform(420.0, 760.0)
        detections.append(_det(u0, u0 + rng.uniform(40.0, 200.0), rng.choice([18.0, 20.0, 22.0]),
                               score=rng.choice([0.6, 0.9]), v=(370.0, 420.0)))
    movers = _movers(rng.uniform(14.0, 26.0, 60), rng.uniform(-0.35, 0.35, 60))

    expected = _ranked_owner(movers, detections, 2.0)
    clusters = assign_points(movers, detections, INTRINSICS, 2.0, min_cluster_size=1)
    got = {c.detection_index: np.sort(c.points.range) for c in clusters}
    for k in range(len(detections)):
        want = np.sort(movers.range[expected == k])
        if want.size == 0:
            assert k not in got
        else:
            np.testing.assert_array_equal(got[k], want)


def test_clusters_are_disjoint_on_simulated_frames():
    config = SeparationConfig()
    pair = simulate_pair(canonical_spec('straight_heavy', 9))
    frame = pair.ego_frame
    moving, _, _ = select_moving(frame, config)
    clusters = cluster_moving(frame, moving, config)
    pts = np.concatenate([c.xy for c in clusters]) if clusters else np.zeros((0, 2))
    assert np.unique(pts, axis=0).shape[0] == pts.shape[0] <= len(moving)
    assert len({c.detection_index for c in clusters}) == len(clusters)


def _blob(seed, n=12, center=(20.0, 0.0)):
    rng = np.random.default_rng(seed)
    xy = np.asarray(center) + rng.uniform(-0.6, 0.6, size=(n, 2))
    return xy, np.full(n, -6.0) + rng.uniform(-0.2, 0.2, n)


def test_filter_drops_outlier():
    xy, v = _blob(0)
    xy = np.vstack([xy, [[30.0, 5.0]]])
    v = np.r_[v, -6.0]
    kept = spatial_doppler_filter(VehicleCluster(0, RadarScan(xy, v)), 1.0, 1.0, 3)
    assert len(kept) == 12
    assert not np.any(np.all(kept.xy == [30.0, 5.0], axis=1))


def test_filter_drops_doppler_outlier():
    "a point in place but at the wrong velocity is not part of the vehicle"
    xy, v = _blob(1)
    xy = np.vstack([xy, [[20.0, 0.0]]])
    v = np.r_[v, 4.0]
    kept = spatial_doppler_filter(VehicleCluster(0, RadarScan(xy, v)), 1.0, 1.0, 3)
    assert len(kept) == 12 and np.all(kept.points.v_r < 0)


def test_filter_small_cluster_is_discarded():
    assert spatial_doppler_filter(VehicleCluster(0, RadarScan([[1, 0], [1.1, 0]], [0, 0])), 1.0, 1.0, 3) is None


@settings(max_examples=25)
@given(st.integers(0, 2 ** 31))
def test_filter_is_idempotent(seed):
    "filtering a filtered cluster keeps every point"
    rng = np.random.default_rng(seed)
    xy_a, v_a = _blob(seed)
    xy_b, v_b = _blob(seed + 1, n=6, center=(22.5, 1.5))
    junk = rng.uniform(10, 40, size=(3, 2))
    xy = np.vstack([xy_a, xy_b, junk])
    v = np.r_[v_a, v_b, rng.uniform(-10, 10, 3)]
    once = spatial_doppler_filter(VehicleCluster(2, RadarScan(xy, v)), 1.0, 1.0, 3)
    assert once is not None
    twice = spatial_doppler_filter(once, 1.0, 1.0, 3)
    assert twice.points.equals(once.points)
    assert twice.detection_index == 2


def test_ransac_failure_falls_back_to_odometry():
    "without odometry a failed fit is logged and the vehicle speed is used"
    scan = RadarScan(np.column_stack([np.linspace(5, 50, 4), np.zeros(4)]), np.zeros(4))
    frame = SensorFrame(0, SimConfig().sensor(), INTRINSICS, 7.0, [], scan)
    moving, stationary, model = select_moving(frame, SeparationConfig(use_odometry=False))
    assert model.v_t == 7.0
    assert len(moving) == 4 and len(stationary) == 0


def test_separate_frame_shape_and_determinism():
    pair = simulate_pair(canonical_spec('intersection_heavy', 2))
    a = separate_frame(pair.cav_frame, frame_id=5)
    b = separate_frame(pair.cav_frame, frame_id=5)
    assert a.wire_equals(b)
    assert a.frame_id == 5
    config = SeparationConfig()
    clustered = sum(len(c) for c in a.clusters)
    assert clustered + a.background.shape[0] <= len(pair.cav_frame.radar)
    for c in a.clusters:
        assert len(c) >= config.min_cluster_size
        assert 0 <= c.detection_index < len(a.detections)


@pytest.mark.slow
def test_clusters_carry_their_detections_vehicle():
    hits = total = 0
    for seed in range(100):
        pair = simulate_pair(ScenarioSpec(n_vehicles=2, seed=seed))
        for frame in (pair.ego_frame, pair.cav_frame):
            processed = separate_frame(frame, seed=seed)
            for cluster in processed.clusters:
                total += 1
                hits += cluster.majority_source() == processed.detection_of(cluster).truth_id
    assert total > 50
    assert hits >= 0.95 * total


@pytest.mark.slow
def test_ransac_speed_on_simulated_frames():
    close = frames = 0
    for seed in range(100):
        frame = simulate_pair(canonical_spec('straight_light', seed)).ego_frame
        if np.mean(frame.radar.source_kind == int(SourceKind.BACKGROUND)) < 0.6:
            continue
        frames += 1
        model = fit_stationary_sinusoid(frame.radar, theta=frame.sensor.mount_yaw_offset, seed=seed)
        close += abs(model.v_t - frame.ego_speed) <= 0.1
    assert frames >= 50
    assert close >= 0.95 * frames


def _own_radial_speed(world, frame):
    """Radial speed of each return's own vehicle along the line of sight; 0 for everything else."""
    own = np.zeros(len(frame.radar))
    rotation = frame.sensor_pose.rotation
    for i in np.flatnonzero(frame.radar.source_kind == int(SourceKind.VEHICLE)):
        xy = frame.radar.xy[i]
        velocity = world.vehicle(int(frame.radar.source_id[i])).velocity @ rotation
        own[i] = xy @ velocity / np.hypot(xy[0], xy[1])
    return own


def _moving_agreement(sim, margin, n_frames=100):
    config = SeparationConfig()
    agree = total = 0
    elapsed = 0.0
    for index in range(n_frames):
        world = generate_scene(suite_spec('mixed', 23, index))
        frame = observe(world, EGO_ID, sim)
        start = time.perf_counter()
        _, _, model = select_moving(frame, config)
        elapsed += time.perf_counter() - start
        is_moving = moving_mask(frame.radar, model)
        kind = frame.radar.source_kind
        # clutter has no moving label; slow or tangential movers sit on the stationary curve
        scored = (kind != int(SourceKind.CLUTTER)) & (np.abs(_own_radial_speed(world, frame)) > config.tau_v + margin)
        scored |= kind == int(SourceKind.BACKGROUND)
        truth = kind == int(SourceKind.VEHICLE)
        agree += int(np.sum(is_moving[scored] == truth[scored]))
        total += int(scored.sum())
    assert total > 1000
    return agree / total, elapsed


@pytest.mark.slow
def test_moving_split_agrees_with_truth_at_default_noise():
    sim = SimConfig()
    agreement, elapsed = _moving_agreement(sim, 3 * sim.velocity_noise_sigma)
    assert agreement >= 0.99
    assert elapsed < 5.0


@pytest.mark.slow
def test_moving_split_agrees_with_truth_without_noise():
    agreement, _ = _moving_agreement(SimConfig.noise_free(), 1e-9)
    assert agreement >= 0.999


@pytest.mark.slow
def test_vehicle_points_fall_in_their_detection_region():
    "5% depth noise, delta_d = 2: a vehicle's returns land in its bbox or frustum"
    inside = total = 0
    for seed in range(100):
        pair = simulate_pair(canonical_spec('straight_heavy', seed))
        for frame in (pair.ego_frame, pair.cav_frame):
            radar = frame.radar
            for det in frame.detections:
                own = radar.subset((radar.source_kind == int(SourceKind.VEHICLE)) & (radar.source_id == det.truth_id))
                frustum = build_frustum(det, frame.intrinsics, 2.0, frame.sensor.max_range)
                inside += int(np.sum(bbox_mask(own, det, frame.intrinsics) | frustum.contains(own)))
                total += len(own)
    assert total > 1000
    assert inside >= 0.95 * total


@pytest.mark.slow
def test_density_filter_leaves_little_clutter_in_clusters():
    assert SimConfig().clutter_rate == 5.0
    clutter = points = 0
    for seed in range(100):
        pair = simulate_pair(canonical_spec('straight_heavy', seed))
        for frame in (pair.ego_frame, pair.cav_frame):
            for cluster in separate_frame(frame, seed=seed).clusters:
                clutter += int(np.sum(cluster.points.source_kind == int(SourceKind.CLUTTER)))
                points += len(cluster)
    assert points > 1000
    assert clutter < 0.02 * points
