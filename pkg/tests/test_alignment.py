import math

import numpy as np
import pytest

from covis_fusion.alignment import (align_views, background_weight, filter_background, icp_baseline, pair_icp,
                                    pair_weights, phase1_align, phase2_align)
from covis_fusion.geometry import Pose2, compose, inverse, rre, rte
from covis_fusion.scene import canonical_spec, simulate_pair
from covis_fusion.separation import select_moving
from covis_fusion.utils.clustering import clustered_mask
from covis_fusion.utils.config import AlignConfig, SeparationConfig, SimConfig
from covis_fusion.utils.errors import InsufficientPairsError, NoCorrespondencesError
from covis_fusion.utils.interfaces import SourceKind

from .conftest import box_outline

VEHICLES = [(15.0, 3.0, 0.0), (30.0, -3.5, 0.2), (45.0, 4.0, -0.1)]


def _pairs(truth, noise=0.0, seed=0, vehicles=VEHICLES):
    """Ego outlines and the same outlines seen from a CAV whose frame maps into Ego by ``truth``."""
    rng = np.random.default_rng(seed)
    to_cav = inverse(truth)
    pairs = []
    for x, y, yaw in vehicles:
        ego = box_outline(x, y, yaw)
        cav = to_cav.apply(ego) + rng.normal(0.0, noise, size=ego.shape)
        pairs.append((ego, cav))
    return pairs


def _lines(x_lo=-60, x_hi=60):
    xs = np.arange(x_lo, x_hi + 1, 1.0)
    return np.vstack([np.column_stack([xs, np.full_like(xs, 7.0)]), np.column_stack([xs, np.full_like(xs, -7.0)])])


def test_identity_alignment():
    result = align_views(_pairs(Pose2()), np.zeros((0, 2)), np.zeros((0, 2)))
    assert rre(result.transform, Pose2()) < 1e-9
    assert rte(result.transform, Pose2()) < 1e-9


@pytest.mark.parametrize('truth', [Pose2(0.3, 4.0, -2.0), Pose2(-1.2, 25.0, 10.0), Pose2(math.pi, 40.0, 0.0)])
def test_noise_free_pairs_recover_truth(truth):
    "exact correspondences recover the generating transform"
    result = align_views(_pairs(truth), np.zeros((0, 2)), np.zeros((0, 2)))
    assert rre(result.transform, truth) < 1e-6
    assert rte(result.transform, truth) < 1e-6
    assert result.phase1_iterations == 1
    assert not result.low_confidence


def test_phase1_stop_rule():
    "phase 1 stops at the first mean distance within d_max, or when the budget is spent"
    truth = Pose2(0.2, 5.0, 1.0)
    for cfg in (AlignConfig(), AlignConfig(d_max=1e-9), AlignConfig(d_max=0.05, max_total_iters=20)):
        result = phase1_align(_pairs(truth, noise=0.1, seed=3), cfg)
        trace = result.distance_trace
        assert result.iterations == len(trace) <= cfg.phase1_budget
        assert all(d > cfg.d_max for d in trace[:-1])
        if len(trace) < cfg.phase1_budget:
            assert trace[-1] <= cfg.d_max
    assert phase1_align(_pairs(truth, noise=0.1, seed=3), AlignConfig(d_max=1e-9)).iterations == 30


def test_phase1_budget_override():
    result = phase1_align(_pairs(Pose2(0.1, 2.0, 0.0), noise=0.1), AlignConfig(d_max=1e-9), budget=4)
    assert result.iterations == 4


def test_weights():
    assert pair_weights([0.0, 0.5, 1.0]) == (1.0, math.exp(0.5), math.e)
    assert background_weight(1) == math.e
    assert background_weight(4) == pytest.approx(math.exp(0.25))
    result = align_views(_pairs(Pose2(0.1, 3.0, 0.0)), _lines(), _lines(), scores=[0.2, 0.9, 0.4])
    assert result.pair_weights == (math.exp(0.2), math.exp(0.9), math.exp(0.4))
    assert result.background_weight == pytest.approx(math.exp(1.0 / 3.0))


def test_phase2_objective_never_increases():
    truth = Pose2(0.05, 20.0, 0.0)
    bg_ego = _lines(-60, 80)
    bg_cav = inverse(truth).apply(bg_ego) + np.random.default_rng(2).normal(0, 0.05, bg_ego.shape)
    pairs = _pairs(truth, noise=0.1, seed=4)
    result = align_views(pairs, bg_ego, bg_cav, scores=[0.9, 0.8, 0.7])
    trace = result.objective_trace
    assert len(trace) >= 1
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    assert result.iterations <= AlignConfig().max_total_iters
    assert rte(result.transform, truth) < 0.2


def test_phase2_rejects_a_start_with_no_inliers():
    pairs = _pairs(Pose2())
    with pytest.raises(NoCorrespondencesError):
        phase2_align(pairs, _lines(), _lines(), Pose2(0.0, 1000.0, 0.0))


def test_background_cannot_fix_translation_along_the_road():
    "parallel roadside lines leave plain ICP at the identity; matched vehicles pin the offset"
    truth = Pose2(0.0, 20.0, 0.0)
    bg = _lines()
    baseline = icp_baseline(bg, bg)
    assert rte(baseline, truth) > 5.0
    result = align_views(_pairs(truth), bg, bg)
    assert rte(result.transform, truth) < 0.1
    assert rre(result.transform, truth) < 0.5


def _l_shape(x, y, yaw):
    arm_a = np.column_stack([np.arange(0, 4.01, 0.25), np.zeros(17)])
    arm_b = np.column_stack([np.zeros(8), np.arange(0.25, 2.01, 0.25)])
    return Pose2(yaw, x, y).apply(np.vstack([arm_a, arm_b]))


def test_icp_baseline_small_rotation():
    ego = np.vstack([_l_shape(0.0, 8.0, 0.0), _l_shape(7.0, -4.0, 2.0), _l_shape(-7.0, -4.0, -2.2)])
    truth = Pose2(math.radians(3.0), 0.0, 0.0)
    cav = inverse(truth).apply(ego)
    estimate = icp_baseline(ego, cav)
    assert rre(estimate, truth) < 1e-3
    assert rte(estimate, truth) < 1e-3


def test_icp_baseline_identical_sets():
    pts = _l_shape(1.0, 2.0, 0.4)
    estimate = icp_baseline(pts, pts)
    assert rte(estimate, Pose2()) < 1e-12 and rre(estimate, Pose2()) < 1e-9


def test_icp_baseline_needs_points():
    with pytest.raises(NoCorrespondencesError):
        icp_baseline(np.zeros((0, 2)), _lines())
    with pytest.raises(NoCorrespondencesError):
        icp_baseline(_lines(), [])


def test_insufficient_pairs():
    with pytest.raises(InsufficientPairsError):
        phase1_align([])
    with pytest.raises(InsufficientPairsError):
        phase1_align([(np.array([[1.0, 0.0], [2.0, 0.0]]), np.array([[1.0, 0.0], [2.0, 0.0]]))])
    with pytest.raises(InsufficientPairsError):
        align_views([(box_outline(10, 0), np.zeros((0, 2))), (box_outline(20, 0), box_outline(20, 0))],
                    np.zeros((0, 2)), np.zeros((0, 2)))


def test_single_pair_alignment():
    "one pair of three or more points is enough"
    truth = Pose2(0.1, 3.0, -1.0)
    result = align_views(_pairs(truth, vehicles=[(20.0, 0.0, 0.3)]), np.zeros((0, 2)), np.zeros((0, 2)))
    assert rte(result.transform, truth) < 0.5


def test_collinear_pair_is_low_confidence():
    ego = np.column_stack([np.arange(10.0, 14.0, 0.5), np.zeros(8)])
    result = phase1_align([(ego, ego - [1.0, 0.0])])
    assert result.low_confidence


def test_equivariance():
    "moving both views by G conjugates the estimate by G"
    truth = Pose2(0.4, 12.0, -3.0)
    g = Pose2(-0.7, 5.0, 9.0)
    pairs = _pairs(truth, noise=0.05, seed=8)
    bg_ego = _lines(-40, 80)
    bg_cav = inverse(truth).apply(bg_ego)
    base = align_views(pairs, bg_ego, bg_cav).transform
    moved = align_views([(g.apply(e), g.apply(c)) for e, c in pairs], g.apply(bg_ego), g.apply(bg_cav)).transform
    expected = compose(compose(g, base), inverse(g))
    assert rre(moved, expected) < 1e-6
    assert rte(moved, expected) < 1e-6


def test_pair_icp_recovers_truth():
    truth = Pose2(-0.3, 8.0, 2.0)
    estimate = pair_icp(_pairs(truth), scores=[1.0, 0.5, 0.2])
    assert rte(estimate, truth) < 1e-6


def test_filter_background_drops_isolated_points():
    lines = _lines()
    isolated = np.array([[0.0, 30.0], [25.0, -40.0], [-50.0, 20.0]])
    kept = filter_background(np.vstack([lines, isolated]))
    assert kept.shape == lines.shape
    assert filter_background(np.zeros((0, 2))).shape == (0, 2)


@pytest.mark.slow
def test_background_filter_drops_clutter():
    "clutter at 5 returns per frame rarely survives the background density filter"
    assert SimConfig().clutter_rate == 5.0
    align, separation = AlignConfig(), SeparationConfig()
    clutter = kept_total = 0
    for seed in range(100):
        pair = simulate_pair(canonical_spec('straight_heavy', seed))
        for frame in (pair.ego_frame, pair.cav_frame):
            _, stationary, _ = select_moving(frame, separation)
            kept = clustered_mask(stationary.xy, align.bg_eps, align.bg_min_pts)
            np.testing.assert_array_equal(filter_background(stationary, align), stationary.xy[kept])
            clutter += int(np.sum(stationary.source_kind[kept] == int(SourceKind.CLUTTER)))
            kept_total += int(kept.sum())
    assert kept_total > 1000
    assert clutter < 0.02 * kept_total
