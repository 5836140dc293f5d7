"""
CAV -> Ego view alignment.

Phase 1 registers only the matched vehicle point sets: a weighted Kabsch on the
pair centroids, then ICP whose correspondences stay inside each matched pair.
Phase 2 continues from that pose with the background added, minimizing a
weighted, truncated squared-distance objective: every correspondence contributes
min(d^2, rho^2) divided by the size of its point set, vehicle pairs weigh
e^score and the background weighs e^(1 / number of pairs).
"""
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .geometry import Pose2, as_points, kabsch2
from .utils.clustering import clustered_mask
from .utils.config import AlignConfig
from .utils.errors import DegenerateInputError, InsufficientPairsError, NoCorrespondencesError
from .utils.interfaces import RadarScan
from .utils.logger import logger
from .utils.types import VehicleCluster

PointSet = Union[VehicleCluster, RadarScan, NDArray]
PointPair = Tuple[PointSet, PointSet]

COLLINEAR_RATIO = 1e-6

@dataclass(frozen=True)
class Phase1Result:
    transform: Pose2
    iterations: int
    distance_trace: Tuple[float, ...]
    low_confidence: bool = False

@dataclass(frozen=True)
class AlignResult:
    transform: Pose2
    phase1_transform: Pose2
    iterations: int
    error: float
    pair_weights: Tuple[float, ...]
    background_weight: float
    phase1_iterations: int = 0
    distance_trace: Tuple[float, ...] = ()
    objective_trace: Tuple[float, ...] = field(default_factory=tuple)
    low_confidence: bool = False

def _xy(points: PointSet) -> NDArray[np.float64]:
    if isinstance(points, (VehicleCluster, RadarScan)):
        return points.xy
    return as_points(points)

def filter_background(points: Union[RadarScan, NDArray], cfg: Optional[AlignConfig] = None) -> NDArray[np.float64]:
    """Keep points that belong to any density cluster (roadsides, buildings); drop isolated returns."""
    cfg = cfg or AlignConfig()
    xy = _xy(points)
    if xy.shape[0] == 0:
        return np.zeros((0, 2))
    return xy[clustered_mask(xy, cfg.bg_eps, cfg.bg_min_pts)]

def pair_weights(scores: Sequence[float]) -> Tuple[float, ...]:
    return tuple(math.exp(float(s)) for s in scores)

def background_weight(n_pairs: int) -> float:
    return math.exp(1.0 / n_pairs)

def _is_collinear(points: NDArray) -> bool:
    if points.shape[0] < 2:
        return True
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    return s[0] == 0.0 or s[-1] <= COLLINEAR_RATIO * s[0]

def _check_pairs(pairs: Sequence[Tuple[NDArray, NDArray]]) -> None:
    enough = len(pairs) >= 2 or (len(pairs) == 1 and min(pairs[0][0].shape[0], pairs[0][1].shape[0]) >= 3)
    if not enough or any(e.shape[0] == 0 or c.shape[0] == 0 for e, c in pairs):
        logger.info(f"Alignment needs 2 matched pairs or 1 pair of 3+ points, got {len(pairs)}")
        raise InsufficientPairsError(f"Not enough matched vehicle pairs to align ({len(pairs)})")

def _initial_pose(pairs: Sequence[Tuple[NDArray, NDArray]], weights: Sequence[float]) -> Pose2:
    ego_c = np.array([e.mean(axis=0) for e, _ in pairs])
    cav_c = np.array([c.mean(axis=0) for _, c in pairs])
    if len(pairs) >= 2:
        try:
            return kabsch2(cav_c, ego_c, weights)
        except DegenerateInputError:
            logger.debug("Pair centroids coincide; starting from a pure translation")
    shift = np.average(ego_c - cav_c, axis=0, weights=weights)
    return Pose2(0.0, shift[0], shift[1])

def _pair_correspondences(trees: Sequence[cKDTree], pairs: Sequence[Tuple[NDArray, NDArray]],
                          pose: Pose2) -> List[Tuple[NDArray, NDArray, NDArray]]:
    """Per pair: (moved CAV points, nearest Ego points within the same pair, distances)."""
    out = []
    for tree, (ego, cav) in zip(trees, pairs):
        moved = pose.apply(cav)
        dist, idx = tree.query(moved)
        out.append((moved, ego[idx], dist))
    return out

def phase1_align(pairs: Sequence[PointPair], cfg: Optional[AlignConfig] = None,
                 weights: Optional[Sequence[float]] = None, budget: Optional[int] = None) -> Phase1Result:
    """
    Pair-constrained ICP from the centroid initialization.

    Iteration k finds correspondences, records their mean distance d_k, then
    re-solves the pose. It stops after min(budget, first k with d_k <= d_max)
    iterations; ``budget`` defaults to half of the total iteration budget.

    Raises:
        InsufficientPairsError: fewer than two pairs and no single pair with 3+ points per side
    """
    cfg = cfg or AlignConfig()
    arrays = [(_xy(e), _xy(c)) for e, c in pairs]
    _check_pairs(arrays)
    w_pair = np.ones(len(arrays)) if weights is None else np.asarray(weights, dtype=np.float64)
    limit = cfg.phase1_budget if budget is None else budget

    pose = _initial_pose(arrays, w_pair)
    cav_all = np.concatenate([c for _, c in arrays])
    low_confidence = _is_collinear(cav_all) or _is_collinear(np.concatenate([e for e, _ in arrays]))
    point_w = np.concatenate([np.full(c.shape[0], w / c.shape[0]) for (_, c), w in zip(arrays, w_pair)])
    trees = [cKDTree(e) for e, _ in arrays]

    trace: List[float] = []
    for k in range(1, limit + 1):
        matches = _pair_correspondences(trees, arrays, pose)
        d_k = float(np.concatenate([m[2] for m in matches]).mean())
        trace.append(d_k)
        try:
            step = kabsch2(np.concatenate([m[0] for m in matches]), np.concatenate([m[1] for m in matches]), point_w)
            pose = step @ pose
        except DegenerateInputError:
            logger.debug("Phase 1 step degenerate; keeping the current pose")
        if d_k <= cfg.d_max:
            break

    logger.debug(f"phase1: {len(trace)} iterations, last mean distance {trace[-1] if trace else float('nan'):.4f}")
    return Phase1Result(pose, len(trace), tuple(trace), low_confidence)

class _Objective:
    """Weighted truncated objective with fixed per-set normalizers."""

    def __init__(self, arrays, bg_ego, bg_cav, w_pairs, w_bg, rho):
        self.arrays = arrays
        self.trees = [cKDTree(e) for e, _ in arrays]
        self.bg_cav = bg_cav
        self.bg_ego = bg_ego
        self.bg_tree = cKDTree(bg_ego) if bg_ego.shape[0] and bg_cav.shape[0] else None
        self.w_pairs = w_pairs
        self.w_bg = w_bg
        self.rho = rho

    def evaluate(self, pose: Pose2):
        """Objective value plus the inlier correspondences and their Kabsch weights."""
        rho2 = self.rho ** 2
        value = 0.0
        src, dst, wts = [], [], []
        for (moved, nearest, dist), w, (_, cav) in zip(_pair_correspondences(self.trees, self.arrays, pose),
                                                      self.w_pairs, self.arrays):
            per_point = w / cav.shape[0]
            value += per_point * float(np.minimum(dist ** 2, rho2).sum())
            inlier = dist <= self.rho
            src.append(moved[inlier])
            dst.append(nearest[inlier])
            wts.append(np.full(int(inlier.sum()), per_point))
        if self.bg_tree is not None:
            moved = pose.apply(self.bg_cav)
            dist, idx = self.bg_tree.query(moved)
            per_point = self.w_bg / self.bg_cav.shape[0]
            value += per_point * float(np.minimum(dist ** 2, rho2).sum())
            inlier = dist <= self.rho
            src.append(moved[inlier])
            dst.append(self.bg_ego[idx[inlier]])
            wts.append(np.full(int(inlier.sum()), per_point))
        return value, np.concatenate(src), np.concatenate(dst), np.concatenate(wts)

def phase2_align(pairs: Sequence[PointPair], bg_ego, bg_cav, initial: Pose2, cfg: Optional[AlignConfig] = None,
                 scores: Optional[Sequence[float]] = None, budget: Optional[int] = None) -> AlignResult:
    """
    Background-constrained refinement from ``initial``. Each accepted step never
    raises the objective; iteration stops when the decrease falls below the
    tolerance or the budget runs out.

    Raises:
        InsufficientPairsError: no matched pairs
        NoCorrespondencesError: no correspondence within the reject radius at the start
    """
    cfg = cfg or AlignConfig()
    arrays = [(_xy(e), _xy(c)) for e, c in pairs]
    if not arrays:
        raise InsufficientPairsError("Phase 2 needs at least one matched pair")
    scores = [0.0] * len(arrays) if scores is None else list(scores)
    w_pairs = pair_weights(scores)
    w_bg = background_weight(len(arrays))
    limit = cfg.max_total_iters - cfg.phase1_budget if budget is None else budget

    objective = _Objective(arrays, as_points(bg_ego), as_points(bg_cav), w_pairs, w_bg, cfg.nn_reject_radius)
    pose = initial
    value, src, dst, wts = objective.evaluate(pose)
    if src.shape[0] == 0:
        logger.info(f"No correspondences within {cfg.nn_reject_radius} m at the phase-2 start")
        raise NoCorrespondencesError(f"Every correspondence exceeds the reject radius {cfg.nn_reject_radius} m")

    trace = [value]
    iterations = 0
    while iterations < limit:
        try:
            candidate = kabsch2(src, dst, wts) @ pose
        except DegenerateInputError:
            logger.debug("Phase 2 step degenerate; stopping")
            break
        iterations += 1
        new_value, new_src, new_dst, new_wts = objective.evaluate(candidate)
        if new_value > value:
            logger.trace(f"phase2 step rejected: {new_value:.6g} > {value:.6g}")
            break
        decrease = value - new_value
        pose, value, src, dst, wts = candidate, new_value, new_src, new_dst, new_wts
        trace.append(value)
        if decrease < cfg.tolerance or src.shape[0] == 0:
            break

    logger.debug(f"phase2: {iterations} iterations, objective {trace[0]:.5f} -> {value:.5f}")
    return AlignResult(pose, initial, iterations, value, w_pairs, w_bg, objective_trace=tuple(trace))

def align_views(pairs: Sequence[PointPair], bg_ego, bg_cav, scores: Optional[Sequence[float]] = None,
                cfg: Optional[AlignConfig] = None) -> AlignResult:
    """Both phases with a shared iteration budget."""
    cfg = cfg or AlignConfig()
    scores = [0.0] * len(pairs) if scores is None else list(scores)
    first = phase1_align(pairs, cfg, pair_weights(scores))
    second = phase2_align(pairs, bg_ego, bg_cav, first.transform, cfg, scores,
                          budget=cfg.max_total_iters - first.iterations)
    return AlignResult(
        transform=second.transform,
        phase1_transform=first.transform,
        iterations=first.iterations + second.iterations,
        error=second.error,
        pair_weights=second.pair_weights,
        background_weight=second.background_weight,
        phase1_iterations=first.iterations,
        distance_trace=first.distance_trace,
        objective_trace=second.objective_trace,
        low_confidence=first.low_confidence,
    )

def icp_baseline(ego_points, cav_points, cfg: Optional[AlignConfig] = None,
                 initial: Optional[Pose2] = None) -> Pose2:
    """
    Plain point-to-point ICP from the identity with free nearest neighbours and no
    rejection; used for the ablation rows.

    Raises:
        NoCorrespondencesError: either point set is empty
    """
    cfg = cfg or AlignConfig()
    ego = as_points(ego_points)
    cav = as_points(cav_points)
    if ego.shape[0] == 0 or cav.shape[0] == 0:
        raise NoCorrespondencesError("ICP needs non-empty point sets on both sides")
    tree = cKDTree(ego)
    pose = initial or Pose2.identity()
    previous = math.inf
    for _ in range(cfg.max_total_iters):
        moved = pose.apply(cav)
        dist, idx = tree.query(moved)
        error = float(np.mean(dist ** 2))
        if previous - error < cfg.tolerance:
            break
        previous = error
        try:
            pose = kabsch2(moved, ego[idx]) @ pose
        except DegenerateInputError:
            break
    return pose

def pair_icp(pairs: Sequence[PointPair], cfg: Optional[AlignConfig] = None,
             scores: Optional[Sequence[float]] = None) -> Pose2:
    """Pair-constrained ICP alone, over the whole iteration budget and without background."""
    cfg = cfg or AlignConfig()
    weights = pair_weights(scores) if scores is not None else None
    return phase1_align(pairs, cfg, weights, budget=cfg.max_total_iters).transform
