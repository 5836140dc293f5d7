"""
End-to-end fusion: CAV-side separation and packing, the (simulated) link, and the
Ego-side separation, co-visible matching and view alignment. Also the dataset
directory format and the evaluation harness.
"""
import csv
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from json_canonical import canonicalize

from .alignment import AlignResult, align_views, filter_background, icp_baseline, pair_icp
from .codec import deserialize_frame, deserialize_pair, raw_equivalent_bytes, serialize_frame, serialize_pair
from .covis_net import MatchResult, RmNetParams, build_graph, classify_edges, message_pass, prepare_topologies, threshold_sweep
from .geometry import Pose2, rre, rte
from .scene import simulate_pair
from .separation import cluster_moving, select_moving, separate_frame
from .utils.config import FusionConfig
from .utils.constants import FRAME_FORMAT_VERSION, FRAMES_DIR, MANIFEST_NAME
from .utils.errors import DatasetError, EmptyFrameError, InsufficientPairsError, MalformedFrameError, NoCorrespondencesError
from .utils.logger import logger
from .utils.types import FramePair, NoFusionReason, ProcessedFrame, ScenarioSpec, SensorFrame

PathLike = Union[str, Path]

STAGES = ('selection', 'separation', 'packing', 'transmission', 'matching', 'alignment')
STAGE_LABELS = {
    'selection': 'radar selection',
    'separation': 'separation',
    'packing': 'descriptor packing (image compression stand-in)',
    'transmission': 'transmission (synthetic: payload / link rate)',
    'matching': 'co-visible matching',
    'alignment': 'view alignment',
}
ABLATIONS = ('ICP-All', 'ICP-BG', 'ICP-Veh', 'ICP-Pair', 'full')

def _ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0

@dataclass(frozen=True)
class StageTimings:
    """Per-stage wall-clock in milliseconds; transmission is modeled, not measured."""
    selection: float = 0.0
    separation: float = 0.0
    packing: float = 0.0
    transmission: float = 0.0
    matching: float = 0.0
    alignment: float = 0.0

    @property
    def total(self) -> float:
        return sum(getattr(self, s) for s in STAGES)

    @property
    def compute(self) -> float:
        """Everything except the modeled link time."""
        return self.total - self.transmission

def transmission_ms(payload_bytes: int, link_rate_mbps: float) -> float:
    return payload_bytes * 8.0 / (link_rate_mbps * 1e6) * 1000.0

@dataclass(eq=False)
class FusionResult:
    frame_id: int
    ego: ProcessedFrame
    cav: ProcessedFrame
    match: Optional[MatchResult]
    align: Optional[AlignResult]
    timings: StageTimings
    payload_bytes: int
    reason: Optional[NoFusionReason] = None

    @property
    def fused(self) -> bool:
        return self.reason is None

    @property
    def transform(self) -> Optional[Pose2]:
        return self.align.transform if self.align is not None else None

    def matched_clusters(self) -> List[Tuple[int, int]]:
        return list(self.match.pairs) if self.match is not None else []

def pair_scores(ego: ProcessedFrame, cav: ProcessedFrame, pairs: Sequence[Tuple[int, int]]) -> List[float]:
    """Mean detection score of both sides of each matched pair."""
    return [0.5 * (ego.detection_of(ego.clusters[a]).score + cav.detection_of(cav.clusters[b]).score)
            for a, b in pairs]

def run_pipeline(
    ego_raw: SensorFrame,
    cav_msg: ProcessedFrame,
    params: RmNetParams,
    config: Optional[FusionConfig] = None,
    seed: int = 0,
    payload_bytes: Optional[int] = None,
) -> FusionResult:
    """
    Ego-side processing of one frame pair.

    Separates the Ego's raw frame, matches its clusters against the received CAV
    clusters and aligns the two views. Empty frames and too few matches end in a
    result carrying a ``NoFusionReason`` instead of an exception.
    """
    config = config or FusionConfig()
    frame_id = cav_msg.frame_id
    if payload_bytes is None:
        payload_bytes = len(serialize_frame(cav_msg))
    link = transmission_ms(payload_bytes, config.pipeline.link_rate_mbps)

    start = time.perf_counter()
    moving, stationary, _ = select_moving(ego_raw, config.separation, seed)
    selection = _ms(start)

    start = time.perf_counter()
    clusters = cluster_moving(ego_raw, moving, config.separation)
    ego = ProcessedFrame(frame_id, ego_raw.sensor, ego_raw.intrinsics, ego_raw.ego_speed,
                         list(ego_raw.detections), clusters, stationary.xy.copy())
    separation = _ms(start)

    def finish(reason, match=None, align=None, matching=0.0, alignment=0.0) -> FusionResult:
        timings = StageTimings(selection, separation, 0.0, link, matching, alignment)
        if reason is not None:
            logger.debug(f"Frame {frame_id}: no fusion ({reason.value})")
        return FusionResult(frame_id, ego, cav_msg, match, align, timings, payload_bytes, reason)

    start = time.perf_counter()
    try:
        graph = message_pass(build_graph(ego, cav_msg, params), params)
    except EmptyFrameError:
        reason = NoFusionReason.EMPTY_EGO if not ego.clusters else NoFusionReason.EMPTY_CAV
        return finish(reason, matching=_ms(start))
    match = classify_edges(graph, params)
    matching = _ms(start)
    if not match.pairs:
        return finish(NoFusionReason.NO_MATCHES, match, matching=matching)

    start = time.perf_counter()
    pairs = [(ego.clusters[a], cav_msg.clusters[b]) for a, b in match.pairs]
    scores = pair_scores(ego, cav_msg, match.pairs)
    try:
        aligned = align_views(pairs, filter_background(ego.background, config.align),
                              filter_background(cav_msg.background, config.align), scores, config.align)
    except InsufficientPairsError:
        return finish(NoFusionReason.INSUFFICIENT_PAIRS, match, matching=matching, alignment=_ms(start))
    except NoCorrespondencesError:
        return finish(NoFusionReason.NO_CORRESPONDENCES, match, matching=matching, alignment=_ms(start))
    return finish(None, match, aligned, matching, _ms(start))

def prepare_message(frame: SensorFrame, config: FusionConfig, seed: int = 0,
                    frame_id: int = 0) -> ProcessedFrame:
    """CAV side: separate the raw frame into what gets transmitted."""
    return separate_frame(frame, config.separation, seed, frame_id)

def transmit(msg: ProcessedFrame) -> Tuple[ProcessedFrame, int, float]:
    """Encode and decode as the link would; returns (received, payload bytes, packing ms)."""
    start = time.perf_counter()
    data = serialize_frame(msg)
    received = deserialize_frame(data)
    return received, len(data), _ms(start)

def fuse_pair(pair: FramePair, params: RmNetParams, config: Optional[FusionConfig] = None,
              seed: int = 0) -> Tuple[FusionResult, ProcessedFrame]:
    """Both ends of the exchange for one pair; also returns the CAV frame before transmission."""
    config = config or FusionConfig()
    sent = prepare_message(pair.cav_frame, config, seed, pair.frame_id)
    received, size, packing = transmit(sent)
    result = run_pipeline(pair.ego_frame, received, params, config, seed, size)
    return replace(result, timings=replace(result.timings, packing=packing)), sent

# Evaluation

@dataclass(frozen=True)
class FrameEvaluation:
    """One report row. RRE/RTE are NaN when the pipeline did not fuse."""
    frame_id: int
    road_type: str
    traffic: str
    driving_mode: str
    n_covisible: int
    reason: str
    rre: float
    rte: float
    n_pairs: int
    true_positives: int
    false_positives: int
    false_negatives: int
    payload_bytes: int
    raw_bytes: int
    perceived_before: int
    perceived_after: int
    phase1_iterations: int
    iterations: int
    objective_monotone: bool
    ablation: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    timings: StageTimings = field(default_factory=StageTimings)

    @property
    def fused(self) -> bool:
        return self.reason == ''

COLUMNS = ('frame_id', 'road_type', 'traffic', 'driving_mode', 'n_covisible', 'fused', 'reason', 'rre_deg',
           'rte_m', 'n_pairs', 'tp', 'fp', 'fn', 'payload_bytes', 'raw_bytes', 'perceived_before',
           'perceived_after', 'phase1_iterations', 'iterations', 'objective_monotone')

def _truth_pairs(ego: ProcessedFrame, cav: ProcessedFrame) -> set:
    ego_ids = [ego.detection_of(c).truth_id for c in ego.clusters]
    cav_ids = [cav.detection_of(c).truth_id for c in cav.clusters]
    return {(a, b) for a, x in enumerate(ego_ids) for b, y in enumerate(cav_ids) if x is not None and x == y}

def _errors(estimate: Optional[Pose2], truth: Pose2) -> Tuple[float, float]:
    if estimate is None:
        return math.nan, math.nan
    return rre(estimate, truth), rte(estimate, truth)

def _ablation(result: FusionResult, config: FusionConfig, truth: Pose2) -> Dict[str, Tuple[float, float]]:
    ego, cav = result.ego, result.cav
    bg_ego = filter_background(ego.background, config.align)
    bg_cav = filter_background(cav.background, config.align)
    veh_ego, veh_cav = ego.cluster_points(), cav.cluster_points()
    candidates: Dict[str, Callable[[], Pose2]] = {
        'ICP-All': lambda: icp_baseline(np.vstack([veh_ego, bg_ego]), np.vstack([veh_cav, bg_cav]), config.align),
        'ICP-BG': lambda: icp_baseline(bg_ego, bg_cav, config.align),
        'ICP-Veh': lambda: icp_baseline(veh_ego, veh_cav, config.align),
        'ICP-Pair': lambda: pair_icp([(ego.clusters[a], cav.clusters[b]) for a, b in result.matched_clusters()],
                                     config.align, pair_scores(ego, cav, result.matched_clusters())),
    }
    rows = {}
    for name, run in candidates.items():
        try:
            rows[name] = _errors(run(), truth)
        except (NoCorrespondencesError, InsufficientPairsError):
            rows[name] = (math.nan, math.nan)
    rows['full'] = _errors(result.transform, truth)
    return rows

def evaluate_pair(pair: FramePair, params: RmNetParams, config: Optional[FusionConfig] = None,
                  seed: int = 0, ablation: bool = True) -> FrameEvaluation:
    config = config or FusionConfig()
    result, sent = fuse_pair(pair, params, config, seed)
    truth_pairs = _truth_pairs(result.ego, sent)
    accepted = set(result.matched_clusters())
    rre_deg, rte_m = _errors(result.transform, pair.truth_transform)
    trace = result.align.objective_trace if result.align is not None else ()
    n_ego, n_cav = len(pair.ego_frame.detections), len(pair.cav_frame.detections)
    return FrameEvaluation(
        frame_id=pair.frame_id,
        road_type=pair.spec.road_type.value,
        traffic=pair.spec.traffic.value,
        driving_mode=pair.spec.driving_mode.value,
        n_covisible=len(pair.truth_covis),
        reason='' if result.fused else result.reason.value,
        rre=rre_deg,
        rte=rte_m,
        n_pairs=len(accepted),
        true_positives=len(accepted & truth_pairs),
        false_positives=len(accepted - truth_pairs),
        false_negatives=len(truth_pairs - accepted),
        payload_bytes=result.payload_bytes,
        raw_bytes=raw_equivalent_bytes(pair.cav_frame),
        perceived_before=n_ego,
        perceived_after=n_ego + n_cav - len(accepted),
        phase1_iterations=result.align.phase1_iterations if result.align is not None else 0,
        iterations=result.align.iterations if result.align is not None else 0,
        objective_monotone=all(b <= a for a, b in zip(trace, trace[1:])),
        ablation=_ablation(result, config, pair.truth_transform) if ablation else {},
        timings=result.timings,
    )

def _stats(values: Iterable[float]) -> Tuple[int, float, float]:
    arr = np.array([v for v in values if not math.isnan(v)])
    if arr.size == 0:
        return 0, math.nan, math.nan
    return int(arr.size), float(arr.mean()), float(np.median(arr))

@dataclass(eq=False)
class EvalReport:
    rows: List[FrameEvaluation]
    sweep: List[Tuple[float, float, float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.frame_id)

    def match_scores(self) -> Tuple[float, float, float]:
        tp = sum(r.true_positives for r in self.rows)
        fp = sum(r.false_positives for r in self.rows)
        fn = sum(r.false_negatives for r in self.rows)
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / (tp + fn) if tp + fn else 1.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return precision, recall, f1

    def summary(self) -> Dict[str, float]:
        n_rre, mean_rre, median_rre = _stats(r.rre for r in self.rows)
        _, mean_rte, median_rte = _stats(r.rte for r in self.rows)
        precision, recall, f1 = self.match_scores()
        payload = float(np.mean([r.payload_bytes for r in self.rows])) if self.rows else math.nan
        raw = float(np.mean([r.raw_bytes for r in self.rows])) if self.rows else math.nan
        return {
            'frames': len(self.rows),
            'fused': n_rre,
            'mean_rre_deg': mean_rre,
            'median_rre_deg': median_rre,
            'mean_rte_m': mean_rte,
            'median_rte_m': median_rte,
            'precision': precision,
            'recall': recall,
            'f1': f1,
            'mean_payload_bytes': payload,
            'mean_raw_bytes': raw,
            'raw_to_payload_ratio': raw / payload if self.rows and payload > 0 else math.nan,
            'mean_perceived_before': float(np.mean([r.perceived_before for r in self.rows])) if self.rows else math.nan,
            'mean_perceived_after': float(np.mean([r.perceived_after for r in self.rows])) if self.rows else math.nan,
            'monotonicity_violations': sum(not r.objective_monotone for r in self.rows),
        }

    def ablation_summary(self) -> List[Tuple[str, int, float, float, float, float]]:
        """(method, frames, mean RRE, median RRE, mean RTE, median RTE)"""
        out = []
        for name in ABLATIONS:
            pairs = [r.ablation[name] for r in self.rows if name in r.ablation]
            n, mean_rre, median_rre = _stats(p[0] for p in pairs)
            _, mean_rte, median_rte = _stats(p[1] for p in pairs)
            out.append((name, n, mean_rre, median_rre, mean_rte, median_rte))
        return out

    def covisible_breakdown(self) -> List[Tuple[int, int, float, float]]:
        """(co-visible count, fused frames, median RRE, median RTE)"""
        out = []
        for count in sorted({r.n_covisible for r in self.rows}):
            subset = [r for r in self.rows if r.n_covisible == count]
            n, _, median_rre = _stats(r.rre for r in subset)
            _, _, median_rte = _stats(r.rte for r in subset)
            out.append((count, n, median_rre, median_rte))
        return out

    def latency(self) -> List[Tuple[str, float, float]]:
        """(stage, mean ms, p95 ms) plus the compute total and the overall total."""
        rows = []
        for stage in STAGES:
            values = np.array([getattr(r.timings, stage) for r in self.rows]) if self.rows else np.zeros(1)
            rows.append((STAGE_LABELS[stage], float(values.mean()), float(np.percentile(values, 95))))
        for label, attr in (('total compute', 'compute'), ('total', 'total')):
            values = np.array([getattr(r.timings, attr) for r in self.rows]) if self.rows else np.zeros(1)
            rows.append((label, float(values.mean()), float(np.percentile(values, 95))))
        return rows

    def write(self, out_dir: PathLike) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_tsv(out / 'report.tsv', COLUMNS, [_row(r) for r in self.rows])
        _write_tsv(out / 'summary.tsv', ('metric', 'value'), list(self.summary().items()))
        _write_tsv(out / 'ablation.tsv', ('method', 'frames', 'mean_rre_deg', 'median_rre_deg', 'mean_rte_m',
                                          'median_rte_m'), self.ablation_summary())
        _write_tsv(out / 'covisible.tsv', ('n_covisible', 'fused', 'median_rre_deg', 'median_rte_m'),
                   self.covisible_breakdown())
        for name, attr in (('cdf_rre.tsv', 'rre'), ('cdf_rte.tsv', 'rte')):
            _write_tsv(out / name, ('value', 'cdf'), cdf_samples([getattr(r, attr) for r in self.rows]))
        _write_tsv(out / 'latency.tsv', ('stage', 'mean_ms', 'p95_ms'), self.latency())
        _write_tsv(out / 'threshold_sweep.tsv', ('threshold', 'precision', 'recall', 'f1'), self.sweep)
        logger.info(f"Wrote evaluation report for {len(self.rows)} frames to {out}")

def cdf_samples(values: Sequence[float]) -> List[Tuple[float, float]]:
    arr = np.sort(np.array([v for v in values if not math.isnan(v)]))
    return [(float(v), (i + 1) / arr.size) for i, v in enumerate(arr)]

def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return 'nan' if math.isnan(value) else repr(value)
    return str(value)

def _row(r: FrameEvaluation) -> Tuple:
    return (r.frame_id, r.road_type, r.traffic, r.driving_mode, r.n_covisible, r.fused, r.reason, r.rre, r.rte,
            r.n_pairs, r.true_positives, r.false_positives, r.false_negatives, r.payload_bytes, r.raw_bytes,
            r.perceived_before, r.perceived_after, r.phase1_iterations, r.iterations, r.objective_monotone)

def _write_tsv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with path.open('w', newline='', encoding='utf-8') as f:
        w = csv.writer(f, delimiter='\t', lineterminator='\n')
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])

def read_report(path: PathLike) -> List[Dict[str, str]]:
    """Rows of a written report.tsv as dicts keyed by column name."""
    with Path(path).open(newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f, delimiter='\t'))

def evaluate_pairs(pairs: Sequence[FramePair], params: RmNetParams, config: Optional[FusionConfig] = None,
                   seed: int = 0, workers: Optional[int] = None, ablation: bool = True,
                   sweep: bool = True) -> EvalReport:
    config = config or FusionConfig()
    workers = workers or config.pipeline.workers
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(evaluate_pair, p, params, config, seed, ablation) for p in pairs]
        rows = [f.result() for f in futures]
    sweep_rows = threshold_sweep(prepare_topologies(pairs, config.separation, seed), params) if sweep else []
    return EvalReport(rows, sweep_rows)

def evaluate_dataset(path: PathLike, params: RmNetParams, config: Optional[FusionConfig] = None,
                     out_dir: Optional[PathLike] = None, seed: int = 0) -> EvalReport:
    """
    Run the pipeline over every frame pair of a dataset directory and, when
    ``out_dir`` is given, write the tab-separated report files there.
    """
    config = config or FusionConfig()
    pairs = read_dataset(path)
    logger.info(f"Evaluating {len(pairs)} frame pairs from {path}")
    report = evaluate_pairs(pairs, params, config, seed)
    if out_dir is not None:
        report.write(out_dir)
    return report

def bench(pairs: Sequence[FramePair], params: RmNetParams, config: Optional[FusionConfig] = None,
          seed: int = 0) -> List[Tuple[str, float, float]]:
    """Per-stage latency over the given pairs, processed one at a time."""
    config = config or FusionConfig()
    rows = [evaluate_pair(p, params, config, seed, ablation=False) for p in pairs]
    return EvalReport(rows).latency()

# Dataset directories

def _frame_file(frame_id: int) -> str:
    return f"{FRAMES_DIR}/{frame_id:06d}.cvfp"

def write_dataset(out_dir: PathLike, pairs: Sequence[FramePair], meta: Optional[Dict] = None) -> Path:
    """
    Write one record per frame pair plus a canonical-JSON manifest holding each
    pair's scenario, truth transform, co-visible ids and SHA3-256 digest.
    """
    out = Path(out_dir)
    (out / FRAMES_DIR).mkdir(parents=True, exist_ok=True)
    entries = []
    for pair in pairs:
        data = serialize_pair(pair)
        name = _frame_file(pair.frame_id)
        (out / name).write_bytes(data)
        entries.append({
            'frameId': pair.frame_id,
            'file': name,
            'sha3_256': hashlib.sha3_256(data).hexdigest(),
            'spec': pair.spec.to_json(),
            'truthTransform': pair.truth_transform.to_json(),
            'covisible': sorted(a for a, _ in pair.truth_covis),
        })
    manifest = {'version': FRAME_FORMAT_VERSION, 'frames': entries, 'meta': meta or {}}
    (out / MANIFEST_NAME).write_bytes(canonicalize(manifest))
    logger.info(f"Wrote {len(entries)} frame pairs to {out}")
    return out

def read_manifest(path: PathLike) -> Dict:
    p = Path(path) / MANIFEST_NAME
    if not p.is_file():
        logger.info(f"Dataset manifest not found: {p}")
        raise DatasetError(f"Dataset manifest not found: {p}")
    try:
        manifest = json.loads(p.read_text(encoding='utf-8'))
    except ValueError as e:
        raise DatasetError(f"Unreadable dataset manifest {p}", e)
    if manifest.get('version') != FRAME_FORMAT_VERSION:
        raise DatasetError(f"Unsupported dataset version {manifest.get('version')}")
    return manifest

def read_dataset(path: PathLike) -> List[FramePair]:
    """
    Raises:
        DatasetError: missing manifest or record, digest mismatch, or an unreadable record
    """
    root = Path(path)
    pairs = []
    for entry in read_manifest(root)['frames']:
        file = root / entry['file']
        if not file.is_file():
            raise DatasetError(f"Dataset record missing: {file}")
        data = file.read_bytes()
        if hashlib.sha3_256(data).hexdigest() != entry['sha3_256']:
            logger.info(f"Digest mismatch for {file}")
            raise DatasetError(f"Digest mismatch for {file}")
        try:
            pairs.append(deserialize_pair(data))
        except MalformedFrameError as e:
            raise DatasetError(f"Unreadable dataset record {file}", e)
    return pairs

def generate_pairs(specs: Sequence[ScenarioSpec], config: Optional[FusionConfig] = None,
                   first_id: int = 0) -> List[FramePair]:
    config = config or FusionConfig()
    return [simulate_pair(spec, config.sim, first_id + i) for i, spec in enumerate(specs)]
