"""
Co-visible vehicle matching across two views.

Every vehicle cluster becomes a node carrying its detection descriptor. Same-view
node pairs are joined by local edges with geometric features; every Ego x CAV pair
is joined by a cross edge whose embedding starts at zero. Message passing alternates
edge updates (from both endpoints) and node updates (from the local and the cross
aggregates, concatenated). A classifier on the cross-edge embeddings gives the
match probability at every step; training supervises all steps, inference uses
the last.
"""
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray

from .separation import separate_frame
from .utils.config import MatchConfig, SeparationConfig
from .utils.constants import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    DEFAULT_HIDDEN_WIDTH,
    DESCRIPTOR_DIM,
    EDGE_EMBEDDING_DIM,
    EDGE_FEATURE_DIM,
    NODE_EMBEDDING_DIM,
)
from .utils.errors import CheckpointError, DivergenceError, EmptyFrameError, InvalidParamError
from .utils.logger import logger
from .utils.neural import Adam, MlpCache, Tensors, all_finite, init_mlp, mlp_backward, mlp_forward, mlp_shapes, sigmoid, softplus, zeros_like
from .utils.types import FramePair, ProcessedFrame
from .utils.validation_utils import validate_function_params

MIN_AZIMUTH_RAD = 1e-3

# name -> (input width, output width)
LAYERS: Dict[str, Tuple[int, int]] = {
    'node_enc': (DESCRIPTOR_DIM, NODE_EMBEDDING_DIM),
    'edge_enc': (EDGE_FEATURE_DIM, EDGE_EMBEDDING_DIM),
    'local_edge': (2 * NODE_EMBEDDING_DIM + EDGE_EMBEDDING_DIM, EDGE_EMBEDDING_DIM),
    'cross_edge': (2 * NODE_EMBEDDING_DIM + EDGE_EMBEDDING_DIM, EDGE_EMBEDDING_DIM),
    'local_msg': (NODE_EMBEDDING_DIM + EDGE_EMBEDDING_DIM, NODE_EMBEDDING_DIM),
    'cross_msg': (NODE_EMBEDDING_DIM + EDGE_EMBEDDING_DIM, NODE_EMBEDDING_DIM),
    'node_update': (2 * NODE_EMBEDDING_DIM, NODE_EMBEDDING_DIM),
    'classifier': (EDGE_EMBEDDING_DIM, 1),
}

_HEADER = struct.Struct('<4sHHdII')

@dataclass(frozen=True)
class RmNetParams:
    tensors: Tensors
    hidden_width: int = DEFAULT_HIDDEN_WIDTH
    steps: int = 4
    threshold: float = 0.5

    @staticmethod
    def shapes(hidden_width: int) -> Dict[str, Tuple[int, ...]]:
        shapes: Dict[str, Tuple[int, ...]] = {}
        for name, (n_in, n_out) in LAYERS.items():
            shapes.update(mlp_shapes(name, n_in, hidden_width, n_out))
        return shapes

    @classmethod
    def initialize(cls, seed: int = 0, hidden_width: int = DEFAULT_HIDDEN_WIDTH, steps: int = 4,
                   threshold: float = 0.5) -> 'RmNetParams':
        rng = np.random.default_rng(seed)
        tensors: Tensors = {}
        for name, (n_in, n_out) in LAYERS.items():
            tensors.update(init_mlp(rng, name, n_in, hidden_width, n_out))
        return cls(tensors, hidden_width, steps, threshold)

    @classmethod
    def zeros(cls, hidden_width: int = DEFAULT_HIDDEN_WIDTH, steps: int = 4, threshold: float = 0.5) -> 'RmNetParams':
        return cls({k: np.zeros(s) for k, s in cls.shapes(hidden_width).items()}, hidden_width, steps, threshold)

    def frozen(self) -> 'RmNetParams':
        """Copy whose arrays are read-only."""
        tensors = {}
        for k, v in self.tensors.items():
            arr = np.array(v, dtype=np.float64, copy=True)
            arr.setflags(write=False)
            tensors[k] = arr
        return RmNetParams(tensors, self.hidden_width, self.steps, self.threshold)

    def mutable(self) -> Tensors:
        return {k: np.array(v, dtype=np.float64, copy=True) for k, v in self.tensors.items()}

    def is_finite(self) -> bool:
        return all_finite(self.tensors.values())

@dataclass(eq=False)
class GraphTopology:
    """Parameter-free part of a graph: node inputs, edge indices, edge features and labels."""
    descriptors: NDArray[np.float64]     # (n, 32), ego nodes first
    n_ego: int
    local_src: NDArray[np.int64]
    local_dst: NDArray[np.int64]
    local_features: NDArray[np.float64]  # (m_local, 4)
    cross_ego: NDArray[np.int64]         # global node index, ego-major order
    cross_cav: NDArray[np.int64]
    labels: Optional[NDArray[np.float64]] = None

    @property
    def n_nodes(self) -> int:
        return self.descriptors.shape[0]

    @property
    def n_cav(self) -> int:
        return self.n_nodes - self.n_ego

    @property
    def n_cross(self) -> int:
        return self.cross_ego.shape[0]

@dataclass
class StepState:
    nodes: NDArray[np.float64]
    local_edges: NDArray[np.float64]
    cross_edges: NDArray[np.float64]
    logits: Optional[NDArray[np.float64]] = None

@dataclass(eq=False)
class CovisGraph:
    """
    Graph state. ``history[0]`` holds the encoder outputs; every message-passing
    step appends one state whose cross-edge logits feed deep supervision.
    """
    topology: GraphTopology
    history: List[StepState] = field(default_factory=list)
    ego_clusters: List[int] = field(default_factory=list)
    cav_clusters: List[int] = field(default_factory=list)
    _tape: list = field(default_factory=list, repr=False)

    @property
    def state(self) -> StepState:
        return self.history[-1]

    @property
    def steps_done(self) -> int:
        return len(self.history) - 1

    @property
    def step_logits(self) -> List[NDArray[np.float64]]:
        return [s.logits for s in self.history[1:]]

@dataclass(frozen=True)
class MatchResult:
    probabilities: NDArray[np.float64]   # (n_ego, n_cav)
    pairs: Tuple[Tuple[int, int], ...]   # (ego cluster index, cav cluster index)
    threshold: float

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

# Graph construction

def edge_features(centroids: NDArray, src: NDArray, dst: NDArray) -> NDArray[np.float64]:
    """Normalized length, direction angle, log range ratio and log azimuth ratio per oriented edge."""
    if src.size == 0:
        return np.zeros((0, EDGE_FEATURE_DIM))
    diff = centroids[dst] - centroids[src]
    length = np.hypot(diff[:, 0], diff[:, 1])
    d_max = length.max()
    norm_length = length / d_max if d_max > 0 else np.zeros_like(length)
    direction = np.mod(np.arctan2(diff[:, 1], diff[:, 0]), math.pi)
    direction[direction >= math.pi] = 0.0
    ranges = np.maximum(np.hypot(centroids[:, 0], centroids[:, 1]), 1e-6)
    azimuth = np.maximum(np.abs(np.arctan2(centroids[:, 1], centroids[:, 0])), MIN_AZIMUTH_RAD)
    return np.column_stack([
        norm_length,
        direction / math.pi,
        np.log(ranges[src] / ranges[dst]),
        np.log(azimuth[src] / azimuth[dst]),
    ])

def _oriented_pairs(centroids: NDArray, offset: int) -> Tuple[NDArray, NDArray]:
    """All unordered pairs, each oriented from the farther node (then the wider azimuth)."""
    n = centroids.shape[0]
    ranges = np.hypot(centroids[:, 0], centroids[:, 1])
    azimuth = np.abs(np.arctan2(centroids[:, 1], centroids[:, 0]))
    src, dst = [], []
    for i in range(n):
        for j in range(i + 1, n):
            key_i, key_j = (ranges[i], azimuth[i]), (ranges[j], azimuth[j])
            if key_j > key_i:
                src.append(j)
                dst.append(i)
            else:
                src.append(i)
                dst.append(j)
    return np.array(src, dtype=np.int64) + offset, np.array(dst, dtype=np.int64) + offset

def build_topology(ego: ProcessedFrame, cav: ProcessedFrame, with_labels: bool = True) -> GraphTopology:
    if not ego.clusters or not cav.clusters:
        side = 'ego' if not ego.clusters else 'cav'
        logger.debug(f"build_graph: {side} frame has no vehicle clusters")
        raise EmptyFrameError(f"The {side} frame has no vehicle clusters")
    n_e, n_c = len(ego.clusters), len(cav.clusters)
    descriptors = np.vstack([ego.detection_of(c).descriptor for c in ego.clusters]
                            + [cav.detection_of(c).descriptor for c in cav.clusters])

    src_parts, dst_parts, feat_parts = [], [], []
    for frame, offset in ((ego, 0), (cav, n_e)):
        centroids = np.array([c.xy.mean(axis=0) for c in frame.clusters])
        s, d = _oriented_pairs(centroids, offset)
        src_parts.append(s)
        dst_parts.append(d)
        feat_parts.append(edge_features(centroids, s - offset, d - offset))

    cross_ego = np.repeat(np.arange(n_e, dtype=np.int64), n_c)
    cross_cav = np.tile(np.arange(n_c, dtype=np.int64), n_e) + n_e

    labels = None
    if with_labels:
        ego_ids = [ego.detection_of(c).truth_id for c in ego.clusters]
        cav_ids = [cav.detection_of(c).truth_id for c in cav.clusters]
        labels = np.array([1.0 if ego_ids[a] is not None and ego_ids[a] == cav_ids[b - n_e] else 0.0
                           for a, b in zip(cross_ego, cross_cav)])

    return GraphTopology(descriptors, n_e, np.concatenate(src_parts), np.concatenate(dst_parts),
                         np.concatenate(feat_parts), cross_ego, cross_cav, labels)

def build_graph(ego: ProcessedFrame, cav: ProcessedFrame, params: RmNetParams) -> CovisGraph:
    """
    Encode both frames into a graph ready for message passing.

    Raises:
        EmptyFrameError: either frame has no vehicle clusters
    """
    topology = build_topology(ego, cav)
    graph = CovisGraph(topology, ego_clusters=list(range(len(ego.clusters))),
                       cav_clusters=list(range(len(cav.clusters))))
    _encode(graph, params.tensors)
    return graph

def _encode(graph: CovisGraph, p: Tensors) -> None:
    topo = graph.topology
    nodes, node_cache = mlp_forward(p, 'node_enc', topo.descriptors)
    local, edge_cache = mlp_forward(p, 'edge_enc', topo.local_features)
    cross = np.zeros((topo.n_cross, EDGE_EMBEDDING_DIM))
    graph.history = [StepState(nodes, local, cross)]
    graph._tape = [(node_cache, edge_cache)]

# Message passing

@dataclass(frozen=True)
class _StepCache:
    local_edge: MlpCache
    cross_edge: MlpCache
    local_msg: MlpCache
    cross_msg: MlpCache
    node_update: MlpCache
    classifier: MlpCache

def _step(topo: GraphTopology, p: Tensors, state: StepState) -> Tuple[StepState, _StepCache]:
    v = state.nodes
    i, j = topo.local_src, topo.local_dst
    a, b = topo.cross_ego, topo.cross_cav

    local, c_le = mlp_forward(p, 'local_edge', np.hstack([v[i], v[j], state.local_edges]))
    cross, c_ce = mlp_forward(p, 'cross_edge', np.hstack([v[a], v[b], state.cross_edges]))

    # each edge sends one message to each endpoint, built from that endpoint and the edge
    to_l = np.concatenate([i, j])
    msg_l, c_lm = mlp_forward(p, 'local_msg', np.hstack([v[to_l], np.vstack([local, local])]))
    to_c = np.concatenate([a, b])
    msg_c, c_cm = mlp_forward(p, 'cross_msg', np.hstack([v[to_c], np.vstack([cross, cross])]))

    agg_l = np.zeros_like(v)
    np.add.at(agg_l, to_l, msg_l)
    agg_c = np.zeros_like(v)
    np.add.at(agg_c, to_c, msg_c)

    nodes, c_nu = mlp_forward(p, 'node_update', np.hstack([agg_l, agg_c]))
    logits, c_cl = mlp_forward(p, 'classifier', cross)
    return StepState(nodes, local, cross, logits[:, 0]), _StepCache(c_le, c_ce, c_lm, c_cm, c_nu, c_cl)

def _step_backward(topo: GraphTopology, p: Tensors, cache: _StepCache, d_nodes: NDArray, d_local: NDArray,
                   d_cross: NDArray, d_logits: NDArray, grads: Tensors) -> Tuple[NDArray, NDArray, NDArray]:
    i, j = topo.local_src, topo.local_dst
    a, b = topo.cross_ego, topo.cross_cav
    m_l, m_c = i.size, a.size
    width = NODE_EMBEDDING_DIM

    d_cross = d_cross + mlp_backward(p, 'classifier', cache.classifier, d_logits[:, None], grads)
    d_agg = mlp_backward(p, 'node_update', cache.node_update, d_nodes, grads)
    d_agg_l, d_agg_c = d_agg[:, :width], d_agg[:, width:]

    d_v = np.zeros((topo.n_nodes, width))
    to_l = np.concatenate([i, j])
    d_in = mlp_backward(p, 'local_msg', cache.local_msg, d_agg_l[to_l], grads)
    np.add.at(d_v, to_l, d_in[:, :width])
    d_local = d_local + d_in[:m_l, width:] + d_in[m_l:, width:]

    to_c = np.concatenate([a, b])
    d_in = mlp_backward(p, 'cross_msg', cache.cross_msg, d_agg_c[to_c], grads)
    np.add.at(d_v, to_c, d_in[:, :width])
    d_cross = d_cross + d_in[:m_c, width:] + d_in[m_c:, width:]

    d_in = mlp_backward(p, 'local_edge', cache.local_edge, d_local, grads)
    np.add.at(d_v, i, d_in[:, :width])
    np.add.at(d_v, j, d_in[:, width:2 * width])
    d_local_prev = d_in[:, 2 * width:]

    d_in = mlp_backward(p, 'cross_edge', cache.cross_edge, d_cross, grads)
    np.add.at(d_v, a, d_in[:, :width])
    np.add.at(d_v, b, d_in[:, width:2 * width])
    d_cross_prev = d_in[:, 2 * width:]
    return d_v, d_local_prev, d_cross_prev

def message_pass(graph: CovisGraph, params: RmNetParams, steps: Optional[int] = None) -> CovisGraph:
    """Run ``steps`` rounds of edge and node updates; every intermediate state is kept."""
    steps = params.steps if steps is None else steps
    validate_function_params([
        {'input': steps, 'param_name': 'steps', 'is_int': True, 'min_value': 1},
    ], 'message_pass')
    if not graph.history:
        _encode(graph, params.tensors)
    for _ in range(steps):
        state, cache = _step(graph.topology, params.tensors, graph.state)
        graph.history.append(state)
        graph._tape.append(cache)
    return graph

def _backward(graph: CovisGraph, p: Tensors, d_step_logits: Sequence[NDArray], grads: Tensors) -> None:
    topo = graph.topology
    d_nodes = np.zeros((topo.n_nodes, NODE_EMBEDDING_DIM))
    d_local = np.zeros((topo.local_src.size, EDGE_EMBEDDING_DIM))
    d_cross = np.zeros((topo.n_cross, EDGE_EMBEDDING_DIM))
    for t in range(graph.steps_done, 0, -1):
        d_nodes, d_local, d_cross = _step_backward(topo, p, graph._tape[t], d_nodes, d_local, d_cross,
                                                   d_step_logits[t - 1], grads)
    node_cache, edge_cache = graph._tape[0]
    mlp_backward(p, 'node_enc', node_cache, d_nodes, grads)
    mlp_backward(p, 'edge_enc', edge_cache, d_local, grads)

# Classification and loss

def classify_edges(graph: CovisGraph, params: RmNetParams, threshold: Optional[float] = None) -> MatchResult:
    """Threshold last-step probabilities, then keep a one-to-one matching greedily by probability."""
    if graph.steps_done < 1:
        raise InvalidParamError("classify_edges needs at least one message-passing step")
    eta = params.threshold if threshold is None else threshold
    topo = graph.topology
    prob = sigmoid(graph.state.logits)
    order = np.argsort(-prob, kind='stable')
    used_ego, used_cav, pairs = set(), set(), []
    for e in order:
        if prob[e] < eta:
            break
        a, b = int(topo.cross_ego[e]), int(topo.cross_cav[e]) - topo.n_ego
        if a in used_ego or b in used_cav:
            continue
        used_ego.add(a)
        used_cav.add(b)
        pairs.append((graph.ego_clusters[a], graph.cav_clusters[b]))
    return MatchResult(prob.reshape(topo.n_ego, topo.n_cav), tuple(sorted(pairs)), eta)

def imbalance_weight(labels: NDArray) -> float:
    """Negative-to-positive count ratio; 1 when there are no positives."""
    labels = np.asarray(labels)
    positives = float(labels.sum())
    if positives == 0:
        return 1.0
    return (labels.size - positives) / positives

def loss(step_logits: Sequence[NDArray], labels: NDArray, omega: Optional[float] = None) -> float:
    """Weighted binary cross-entropy, averaged over edges and summed over steps."""
    return loss_and_logit_grads(step_logits, labels, omega)[0]

def loss_and_logit_grads(step_logits: Sequence[NDArray], labels: NDArray,
                         omega: Optional[float] = None) -> Tuple[float, List[NDArray]]:
    y = np.asarray(labels, dtype=np.float64)
    w = imbalance_weight(y) if omega is None else omega
    m = y.size
    total, grads = 0.0, []
    for z in step_logits:
        z = np.asarray(z, dtype=np.float64)
        # -log(1 - sigmoid(z)) = softplus(z), -log(sigmoid(z)) = softplus(-z)
        total += float(np.sum((1.0 - y) * softplus(z) + w * y * softplus(-z)) / m)
        p = sigmoid(z)
        grads.append(((1.0 - y) * p - w * y * (1.0 - p)) / m)
    return total, grads

def loss_and_gradients(params: RmNetParams, topologies: Sequence[GraphTopology],
                       steps: Optional[int] = None) -> Tuple[float, Tensors]:
    """Batch loss and its gradient w.r.t. every parameter tensor; the weight is computed over the batch."""
    steps = params.steps if steps is None else steps
    graphs = []
    for topo in topologies:
        graph = CovisGraph(topo)
        _encode(graph, params.tensors)
        message_pass(graph, params, steps)
        graphs.append(graph)

    labels = np.concatenate([g.topology.labels for g in graphs])
    stacked = [np.concatenate([g.step_logits[t] for g in graphs]) for t in range(steps)]
    value, d_stacked = loss_and_logit_grads(stacked, labels)

    grads = zeros_like(params.tensors)
    offset = 0
    for g in graphs:
        m = g.topology.n_cross
        _backward(g, params.tensors, [d[offset:offset + m] for d in d_stacked], grads)
        offset += m
    return value, grads

# Training

@dataclass(frozen=True)
class TrainResult:
    params: RmNetParams
    loss_trace: Tuple[float, ...]

def prepare_topologies(dataset: Sequence[FramePair], separation: Optional[SeparationConfig] = None,
                       seed: int = 0) -> List[GraphTopology]:
    """Separate both frames of every pair and keep the graphs that can be built."""
    topologies = []
    for pair in dataset:
        ego = separate_frame(pair.ego_frame, separation, seed, pair.frame_id)
        cav = separate_frame(pair.cav_frame, separation, seed, pair.frame_id)
        try:
            topologies.append(build_topology(ego, cav))
        except EmptyFrameError:
            logger.debug(f"Frame {pair.frame_id} has an empty side; skipped for training")
    return topologies

def train(dataset: Sequence[Union[FramePair, GraphTopology]], config: Optional[MatchConfig] = None, seed: int = 0,
          separation: Optional[SeparationConfig] = None) -> TrainResult:
    """
    Fit all network parameters with Adam on the weighted cross-entropy.

    Raises:
        InvalidParamError: no positive or no negative cross edges in the dataset
        DivergenceError: the loss becomes non-finite
    """
    config = config or MatchConfig()
    pairs = [d for d in dataset if isinstance(d, FramePair)]
    topologies = prepare_topologies(pairs, separation, seed) if pairs else []
    topologies += [d for d in dataset if isinstance(d, GraphTopology)]
    labels = np.concatenate([t.labels for t in topologies]) if topologies else np.zeros(0)
    if labels.size == 0 or labels.sum() == 0 or labels.sum() == labels.size:
        logger.info("Training set lacks positive or negative cross edges")
        raise InvalidParamError("Training needs both positive and negative cross edges")

    params = RmNetParams.initialize(seed, config.hidden_width, config.steps, config.threshold)
    tensors = params.mutable()
    working = RmNetParams(tensors, config.hidden_width, config.steps, config.threshold)
    optimizer = Adam(tensors, lr=config.learning_rate)
    rng = np.random.default_rng(seed)
    trace = []
    logger.info(f"Training on {len(topologies)} graphs, {int(labels.sum())} positive of {labels.size} cross edges")

    for epoch in range(config.epochs):
        order = rng.permutation(len(topologies))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [topologies[k] for k in order[start:start + config.batch_size]]
            value, grads = loss_and_gradients(working, batch)
            if not math.isfinite(value) or not all_finite(grads.values()):
                logger.error(f"Loss diverged at epoch {epoch}: {value}")
                raise DivergenceError(f"Non-finite loss at epoch {epoch}")
            optimizer.step(tensors, grads)
            batch_losses.append(value)
        trace.append(float(np.mean(batch_losses)))
        logger.debug(f"epoch {epoch + 1}/{config.epochs}: loss {trace[-1]:.5f}")

    return TrainResult(working.frozen(), tuple(trace))

def infer(topology: GraphTopology, params: RmNetParams, threshold: Optional[float] = None) -> MatchResult:
    graph = CovisGraph(topology, ego_clusters=list(range(topology.n_ego)),
                       cav_clusters=list(range(topology.n_cav)))
    _encode(graph, params.tensors)
    message_pass(graph, params)
    return classify_edges(graph, params, threshold)

def match_scores(results: Sequence[MatchResult], topologies: Sequence[GraphTopology]) -> Tuple[float, float, float]:
    """Precision, recall and F1 of accepted pairs against cross-edge labels."""
    tp = fp = fn = 0
    for result, topo in zip(results, topologies):
        truth = {(int(a), int(b) - topo.n_ego)
                 for a, b, y in zip(topo.cross_ego, topo.cross_cav, topo.labels) if y > 0.5}
        accepted = set(result.pairs)
        tp += len(accepted & truth)
        fp += len(accepted - truth)
        fn += len(truth - accepted)
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1

def threshold_sweep(topologies: Sequence[GraphTopology], params: RmNetParams,
                    thresholds: Sequence[float] = tuple(np.round(np.arange(0.05, 1.0, 0.05), 2))
                    ) -> List[Tuple[float, float, float, float]]:
    """(threshold, precision, recall, F1) rows for the precision/recall trade-off."""
    graphs = []
    for topo in topologies:
        graph = CovisGraph(topo, ego_clusters=list(range(topo.n_ego)), cav_clusters=list(range(topo.n_cav)))
        _encode(graph, params.tensors)
        graphs.append(message_pass(graph, params))
    rows = []
    for eta in thresholds:
        results = [classify_edges(g, params, float(eta)) for g in graphs]
        rows.append((float(eta), *match_scores(results, topologies)))
    return rows

# Checkpoints

def save_params(params: RmNetParams, path: Union[str, Path]) -> None:
    """
    Layout (little-endian): magic 'RMNT', u16 version, u16 steps, f64 threshold,
    u32 hidden width, u32 tensor count; then per tensor u16 name length, name,
    u8 rank, u32 dims; then every tensor as row-major f64 in table order.
    """
    names = sorted(params.tensors)
    parts = [_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, params.steps, params.threshold,
                          params.hidden_width, len(names))]
    for name in names:
        shape = params.tensors[name].shape
        encoded = name.encode('utf-8')
        parts.append(struct.pack('<H', len(encoded)) + encoded)
        parts.append(struct.pack(f'<B{len(shape)}I', len(shape), *shape))
    for name in names:
        parts.append(np.ascontiguousarray(params.tensors[name], dtype='<f8').tobytes())
    Path(path).write_bytes(b''.join(parts))
    logger.debug(f"Saved {len(names)} tensors to {path}")

def load_params(path: Union[str, Path], hidden_width: Optional[int] = None) -> RmNetParams:
    """
    Read a checkpoint written by ``save_params``.

    Raises:
        CheckpointError: missing file, wrong magic or version, truncation, or a
            tensor table that does not match the network shapes
    """
    p = Path(path)
    if not p.is_file():
        logger.info(f"Checkpoint not found: {p}")
        raise CheckpointError(f"Checkpoint not found: {p}")
    data = p.read_bytes()
    try:
        magic, version, steps, threshold, hidden, count = _HEADER.unpack_from(data, 0)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"Bad checkpoint magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"Unsupported checkpoint version {version}")
        if hidden_width is not None and hidden != hidden_width:
            raise CheckpointError(f"Checkpoint hidden width {hidden} does not match {hidden_width}")
        offset = _HEADER.size
        table = []
        for _ in range(count):
            (name_len,) = struct.unpack_from('<H', data, offset)
            offset += 2
            name = data[offset:offset + name_len].decode('utf-8')
            offset += name_len
            (rank,) = struct.unpack_from('<B', data, offset)
            offset += 1
            shape = struct.unpack_from(f'<{rank}I', data, offset)
            offset += 4 * rank
            table.append((name, tuple(shape)))

        expected = RmNetParams.shapes(hidden)
        if dict(table) != expected or len(table) != len(expected):
            raise CheckpointError("Checkpoint tensor table does not match the network shapes")

        tensors = {}
        for name, shape in table:
            size = int(np.prod(shape)) * 8
            if offset + size > len(data):
                raise CheckpointError(f"Checkpoint truncated in tensor {name}")
            tensors[name] = np.frombuffer(data, dtype='<f8', count=size // 8, offset=offset).reshape(shape).astype(np.float64)
            offset += size
        if offset != len(data):
            raise CheckpointError(f"{len(data) - offset} trailing bytes in checkpoint")
    except (struct.error, UnicodeDecodeError) as e:
        logger.info(f"Malformed checkpoint {p}", e)
        raise CheckpointError(f"Malformed checkpoint {p}", e)

    params = RmNetParams(tensors, hidden, steps, threshold)
    if not params.is_finite():
        raise CheckpointError("Checkpoint contains non-finite weights")
    return params.frozen()
