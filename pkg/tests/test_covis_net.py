import math

import numpy as np
import pytest

from covis_fusion.covis_net import (CovisGraph, GraphTopology, RmNetParams, build_graph, build_topology,
                                    classify_edges, imbalance_weight, infer, load_params, loss,
                                    loss_and_gradients, match_scores, message_pass, prepare_topologies,
                                    save_params, threshold_sweep, train)
from covis_fusion.scene import canonical_spec, derive_seed
from covis_fusion.pipeline import generate_pairs
from covis_fusion.utils.config import FusionConfig, MatchConfig
from covis_fusion.utils.errors import CheckpointError, EmptyFrameError, InvalidParamError

from .conftest import make_frame, unit_descriptor

EGO_XY = [(25.0, 3.0), (40.0, -4.0), (15.0, -6.0)]
CAV_XY = [(12.0, 5.0), (30.0, 1.0), (22.0, -3.5), (50.0, 8.0)]


def _frames(cav_order=(0, 1, 2, 3)):
    """Ego sees vehicles 10, 11, 12; the CAV sees 11, 12, 13, 14."""
    descs = {vid: unit_descriptor(vid) for vid in range(10, 15)}
    ego = make_frame(EGO_XY, [descs[v] for v in (10, 11, 12)], [10, 11, 12])
    cav_ids = [11, 12, 13, 14]
    order = list(cav_order)
    cav = make_frame([CAV_XY[k] for k in order], [descs[cav_ids[k]] for k in order], [cav_ids[k] for k in order])
    return ego, cav


def _toy_topology():
    ego = make_frame([(20.0, 2.0), (35.0, -5.0)], [unit_descriptor(1), unit_descriptor(2)], [1, 2])
    cav = make_frame([(18.0, -1.0), (27.0, 4.0)], [unit_descriptor(2), unit_descriptor(3)], [2, 3])
    return build_topology(ego, cav)


def test_graph_edge_counts():
    "three ego and four CAV nodes give 3 + 6 local and 12 cross edges"
    topo = build_topology(*_frames())
    assert topo.n_ego == 3 and topo.n_cav == 4
    assert topo.local_src.size == 9
    assert topo.n_cross == 12
    assert topo.labels.sum() == 2


def test_longest_local_edge_has_unit_length_feature():
    topo = build_topology(*_frames())
    ego_edges = topo.local_src < topo.n_ego
    assert topo.local_features[ego_edges, 0].max() == 1.0
    assert topo.local_features[~ego_edges, 0].max() == 1.0
    assert np.all(topo.local_features[:, 0] > 0)


def test_mirror_nodes_have_zero_log_ratios():
    "equal range and azimuth magnitude give zero log-ratio features"
    ego = make_frame([(10.0, 3.0), (10.0, -3.0)], [unit_descriptor(1), unit_descriptor(2)])
    cav = make_frame([(8.0, 0.5)], [unit_descriptor(1)])
    topo = build_topology(ego, cav, with_labels=False)
    assert topo.local_features.shape == (1, 4)
    assert topo.local_features[0, 2] == 0.0
    assert topo.local_features[0, 3] == 0.0
    assert topo.labels is None


def test_local_edges_point_from_farther_node():
    topo = build_topology(*_frames())
    ego, cav = _frames()
    centroids = np.array([c.xy.mean(axis=0) for c in ego.clusters] + [c.xy.mean(axis=0) for c in cav.clusters])
    ranges = np.hypot(centroids[:, 0], centroids[:, 1])
    assert np.all(ranges[topo.local_src] >= ranges[topo.local_dst])
    assert np.all(topo.local_features[:, 2] >= 0)


def test_empty_side_is_rejected():
    ego, cav = _frames()
    empty = make_frame([], [])
    with pytest.raises(EmptyFrameError):
        build_graph(empty, cav, RmNetParams.initialize(0))
    with pytest.raises(EmptyFrameError):
        build_graph(ego, empty, RmNetParams.initialize(0))


def test_message_pass_needs_a_step():
    ego, cav = _frames()
    params = RmNetParams.initialize(0)
    graph = build_graph(ego, cav, params)
    with pytest.raises(InvalidParamError):
        message_pass(graph, params, 0)


def test_message_pass_keeps_every_step():
    ego, cav = _frames()
    params = RmNetParams.initialize(0, steps=3)
    graph = message_pass(build_graph(ego, cav, params), params)
    assert graph.steps_done == 3
    assert len(graph.step_logits) == 3
    assert all(z.shape == (12,) for z in graph.step_logits)


def test_zero_parameters_give_even_odds():
    ego, cav = _frames()
    params = RmNetParams.zeros(hidden_width=8)
    graph = message_pass(build_graph(ego, cav, params), params)
    result = classify_edges(graph, params)
    np.testing.assert_array_equal(result.probabilities, 0.5)


def test_cav_permutation_permutes_probabilities():
    "reordering CAV clusters reorders the probability columns and nothing else"
    params = RmNetParams.initialize(5, hidden_width=16)
    order = (2, 0, 3, 1)
    base = classify_edges(message_pass(build_graph(*_frames(), params), params), params)
    permuted = classify_edges(message_pass(build_graph(*_frames(order), params), params), params)
    np.testing.assert_allclose(permuted.probabilities, base.probabilities[:, list(order)], atol=1e-9)


def _graph_with_logits(logits):
    ego = make_frame([(20.0, 2.0), (35.0, -5.0)], [unit_descriptor(1), unit_descriptor(2)])
    cav = make_frame([(18.0, -1.0), (27.0, 4.0)], [unit_descriptor(1), unit_descriptor(2)])
    params = RmNetParams.zeros(hidden_width=4, steps=1)
    graph = message_pass(build_graph(ego, cav, params), params)
    graph.history[-1].logits = np.asarray(logits, dtype=float)
    return graph, params


def test_matching_is_one_to_one():
    "each cluster joins at most one accepted pair"
    graph, params = _graph_with_logits([3.0, 2.0, 2.5, -1.0])
    result = classify_edges(graph, params, 0.5)
    assert result.pairs == ((0, 0),)
    graph, params = _graph_with_logits([3.0, -2.0, -2.5, 1.0])
    assert classify_edges(graph, params, 0.5).pairs == ((0, 0), (1, 1))


def test_threshold_above_every_probability_accepts_nothing():
    graph, params = _graph_with_logits([3.0, 2.0, 2.5, -1.0])
    result = classify_edges(graph, params, 0.99)
    assert result.pairs == () and result.n_pairs == 0


def test_imbalance_weight():
    assert imbalance_weight(np.r_[1.0, np.zeros(9)]) == 9.0
    assert imbalance_weight(np.zeros(5)) == 1.0


def test_loss_examples():
    "confident correct predictions cost nothing and even odds cost ln 2"
    labels = np.array([1.0, 0.0])
    assert loss([np.array([30.0, -30.0])], labels) < 1e-12
    assert loss([np.zeros(2)], labels) == pytest.approx(math.log(2.0))
    assert loss([np.zeros(2)] * 3, labels) == pytest.approx(3 * math.log(2.0))


def test_positive_weight_scales_missed_positives():
    labels = np.r_[1.0, np.zeros(9)]
    z = np.zeros(10)
    assert loss([z], labels) == pytest.approx((9.0 * math.log(2.0) + 9 * math.log(2.0)) / 10)


def test_gradients_match_finite_differences():
    "analytic gradients agree with central differences for every tensor"
    topo = _toy_topology()
    params = RmNetParams.initialize(3, hidden_width=4, steps=2)
    _, grads = loss_and_gradients(params, [topo], steps=2)

    def value(tensors):
        p = RmNetParams(tensors, 4, 2)
        graph = message_pass(CovisGraph(topo), p, 2)
        return loss(graph.step_logits, topo.labels)

    eps = 1e-6
    tensors = params.mutable()
    for name, g in grads.items():
        numeric = np.zeros_like(g)
        flat = tensors[name].reshape(-1)
        for k in range(flat.size):
            keep = flat[k]
            flat[k] = keep + eps
            plus = value(tensors)
            flat[k] = keep - eps
            minus = value(tensors)
            flat[k] = keep
            numeric.reshape(-1)[k] = (plus - minus) / (2 * eps)
        scale = max(np.linalg.norm(g), np.linalg.norm(numeric))
        if scale < 1e-10:
            continue
        assert np.linalg.norm(g - numeric) / scale < 1e-4, name


def _toy_dataset(n=12, seed=0):
    rng = np.random.default_rng(seed)
    topologies = []
    for k in range(n):
        ids = rng.choice(100, size=5, replace=False)
        ego_ids, cav_ids = list(ids[:3]), list(ids[1:])
        ego = make_frame(rng.uniform([8, -10], [60, 10], size=(3, 2)), [unit_descriptor(int(i)) for i in ego_ids],
                         [int(i) for i in ego_ids])
        cav = make_frame(rng.uniform([8, -10], [60, 10], size=(4, 2)), [unit_descriptor(int(i)) for i in cav_ids],
                         [int(i) for i in cav_ids])
        topologies.append(build_topology(ego, cav))
    return topologies


def test_training_is_deterministic_and_reduces_loss():
    data = _toy_dataset()
    config = MatchConfig(hidden_width=8, steps=2, epochs=30, batch_size=4, learning_rate=1e-2)
    a = train(data, config, seed=1)
    b = train(data, config, seed=1)
    assert a.loss_trace == b.loss_trace
    assert len(a.loss_trace) == 30
    assert a.loss_trace[-1] < a.loss_trace[0]
    for name, t in a.params.tensors.items():
        np.testing.assert_array_equal(t, b.params.tensors[name])
        assert not t.flags.writeable


def test_training_needs_positive_edges():
    ego = make_frame([(20.0, 2.0), (30.0, 1.0)], [unit_descriptor(1), unit_descriptor(2)], [1, 2])
    cav = make_frame([(18.0, -1.0)], [unit_descriptor(3)], [3])
    with pytest.raises(InvalidParamError):
        train([build_topology(ego, cav)], MatchConfig(hidden_width=4, epochs=1))


def test_match_scores_and_sweep():
    data = _toy_dataset(4)
    params = RmNetParams.initialize(0, hidden_width=8, steps=2)
    results = [infer(t, params) for t in data]
    precision, recall, f1 = match_scores(results, data)
    assert 0.0 <= precision <= 1.0 and 0.0 <= recall <= 1.0 and 0.0 <= f1 <= 1.0
    rows = threshold_sweep(data, params)
    assert rows[0][0] == 0.05 and rows[-1][0] == 0.95
    recalls = [r[2] for r in rows]
    assert all(a >= b for a, b in zip(recalls, recalls[1:]))


def test_checkpoint_round_trip(tmp_path):
    params = RmNetParams.initialize(4, hidden_width=8, steps=3, threshold=0.4)
    path = tmp_path / 'net.ckpt'
    save_params(params, path)
    loaded = load_params(path, hidden_width=8)
    assert (loaded.hidden_width, loaded.steps, loaded.threshold) == (8, 3, 0.4)
    assert set(loaded.tensors) == set(params.tensors)
    for name, t in params.tensors.items():
        np.testing.assert_array_equal(loaded.tensors[name], t)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        load_params(tmp_path / 'missing.ckpt')

    path = tmp_path / 'net.ckpt'
    save_params(RmNetParams.initialize(4, hidden_width=8), path)
    data = path.read_bytes()
    with pytest.raises(CheckpointError):
        load_params(path, hidden_width=16)

    for broken in (b'XXXX' + data[4:], data[:-8], data + b'\x00', data[:10]):
        path.write_bytes(broken)
        with pytest.raises(CheckpointError):
            load_params(path)


@pytest.mark.slow
def test_trained_network_matches_held_out_scenes():
    "a network trained on simulated traffic matches co-visible vehicles on new scenes"
    config = FusionConfig()
    specs = [canonical_spec(name, derive_seed(7, k)) for k in range(20)
             for name in ('straight_heavy', 'intersection_heavy', 't_junction_heavy')]
    train_pairs = generate_pairs(specs, config)
    held_out = generate_pairs([canonical_spec('straight_heavy', derive_seed(99, k)) for k in range(20)], config)
    result = train(train_pairs, MatchConfig(epochs=40), seed=0)
    topologies = prepare_topologies(held_out)
    _, _, f1 = match_scores([infer(t, result.params) for t in topologies], topologies)
    assert f1 >= 0.9


def _duplicate_dataset(n, seed):
    """Pairs whose CAV frame is an exact copy of the Ego frame: same centroids, descriptors and ids."""
    rng = np.random.default_rng(seed)
    topologies = []
    for _ in range(n):
        ids = [int(i) for i in rng.choice(1000, size=int(rng.integers(2, 6)), replace=False)]
        xy = rng.uniform([8, -10], [60, 10], size=(len(ids), 2))
        descs = [unit_descriptor(i) for i in ids]
        topologies.append(build_topology(make_frame(xy, descs, ids), make_frame(xy, descs, ids)))
    return topologies


@pytest.mark.slow
def test_noise_free_duplicates_match_perfectly():
    config = MatchConfig(hidden_width=16, steps=2, epochs=200, batch_size=4, learning_rate=5e-3)
    result = train(_duplicate_dataset(40, 0), config, seed=0)
    held_out = _duplicate_dataset(20, 1)
    precision, recall, f1 = match_scores([infer(t, result.params) for t in held_out], held_out)
    assert (precision, recall) == (1.0, 1.0)
    assert f1 == 1.0
