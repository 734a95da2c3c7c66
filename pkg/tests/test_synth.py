import numpy as np
import pytest

from oracles import dfs_path_counts
from regather.graph import graph_paths, load_features, load_graph, load_labels, validate
from regather.model import ModelConfig
from regather.relations import build_relation_set
from regather.synth import SynthSpec, SynthSpecError, dblp_like_spec, generate
from regather.training import SplitSpec, TrainConfig, make_split, train, trial_seeds


def rule_signature(data, spec):
    c = data.graph.num_edge_types
    return [data.graph.edge_type_id(name) + (c if rev else 0) for name, rev in spec.rule]


@pytest.mark.parametrize("order", [2, 3])
def test_labels_follow_rule_paths(order):
    spec = dblp_like_spec(seed=1, rule_order=order)
    data = generate(spec)
    counts = dfs_path_counts(data.graph, rule_signature(data, spec))
    reach = counts[np.ix_(data.labels.vertices, data.terminals)]
    assert (reach > 0).sum(axis=1).tolist() == [1] * len(data.labels.vertices)
    np.testing.assert_array_equal(reach.argmax(axis=1), data.labels.classes)
    assert validate(data.graph) == []


def test_default_fixture_shape():
    data = generate(dblp_like_spec(seed=0))
    g = data.graph
    assert g.vertex_type_names == ("author", "paper", "venue", "term")
    assert g.edge_type_names == ("cites", "writes", "publishes", "has_term")
    assert 280 <= g.num_vertices <= 320
    assert np.bincount(data.labels.classes).tolist() == [50, 50]
    assert data.features.shape == (g.num_vertices, 32)


def test_planted_degree_does_not_reveal_class():
    spec = dblp_like_spec(seed=2)
    data = generate(spec)
    writes = data.graph.edges[data.graph.edge_type_id("writes")]
    planted = {int(v): 0 for v in data.labels.vertices}
    # background vertices come first, then the terminals, then the fresh chain vertices
    first_chain = sum(spec.vertex_counts.values()) + spec.num_classes
    chain_papers = set(range(first_chain, data.graph.num_vertices))
    for s, d in writes.tolist():
        if s in planted and d in chain_papers:
            planted[s] += 1
    assert set(planted.values()) == {1}


def test_zero_densities_leave_only_rule_edges():
    base = dblp_like_spec(seed=0, scale=0.3)
    spec = SynthSpec(base.vertex_counts, base.schema, {}, base.rule, seed=0)
    data = generate(spec)
    n_targets = len(data.labels.vertices)
    per_type = {n: len(e) for n, e in zip(data.graph.edge_type_names, data.graph.edges)}
    assert per_type == {"cites": 0, "writes": 2 * n_targets, "publishes": 0, "has_term": 0}


def test_same_seed_same_output(tmp_path):
    a = generate(dblp_like_spec(seed=5))
    b = generate(dblp_like_spec(seed=5))
    assert a.graph == b.graph
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels.classes, b.labels.classes)
    assert generate(dblp_like_spec(seed=6)).graph != a.graph


def test_written_files_round_trip(tmp_path):
    data = generate(dblp_like_spec(seed=0, scale=0.3))
    data.write(tmp_path)
    p = graph_paths(tmp_path)
    g = load_graph(p["vertices"], p["edges"], p["schema"])
    assert g == data.graph
    np.testing.assert_array_equal(load_features(p["features"], g.num_vertices), data.features)
    assert load_labels(p["labels"], g).as_dict() == data.labels.as_dict()


def test_feature_modes():
    onehot = generate(dblp_like_spec(seed=0, scale=0.3, feature_mode="onehot"))
    np.testing.assert_array_equal(onehot.features, np.eye(onehot.graph.num_vertices))
    corr = generate(dblp_like_spec(seed=0, scale=0.3, feature_mode="correlated"))
    x, lab = corr.features, corr.labels
    gap = x[lab.vertices[lab.classes == 0]].mean(0) - x[lab.vertices[lab.classes == 1]].mean(0)
    assert np.linalg.norm(gap) > 3
    with pytest.raises(SynthSpecError, match="feature mode"):
        generate(SynthSpec(**{**dblp_like_spec().__dict__, "feature_mode": "text"}))


def test_degenerate_specs():
    base = dblp_like_spec()
    with pytest.raises(SynthSpecError, match="populate"):
        generate(SynthSpec({**base.vertex_counts, "author": 1}, base.schema, base.densities, base.rule))
    with pytest.raises(SynthSpecError, match="starts at"):
        generate(SynthSpec(base.vertex_counts, base.schema, base.densities, (("writes", False), ("writes", False))))
    with pytest.raises(SynthSpecError, match="unknown edge type"):
        generate(SynthSpec(base.vertex_counts, base.schema, base.densities, (("reads", False),)))
    with pytest.raises(SynthSpecError, match="rule_order"):
        dblp_like_spec(rule_order=4)


def mean_test_micro(K, trials, dtype="float32"):
    scores = []
    for seed in trial_seeds(0, trials):
        data = generate(dblp_like_spec(seed=seed % 1000))
        relset = build_relation_set(data.graph, K)
        split = make_split(data.labels, SplitSpec(seed=seed))
        cfg = ModelConfig(d_in=data.features.shape[1], num_classes=2, K=K, seed=seed, dtype=dtype)
        report, _ = train(data.features, data.labels, relset, cfg, TrainConfig(), split)
        scores.append(report.test_micro_f1)
    return float(np.mean(scores))


def test_order_below_rule_does_not_separate():
    assert mean_test_micro(K=1, trials=3) < 70.0


def test_order_equal_to_rule_separates():
    assert mean_test_micro(K=2, trials=1) >= 95.0
