import json

import numpy as np
import pytest

from kergnn.errors import CheckpointError, ConfigError
from kergnn.graphs import Graph, extract_subgraph
from kergnn.kernels import RWKernelConfig, rw_kernel, rw_kernel_oracle
from kergnn.model import (
    GraphFilter,
    KerGNNLayer,
    LayerSpec,
    ModelConfig,
    backward_graph,
    export_filters,
    forward_graph,
    init_params,
    layer_forward,
    load_checkpoint,
    model_forward,
    named_parameters,
    save_checkpoint,
)
from kergnn.training import softmax_cross_entropy

from conftest import hexagon, random_filter, random_graph, two_triangles


def small_config(**over):
    base = dict(
        attr_dim=2,
        num_classes=2,
        layers=(LayerSpec(num_filters=3, filter_nodes=3, k_max=6, hops=1),),
        walk_length=2,
        mlp_hidden=(4,),
    )
    base.update(over)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# Layer forward
# ---------------------------------------------------------------------------


def test_layer_forward_zero_features_give_zero():
    rng = np.random.default_rng(0)
    g = random_graph(rng, 6, 0.5, d=2)
    params = init_params(small_config(), rng)
    out = layer_forward(g, np.zeros((6, 2)), params.layers[0])
    assert np.array_equal(out, np.zeros((6, 3)))


def test_layer_forward_single_node_p0_is_squared_dot():
    g = Graph(1, np.zeros((1, 1)), np.array([[2.0, -1.0]]))
    filt = GraphFilter(1, np.zeros((1, 1)), np.array([[0.5, 3.0]]))
    layer = KerGNNLayer([filt], RWKernelConfig(0), hops=1, k_max=1)
    out = layer_forward(g, g.attributes, layer)
    assert out[0, 0] == pytest.approx(np.dot([2.0, -1.0], [0.5, 3.0]) ** 2)


def test_layer_forward_separates_hexagon_from_triangles():
    # every hexagon subgraph is a 3-path, every two-triangles subgraph a
    # 3-clique; one random filter suffices to tell them apart
    rng = np.random.default_rng(1)
    filt = random_filter(rng, 3, 1)
    layer = KerGNNLayer([filt], RWKernelConfig(2), hops=1, k_max=10)
    out_hex = layer_forward(hexagon(), hexagon().attributes, layer)
    out_tri = layer_forward(two_triangles(), two_triangles().attributes, layer)
    assert abs(out_hex[0, 0] - out_tri[0, 0]) > 1e-6
    # node outputs agree with the direct-product oracle on the subgraphs
    sub_hex = extract_subgraph(hexagon(), 0, 1, 10)
    ref = rw_kernel_oracle(
        (filt.adjacency, filt.attributes),
        (sub_hex.adjacency[:3, :3], sub_hex.attributes[:3]),
        RWKernelConfig(2),
    )
    assert out_hex[0, 0] == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("variant", ["plain", "deep"])
def test_layer_forward_matches_scalar_kernel(variant):
    rng = np.random.default_rng(2)
    g = random_graph(rng, 7, 0.5, d=3)
    cfg = small_config(attr_dim=3, kernel_variant=variant, walk_length=3)
    params = init_params(cfg, rng)
    layer = params.layers[0]
    feats = rng.normal(size=(7, 3))
    out = layer_forward(g, feats, layer)
    for v in range(7):
        sub = extract_subgraph(g, v, layer.hops, layer.k_max).with_attributes(feats)
        for i, filt in enumerate(layer.filters):
            w = layer.deep_weights[i] if layer.kernel_cfg.is_deep else None
            assert out[v, i] == pytest.approx(rw_kernel(sub, filt, layer.kernel_cfg, w), rel=1e-9)


def test_layer_forward_width_mismatch():
    rng = np.random.default_rng(3)
    g = random_graph(rng, 5, 0.5, d=2)
    params = init_params(small_config(), rng)
    with pytest.raises(ValueError):
        layer_forward(g, np.zeros((5, 7)), params.layers[0])


# ---------------------------------------------------------------------------
# Model forward
# ---------------------------------------------------------------------------


def test_model_without_layers_reads_out_attribute_sum():
    rng = np.random.default_rng(4)
    cfg = ModelConfig(attr_dim=1, num_classes=2, layers=(), mlp_hidden=(3,))
    params = init_params(cfg, rng)
    g = Graph(3, np.zeros((3, 3)), np.ones((3, 1)))
    logits, feats = model_forward(g, params)
    assert len(feats) == 1
    assert feats[0].sum(axis=0) == pytest.approx([3.0])
    assert logits.shape == (2,)


def test_model_forward_deterministic():
    rng = np.random.default_rng(5)
    g = random_graph(rng, 6, 0.5, d=2)
    params = init_params(small_config(), np.random.default_rng(77))
    l1, _ = model_forward(g, params)
    l2, _ = model_forward(g, params)
    assert np.array_equal(l1, l2)


def test_same_seed_same_parameters():
    p1 = init_params(small_config(), np.random.default_rng(123))
    p2 = init_params(small_config(), np.random.default_rng(123))
    for (n1, a1), (n2, a2) in zip(named_parameters(p1), named_parameters(p2)):
        assert n1 == n2
        assert np.array_equal(a1, a2)


def test_permutation_invariance_of_logits():
    rng = np.random.default_rng(6)
    for _ in range(5):
        n = int(rng.integers(4, 9))
        g = random_graph(rng, n, 0.5, d=2)
        cfg = small_config(layers=(LayerSpec(3, 3, k_max=n, hops=1),))
        params = init_params(cfg, rng)
        base, _ = model_forward(g, params)
        for _ in range(20):
            perm = rng.permutation(n)
            permuted, _ = model_forward(g.relabeled(perm), params)
            assert np.max(np.abs(permuted - base)) <= 1e-10


def test_zero_input_collapse():
    rng = np.random.default_rng(7)
    g = Graph(5, random_graph(rng, 5, 0.6).adjacency, np.zeros((5, 2)))
    params = init_params(small_config(), rng)
    logits, feats = model_forward(g, params)
    for f in feats[1:]:
        assert np.array_equal(f, np.zeros_like(f))
    # forwarding a zero readout through the MLP by hand: only biases matter
    h = np.zeros(params.mlp[0][0].shape[0])
    for j, (w, b) in enumerate(params.mlp):
        h = h @ w + b
        if j < len(params.mlp) - 1:
            h = np.maximum(h, 0.0)
    assert logits == pytest.approx(h, abs=1e-15)


def test_readout_width_matches_config():
    rng = np.random.default_rng(8)
    cfg = ModelConfig(
        attr_dim=3, num_classes=4,
        layers=(LayerSpec(5, 3, 6, 1), LayerSpec(2, 4, 6, 1)),
        input_map_dim=7, mlp_hidden=(6, 5),
    )
    params = init_params(cfg, rng)
    g = random_graph(rng, 6, 0.5, d=3)
    logits, feats = model_forward(g, params)
    assert [f.shape[1] for f in feats] == [7, 5, 2]
    assert cfg.readout_dim() == 7 + 5 + 2
    assert params.mlp[0][0].shape[0] == cfg.readout_dim()
    assert logits.shape == (4,)


def test_attribute_width_mismatch_rejected():
    rng = np.random.default_rng(9)
    params = init_params(small_config(), rng)
    g = random_graph(rng, 4, 0.5, d=5)
    with pytest.raises(ValueError):
        model_forward(g, params)
    with pytest.raises(ValueError):
        model_forward(random_graph(rng, 4, 0.5, d=2), params, mode="predict")


def test_post_relu_clamps_layer_outputs():
    rng = np.random.default_rng(10)
    g = random_graph(rng, 6, 0.5, d=2)
    params = init_params(small_config(), np.random.default_rng(11))
    relu_params = init_params(small_config(post_relu=True), np.random.default_rng(11))
    _, feats = model_forward(g, params)
    _, feats_relu = model_forward(g, relu_params)
    assert np.array_equal(feats_relu[1], np.maximum(feats[1], 0.0))


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        ModelConfig(attr_dim=0, num_classes=2, layers=())
    with pytest.raises(ConfigError):
        small_config(dropout=1.0)
    with pytest.raises(ConfigError):
        small_config(layers=(LayerSpec(0, 3, 6, 1),))


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def test_init_shapes_and_ranges():
    rng = np.random.default_rng(12)
    cfg = ModelConfig(attr_dim=32, num_classes=2,
                      layers=(LayerSpec(num_filters=4, filter_nodes=8, k_max=10, hops=1),),
                      kernel_variant="deep")
    params = init_params(cfg, rng)
    for filt in params.layers[0].filters:
        assert filt.attributes.shape == (8, 32)
        assert np.array_equal(filt.adjacency, filt.adjacency.T)
        assert np.all(np.diag(filt.adjacency) == 0.0)
        off_diag = filt.adjacency[np.triu_indices(8, 1)]
        assert np.all(off_diag >= 0.0) and np.all(off_diag < 1.0)
    for w in params.layers[0].deep_weights:
        assert np.array_equal(w, np.ones((8, 10)))


# ---------------------------------------------------------------------------
# End-to-end gradients
# ---------------------------------------------------------------------------


def micro_dataset(rng):
    # attributes scaled down so two stacked kernel layers keep logits in a
    # range where the softmax is not saturated (FD needs visible gradients)
    g0 = random_graph(rng, 5, 0.5, d=2, label=0)
    g1 = random_graph(rng, 6, 0.6, d=2, label=1)
    return [
        Graph(g.num_nodes, g.adjacency, 0.1 * g.attributes, graph_label=g.graph_label)
        for g in (g0, g1)
    ]


@pytest.mark.parametrize("variant", ["plain", "deep"])
def test_end_to_end_gradients_match_finite_differences(variant):
    rng = np.random.default_rng(13)
    graphs = micro_dataset(rng)
    cfg = small_config(kernel_variant=variant, input_map_dim=3,
                       layers=(LayerSpec(2, 3, 6, 1), LayerSpec(2, 2, 6, 1)))
    params = init_params(cfg, rng)

    def loss_and_grads():
        total = 0.0
        grads = None
        for g in graphs:
            fwd = forward_graph(g, params)
            loss, dlogits = softmax_cross_entropy(fwd.logits, g.graph_label)
            gi = backward_graph(fwd, dlogits, params)
            total += loss / len(graphs)
            if grads is None:
                grads = {k: v / len(graphs) for k, v in gi.items()}
            else:
                for k in gi:
                    grads[k] += gi[k] / len(graphs)
        return total, grads

    def loss_only():
        return sum(
            softmax_cross_entropy(forward_graph(g, params).logits, g.graph_label)[0]
            for g in graphs
        ) / len(graphs)

    _, grads = loss_and_grads()
    h = 1e-6
    worst = 0.0
    for name, arr in named_parameters(params):
        symmetric = name.endswith("adjacency")
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            if symmetric and idx[0] >= idx[1]:
                continue
            mirror = idx[::-1]
            orig = arr[idx]
            if symmetric:
                arr[idx] = arr[mirror] = orig + h
                up = loss_only()
                arr[idx] = arr[mirror] = orig - h
                down = loss_only()
                arr[idx] = arr[mirror] = orig
                analytic = grads[name][idx] + grads[name][mirror]
            else:
                arr[idx] = orig + h
                up = loss_only()
                arr[idx] = orig - h
                down = loss_only()
                arr[idx] = orig
                analytic = grads[name][idx]
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-6))
    assert worst <= 1e-3


# ---------------------------------------------------------------------------
# Filter export and checkpoints
# ---------------------------------------------------------------------------


def test_export_prunes_negative_adjacency(tmp_path):
    rng = np.random.default_rng(14)
    params = init_params(small_config(layers=(LayerSpec(1, 3, 6, 1),)), rng)
    params.layers[0].filters[0].adjacency[:] = -np.ones((3, 3)) + np.eye(3)
    written = export_filters(params, str(tmp_path))
    assert len(written) == 1
    text = (tmp_path / "layer1_filter0.dot").read_text()
    assert "--" not in text
    assert text.count("[width=") == 3


def test_export_writes_positive_edges(tmp_path):
    rng = np.random.default_rng(15)
    params = init_params(small_config(layers=(LayerSpec(1, 3, 6, 1),)), rng)
    filt = params.layers[0].filters[0]
    filt.adjacency[:] = 0.0
    filt.adjacency[0, 1] = filt.adjacency[1, 0] = 0.7
    export_filters(params, str(tmp_path))
    text = (tmp_path / "layer1_filter0.dot").read_text()
    edge_lines = [ln for ln in text.splitlines() if "--" in ln]
    assert edge_lines == ["  0 -- 1 [weight=0.7];"]


def test_export_one_file_per_filter_per_layer(tmp_path):
    rng = np.random.default_rng(16)
    cfg = small_config(layers=(LayerSpec(2, 3, 6, 1), LayerSpec(3, 2, 6, 1)))
    params = init_params(cfg, rng)
    written = export_filters(params, str(tmp_path))
    assert len(written) == 5


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(17)
    cfg = small_config(kernel_variant="deep", input_map_dim=4)
    params = init_params(cfg, rng)
    path = tmp_path / "model.ckpt"
    save_checkpoint(str(path), params, seed=42, extra={"note": "test"})
    loaded, seed, extra = load_checkpoint(str(path))
    assert seed == 42
    assert extra == {"note": "test"}
    assert loaded.config == params.config
    for (n1, a1), (n2, a2) in zip(named_parameters(params), named_parameters(loaded)):
        assert n1 == n2
        assert np.array_equal(a1, a2)
    g = random_graph(np.random.default_rng(0), 5, 0.5, d=2)
    assert np.array_equal(model_forward(g, params)[0], model_forward(g, loaded)[0])


def test_checkpoint_version_mismatch(tmp_path):
    rng = np.random.default_rng(18)
    params = init_params(small_config(), rng)
    path = tmp_path / "model.ckpt"
    save_checkpoint(str(path), params, seed=0)
    payload = json.loads(path.read_text())
    payload["format_version"] = 999
    path.write_text(json.dumps(payload))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(str(path))


def test_checkpoint_corrupted(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_text("{not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))
    path.write_text('{"kind": "something-else"}')
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))
