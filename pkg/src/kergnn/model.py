"""Trainable model: graph filters, kernel layers, readout, and MLP head.

A layer holds d_l graph filters (small trainable graphs). Its forward pass
extracts every node's padded neighborhood subgraph, evaluates the random walk
kernel between that subgraph (carrying the current feature maps as node
attributes) and each filter, and uses the d_l kernel values as the node's new
feature map. The graph readout concatenates per-layer node-feature sums,
including layer 0, and an MLP maps the readout to class logits.

All forward/backward code is plain dense numpy; `backward_graph` implements
reverse-mode differentiation through the MLP, the readout, and every kernel
layer back to the filter parameters and the optional input linear map.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict

import numpy as np

from .errors import CheckpointError, ConfigError
from .graphs import Graph, SubgraphStack, stack_subgraphs
from .kernels import (
    RWKernelConfig,
    stacked_kernel_backward,
    stacked_kernel_forward,
)

__all__ = [
    "GraphFilter",
    "KerGNNLayer",
    "LayerSpec",
    "ModelConfig",
    "ModelParams",
    "init_params",
    "named_parameters",
    "layer_forward",
    "model_forward",
    "forward_graph",
    "backward_graph",
    "graph_stacks",
    "export_filters",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1


@dataclass
class GraphFilter:
    """Small trainable graph: symmetric zero-diagonal adjacency + attributes."""

    n_nodes: int
    adjacency: np.ndarray
    attributes: np.ndarray

    def validate(self):
        if self.adjacency.shape != (self.n_nodes, self.n_nodes):
            raise ConfigError("filter adjacency shape mismatch")
        if not np.allclose(self.adjacency, self.adjacency.T):
            raise ConfigError("filter adjacency must be symmetric")
        if np.any(np.diag(self.adjacency) != 0):
            raise ConfigError("filter adjacency must have zero diagonal")
        if self.attributes.shape[0] != self.n_nodes:
            raise ConfigError("filter attributes must have one row per node")


@dataclass
class KerGNNLayer:
    filters: list
    kernel_cfg: RWKernelConfig
    hops: int
    k_max: int
    deep_weights: list | None = None  # one (n_nodes, k_max) matrix per filter

    @property
    def out_dim(self) -> int:
        return len(self.filters)

    @property
    def in_dim(self) -> int:
        return self.filters[0].attributes.shape[1]

    def validate(self):
        n = self.filters[0].n_nodes
        d = self.in_dim
        for filt in self.filters:
            filt.validate()
            if filt.n_nodes != n or filt.attributes.shape[1] != d:
                raise ConfigError("filters in a layer must share node count and width")
        if self.kernel_cfg.is_deep:
            if self.deep_weights is None or len(self.deep_weights) != len(self.filters):
                raise ConfigError("deep variant needs one weight matrix per filter")
            for w in self.deep_weights:
                if w.shape != (n, self.k_max):
                    raise ConfigError("deep weights must have shape (filter_nodes, k_max)")


@dataclass(frozen=True)
class LayerSpec:
    num_filters: int
    filter_nodes: int
    k_max: int
    hops: int = 1


@dataclass(frozen=True)
class ModelConfig:
    """Structural hyperparameters; everything init_params needs."""

    attr_dim: int
    num_classes: int
    layers: tuple
    walk_length: int = 2
    lambdas: tuple | None = None
    kernel_variant: str = "plain"
    input_map_dim: int | None = None
    mlp_hidden: tuple = (32,)
    dropout: float = 0.0
    post_relu: bool = False

    def __post_init__(self):
        object.__setattr__(
            self,
            "layers",
            tuple(ls if isinstance(ls, LayerSpec) else LayerSpec(**ls) for ls in self.layers),
        )
        object.__setattr__(self, "mlp_hidden", tuple(int(h) for h in self.mlp_hidden))
        if self.lambdas is not None:
            object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        if self.attr_dim < 1 or self.num_classes < 1:
            raise ConfigError("attr_dim and num_classes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.input_map_dim is not None and self.input_map_dim < 1:
            raise ConfigError("input_map_dim must be positive")
        for ls in self.layers:
            if min(ls.num_filters, ls.filter_nodes, ls.k_max, ls.hops) < 1:
                raise ConfigError("layer sizes must be positive")
        if any(h < 1 for h in self.mlp_hidden):
            raise ConfigError("mlp hidden dims must be positive")

    def kernel_cfg(self) -> RWKernelConfig:
        return RWKernelConfig(self.walk_length, self.lambdas, self.kernel_variant)

    def width_after_input(self) -> int:
        return self.input_map_dim if self.input_map_dim is not None else self.attr_dim

    def readout_dim(self) -> int:
        return self.width_after_input() + sum(ls.num_filters for ls in self.layers)


@dataclass
class ModelParams:
    config: ModelConfig
    layers: list
    mlp: list  # [(weight, bias), ...], last maps to logits
    input_map: tuple | None = None  # (weight, bias)

    @property
    def dropout(self) -> float:
        return self.config.dropout


def _build_params(config: ModelConfig) -> ModelParams:
    """Zero-initialized parameter containers with the configured shapes."""
    kernel_cfg = config.kernel_cfg()
    d_in = config.width_after_input()
    layers = []
    for ls in config.layers:
        filters = [
            GraphFilter(ls.filter_nodes, np.zeros((ls.filter_nodes, ls.filter_nodes)),
                        np.zeros((ls.filter_nodes, d_in)))
            for _ in range(ls.num_filters)
        ]
        deep = None
        if kernel_cfg.is_deep:
            deep = [np.ones((ls.filter_nodes, ls.k_max)) for _ in range(ls.num_filters)]
        layers.append(KerGNNLayer(filters, kernel_cfg, ls.hops, ls.k_max, deep))
        d_in = ls.num_filters

    mlp = []
    width = config.readout_dim()
    for h in list(config.mlp_hidden) + [config.num_classes]:
        mlp.append((np.zeros((width, h)), np.zeros(h)))
        width = h

    input_map = None
    if config.input_map_dim is not None:
        input_map = (np.zeros((config.attr_dim, config.input_map_dim)),
                     np.zeros(config.input_map_dim))
    return ModelParams(config=config, layers=layers, mlp=mlp, input_map=input_map)


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Randomly initialized parameters.

    Filter attributes ~ N(0, 1/sqrt(d_in)); filter adjacency upper triangle
    ~ U[0, 1) mirrored symmetric; affine maps ~ U(+-1/sqrt(fan_in)); deep
    pair weights start at 1.
    """
    params = _build_params(config)
    if params.input_map is not None:
        w, b = params.input_map
        bound = 1.0 / np.sqrt(w.shape[0])
        w[:] = rng.uniform(-bound, bound, w.shape)
        b[:] = rng.uniform(-bound, bound, b.shape)
    for layer in params.layers:
        d_in = layer.in_dim
        for filt in layer.filters:
            n = filt.n_nodes
            iu = np.triu_indices(n, k=1)
            upper = rng.random(len(iu[0]))
            filt.adjacency[iu] = upper
            filt.adjacency[(iu[1], iu[0])] = upper
            filt.attributes[:] = rng.normal(0.0, 1.0 / np.sqrt(d_in), filt.attributes.shape)
        layer.validate()
    for w, b in params.mlp:
        bound = 1.0 / np.sqrt(w.shape[0])
        w[:] = rng.uniform(-bound, bound, w.shape)
        b[:] = rng.uniform(-bound, bound, b.shape)
    return params


def named_parameters(params: ModelParams) -> list:
    """Stable (name, array) list of every trainable tensor."""
    out = []
    if params.input_map is not None:
        out.append(("input_map.weight", params.input_map[0]))
        out.append(("input_map.bias", params.input_map[1]))
    for l, layer in enumerate(params.layers):
        for i, filt in enumerate(layer.filters):
            out.append((f"layers.{l}.filters.{i}.adjacency", filt.adjacency))
            out.append((f"layers.{l}.filters.{i}.attributes", filt.attributes))
        if layer.deep_weights is not None:
            for i, w in enumerate(layer.deep_weights):
                out.append((f"layers.{l}.deep_weights.{i}", w))
    for j, (w, b) in enumerate(params.mlp):
        out.append((f"mlp.{j}.weight", w))
        out.append((f"mlp.{j}.bias", b))
    return out


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def graph_stacks(g: Graph, params: ModelParams) -> list:
    """One SubgraphStack per layer; reusable across epochs (topology only)."""
    return [stack_subgraphs(g, layer.hops, layer.k_max) for layer in params.layers]


def _layer_arrays(layer: KerGNNLayer):
    attr_h = np.stack([f.attributes for f in layer.filters])
    adj_h = np.stack([f.adjacency for f in layer.filters])
    pows_h = []
    power = None
    for _ in range(layer.kernel_cfg.P):
        power = adj_h if power is None else power @ adj_h
        pows_h.append(power)
    weights = np.stack(layer.deep_weights) if layer.kernel_cfg.is_deep else None
    return attr_h, pows_h, weights


def _layer_apply(layer: KerGNNLayer, stack: SubgraphStack, feats: np.ndarray, post_relu: bool):
    if feats.shape[1] != layer.in_dim:
        raise ValueError(
            f"feature width {feats.shape[1]} does not match layer input width {layer.in_dim}"
        )
    attr_h, pows_h, weights = _layer_arrays(layer)
    x_sub = stack.gather(feats)
    pows_g = stack.powers(layer.kernel_cfg.P)
    values, cache = stacked_kernel_forward(attr_h, pows_h, x_sub, pows_g, layer.kernel_cfg, weights)
    pre = values
    if post_relu:
        values = np.maximum(values, 0.0)
    return values, (cache, pre)


def layer_forward(g: Graph, feats: np.ndarray, layer: KerGNNLayer, post_relu: bool = False,
                  stack: SubgraphStack | None = None) -> np.ndarray:
    """Per-node kernel values (num_nodes, d_l) against every filter."""
    if stack is None:
        stack = stack_subgraphs(g, layer.hops, layer.k_max)
    values, _ = _layer_apply(layer, stack, np.asarray(feats, dtype=np.float64), post_relu)
    return values


@dataclass
class GraphForward:
    """Everything backward_graph needs from one graph's forward pass."""

    feats: list  # feats_0..feats_L, each (num_nodes, d_l)
    layer_caches: list
    readout: np.ndarray
    mlp_inputs: list
    dropout_masks: list
    logits: np.ndarray
    raw_attributes: np.ndarray
    stacks: list


def forward_graph(g: Graph, params: ModelParams, train: bool = False,
                  rng: np.random.Generator | None = None,
                  stacks: list | None = None) -> GraphForward:
    cfg = params.config
    if g.attr_dim != cfg.attr_dim:
        raise ValueError(f"graph attribute width {g.attr_dim} != model width {cfg.attr_dim}")
    if stacks is None:
        stacks = graph_stacks(g, params)

    feats0 = g.attributes
    if params.input_map is not None:
        w, b = params.input_map
        feats0 = feats0 @ w + b
    feats = [feats0]
    layer_caches = []
    for layer, stack in zip(params.layers, stacks):
        values, cache = _layer_apply(layer, stack, feats[-1], cfg.post_relu)
        layer_caches.append(cache)
        feats.append(values)

    readout = np.concatenate([f.sum(axis=0) for f in feats])

    h = readout
    mlp_inputs, masks = [], []
    p_drop = cfg.dropout if train else 0.0
    for j, (w, b) in enumerate(params.mlp):
        mlp_inputs.append(h)
        a = h @ w + b
        if j < len(params.mlp) - 1:
            z = np.maximum(a, 0.0)
            if p_drop > 0.0:
                if rng is None:
                    raise ValueError("train-mode dropout requires an rng")
                mask = (rng.random(z.shape) >= p_drop) / (1.0 - p_drop)
            else:
                mask = np.ones_like(z)
            masks.append(mask)
            h = z * mask
        else:
            h = a
    return GraphForward(feats=feats, layer_caches=layer_caches, readout=readout,
                        mlp_inputs=mlp_inputs, dropout_masks=masks, logits=h,
                        raw_attributes=g.attributes, stacks=stacks)


def model_forward(g: Graph, params: ModelParams, mode: str = "eval",
                  rng: np.random.Generator | None = None):
    """Logits plus the per-layer node feature maps for introspection."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    fwd = forward_graph(g, params, train=(mode == "train"), rng=rng)
    return fwd.logits, fwd.feats


def backward_graph(fwd: GraphForward, dlogits: np.ndarray, params: ModelParams) -> dict:
    """Gradients of <dlogits, logits> with respect to every trainable tensor."""
    cfg = params.config
    grads: dict = {}

    # MLP head
    dh = dlogits
    for j in reversed(range(len(params.mlp))):
        w, _ = params.mlp[j]
        h_in = fwd.mlp_inputs[j]
        if j < len(params.mlp) - 1:
            dh = dh * fwd.dropout_masks[j]
            a = h_in @ w + params.mlp[j][1]
            dh = dh * (a > 0)
        grads[f"mlp.{j}.weight"] = np.outer(h_in, dh)
        grads[f"mlp.{j}.bias"] = dh.copy()
        dh = dh @ w.T
    dreadout = dh

    # split readout gradient back into per-layer blocks
    widths = [f.shape[1] for f in fwd.feats]
    offsets = np.cumsum([0] + widths)
    dblocks = [dreadout[offsets[l]: offsets[l + 1]] for l in range(len(widths))]

    # kernel layers, last to first
    num_nodes = fwd.feats[0].shape[0]
    carry = np.zeros_like(fwd.feats[-1])
    for l in reversed(range(len(params.layers))):
        layer = params.layers[l]
        stack = fwd.stacks[l]
        cache, pre = fwd.layer_caches[l]
        gout = carry + np.broadcast_to(dblocks[l + 1], fwd.feats[l + 1].shape)
        if cfg.post_relu:
            gout = gout * (pre > 0)
        d_xh, d_adj, d_w, d_xsub = stacked_kernel_backward(cache, gout)
        for i in range(len(layer.filters)):
            grads[f"layers.{l}.filters.{i}.adjacency"] = d_adj[i]
            grads[f"layers.{l}.filters.{i}.attributes"] = d_xh[i]
            if d_w is not None:
                grads[f"layers.{l}.deep_weights.{i}"] = d_w[i]
        # padded slots are structurally zero; mask before scattering back
        contrib = d_xsub * stack.mask[:, :, None]
        carry = np.zeros((num_nodes, layer.in_dim))
        np.add.at(carry, stack.gather_idx.ravel(), contrib.reshape(-1, layer.in_dim))

    dfeats0 = carry + np.broadcast_to(dblocks[0], fwd.feats[0].shape)
    if params.input_map is not None:
        grads["input_map.weight"] = fwd.raw_attributes.T @ dfeats0
        grads["input_map.bias"] = dfeats0.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# Interpretability export
# ---------------------------------------------------------------------------


def export_filters(params: ModelParams, out_dir: str) -> list:
    """One DOT file per filter per layer.

    Edges are the ReLU-pruned positive adjacency entries with their value as
    the weight attribute; node size is the L2 norm of the attribute row.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for l, layer in enumerate(params.layers, start=1):
        for i, filt in enumerate(layer.filters):
            lines = [f"graph layer{l}_filter{i} {{", "  node [shape=circle];"]
            norms = np.linalg.norm(filt.attributes, axis=1)
            for v in range(filt.n_nodes):
                lines.append(f"  {v} [width={norms[v]:.6g}];")
            pruned = np.maximum(filt.adjacency, 0.0)
            for v in range(filt.n_nodes):
                for u in range(v + 1, filt.n_nodes):
                    if pruned[v, u] > 0:
                        lines.append(f"  {v} -- {u} [weight={pruned[v, u]:.6g}];")
            lines.append("}")
            path = os.path.join(out_dir, f"layer{l}_filter{i}.dot")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("\n".join(lines) + "\n")
            written.append(path)
    return written


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str, params: ModelParams, seed: int, extra: dict | None = None) -> None:
    """Self-describing JSON container: config, seed, and all named tensors."""
    tensors = {
        name: {"shape": list(arr.shape), "data": np.asarray(arr, dtype=np.float64).ravel().tolist()}
        for name, arr in named_parameters(params)
    }
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": "kergnn-checkpoint",
        "config": asdict(params.config),
        "seed": int(seed),
        "extra": extra or {},
        "tensors": tensors,
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path: str):
    """(ModelParams, seed, extra) from a checkpoint written by save_checkpoint."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupted checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("kind") != "kergnn-checkpoint":
        raise CheckpointError(f"{path} is not a model checkpoint")
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {version} not supported (expected {CHECKPOINT_VERSION})"
        )
    try:
        config = ModelConfig(**payload["config"])
        params = _build_params(config)
        tensors = payload["tensors"]
        for name, arr in named_parameters(params):
            entry = tensors[name]
            data = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
            if data.shape != arr.shape:
                raise CheckpointError(f"tensor {name} has shape {data.shape}, expected {arr.shape}")
            arr[:] = data
        seed = int(payload["seed"])
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupted checkpoint {path}: {exc}") from exc
    return params, seed, payload.get("extra", {})
