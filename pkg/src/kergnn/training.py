"""Loss, Adam, learning-rate schedule, and the cross-validation harness.

Model assessment follows a stratified 10-fold outer split; model selection
inside each fold uses a stratified 90/10 train/validation split and picks the
grid candidate (and epoch) with the best validation accuracy. The selected
model is evaluated on the held-out fold; fold accuracies are aggregated as
mean +- std.

Everything is driven by integer seeds through numpy SeedSequence spawning, so
(dataset, grid, seed) fully determines the result.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, TrainingError
from .graphs import Dataset, Graph, stack_subgraphs
from .model import (
    LayerSpec,
    ModelConfig,
    ModelParams,
    backward_graph,
    forward_graph,
    init_params,
    named_parameters,
    save_checkpoint,
)

__all__ = [
    "TrainConfig",
    "CVResult",
    "Adam",
    "learning_rate_at",
    "softmax_cross_entropy",
    "train_fold",
    "grid_search",
    "cross_validate",
    "evaluate",
    "stratified_kfold",
    "stratified_split",
    "load_splits",
    "StackCache",
]


@dataclass(frozen=True)
class TrainConfig:
    """Flat training + model hyperparameters (mirrors the JSON config file)."""

    lr: float = 0.01
    lr_half_every: int = 50
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout: float = 0.0
    grad_clip: float | None = None
    num_layers: int = 1
    num_filters: int | tuple = 16
    filter_nodes: int | tuple = 6
    k_max: int = 10
    hops: int = 1
    walk_length: int = 2
    lambdas: tuple | None = None
    kernel_variant: str = "plain"
    input_map_dim: int | None = None
    mlp_hidden: tuple = (32,)
    post_relu: bool = False

    def __post_init__(self):
        for name in ("num_filters", "filter_nodes"):
            v = getattr(self, name)
            if isinstance(v, (list, tuple)):
                object.__setattr__(self, name, tuple(int(x) for x in v))
        if isinstance(self.mlp_hidden, (list, tuple)):
            object.__setattr__(self, "mlp_hidden", tuple(int(h) for h in self.mlp_hidden))
        else:
            object.__setattr__(self, "mlp_hidden", (int(self.mlp_hidden),))
        if self.lambdas is not None:
            object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))

    def _per_layer(self, v) -> list:
        if isinstance(v, tuple):
            if len(v) != self.num_layers:
                raise ConfigError(f"per-layer list has {len(v)} entries for {self.num_layers} layers")
            return list(v)
        return [v] * self.num_layers

    def validate(self):
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr_half_every < 1:
            raise ConfigError("lr_half_every must be >= 1")
        if self.num_layers < 0:
            raise ConfigError("num_layers must be >= 0")
        if self.walk_length < 0:
            raise ConfigError("walk_length must be >= 0")
        if self.kernel_variant not in ("plain", "deep"):
            raise ConfigError(f"unknown kernel variant {self.kernel_variant!r}")
        if self.num_layers > 0:
            for v in self._per_layer(self.num_filters) + self._per_layer(self.filter_nodes):
                if int(v) < 1:
                    raise ConfigError("filter counts and sizes must be >= 1")
            if self.k_max < 1 or self.hops < 1:
                raise ConfigError("k_max and hops must be >= 1")

    def model_config(self, attr_dim: int, num_classes: int) -> ModelConfig:
        filters = self._per_layer(self.num_filters)
        nodes = self._per_layer(self.filter_nodes)
        layers = [
            LayerSpec(num_filters=int(f), filter_nodes=int(n), k_max=self.k_max, hops=self.hops)
            for f, n in zip(filters, nodes)
        ]
        return ModelConfig(
            attr_dim=attr_dim,
            num_classes=num_classes,
            layers=tuple(layers),
            walk_length=self.walk_length,
            lambdas=self.lambdas,
            kernel_variant=self.kernel_variant,
            input_map_dim=self.input_map_dim,
            mlp_hidden=self.mlp_hidden,
            dropout=self.dropout,
            post_relu=self.post_relu,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("num_filters", "filter_nodes", "mlp_hidden", "lambdas"):
            if isinstance(d[key], tuple):
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad training config: {exc}") from exc


@dataclass
class CVResult:
    fold_accuracies: list
    mean: float
    std: float
    selected_configs: list
    epoch_seconds: list
    histories: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "fold_accuracies": self.fold_accuracies,
            "mean": self.mean,
            "std": self.std,
            "selected_configs": self.selected_configs,
        }


def learning_rate_at(cfg: TrainConfig, epoch: int) -> float:
    """Halve the initial rate every lr_half_every epochs (epoch is 0-based)."""
    return cfg.lr * 0.5 ** (epoch // cfg.lr_half_every)


def softmax_cross_entropy(logits: np.ndarray, label: int):
    """(loss, dloss/dlogits) for one graph."""
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    probs = exp / exp.sum()
    loss = -float(np.log(max(probs[label], 1e-300)))
    dlogits = probs.copy()
    dlogits[label] -= 1.0
    return loss, dlogits


class Adam:
    """Standard Adam with bias correction; one slot pair per named tensor."""

    def __init__(self, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named = named_parameters(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(arr) for name, arr in self.named}
        self.v = {name: np.zeros_like(arr) for name, arr in self.named}
        self.t = 0

    def step(self, grads: dict, lr: float):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, arr in self.named:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            arr -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class StackCache:
    """Per-graph subgraph stacks keyed by (graph identity, hops, k_max)."""

    def __init__(self):
        self._stacks = {}

    def stacks_for(self, g: Graph, params: ModelParams) -> list:
        out = []
        for layer in params.layers:
            key = (id(g), layer.hops, layer.k_max)
            if key not in self._stacks:
                self._stacks[key] = stack_subgraphs(g, layer.hops, layer.k_max)
            out.append(self._stacks[key])
        return out


def _graphs_of(data) -> list:
    return list(data.graphs) if isinstance(data, Dataset) else list(data)


def _clone_tensors(params: ModelParams) -> dict:
    return {name: arr.copy() for name, arr in named_parameters(params)}


def _restore_tensors(params: ModelParams, snapshot: dict):
    for name, arr in named_parameters(params):
        arr[:] = snapshot[name]


def evaluate(params: ModelParams, graphs, cache: StackCache | None = None) -> float:
    """Eval-mode accuracy over a list of labeled graphs."""
    graphs = _graphs_of(graphs)
    if not graphs:
        raise ValueError("cannot evaluate on an empty split")
    correct = 0
    for g in graphs:
        stacks = cache.stacks_for(g, params) if cache is not None else None
        fwd = forward_graph(g, params, train=False, stacks=stacks)
        if int(np.argmax(fwd.logits)) == g.graph_label:
            correct += 1
    return correct / len(graphs)


def _graph_loss_and_grads(g, params, stacks, seed):
    rng = np.random.default_rng(seed) if params.config.dropout > 0 else None
    fwd = forward_graph(g, params, train=True, rng=rng, stacks=stacks)
    loss, dlogits = softmax_cross_entropy(fwd.logits, g.graph_label)
    return loss, backward_graph(fwd, dlogits, params)


def _batch_step(graphs, params, cache, rng, threads):
    seeds = rng.integers(0, 2**63 - 1, size=len(graphs))
    stacks = [cache.stacks_for(g, params) for g in graphs]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(
                pool.map(_graph_loss_and_grads, graphs, [params] * len(graphs), stacks, seeds)
            )
    else:
        results = [
            _graph_loss_and_grads(g, params, s, sd) for g, s, sd in zip(graphs, stacks, seeds)
        ]
    # fixed graph-index reduction order keeps training bit-reproducible
    total = {}
    loss = 0.0
    for li, gi in results:
        loss += li
        for name, grad in gi.items():
            if name in total:
                total[name] += grad
            else:
                total[name] = grad.copy()
    scale = 1.0 / len(graphs)
    for name in total:
        total[name] *= scale
    return loss * scale, total


def _clip_grads(grads: dict, max_norm: float):
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor


def train_fold(train_set, val_set, cfg: TrainConfig, rng, threads: int = 1,
               cache: StackCache | None = None):
    """Train on train_set; return the parameters of the best-validation epoch.

    Ties in validation accuracy go to the earliest epoch. The history records
    per-epoch train loss, train/validation accuracy, learning rate, and wall
    time.
    """
    cfg.validate()
    train_graphs = _graphs_of(train_set)
    val_graphs = _graphs_of(val_set)
    if not train_graphs or not val_graphs:
        raise ValueError("train and validation splits must be nonempty")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    if cache is None:
        cache = StackCache()

    sample = train_graphs[0]
    num_classes = max(g.graph_label for g in train_graphs + val_graphs) + 1
    if isinstance(train_set, Dataset):
        num_classes = train_set.num_classes
    params = init_params(cfg.model_config(sample.attr_dim, num_classes), rng)
    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.eps)

    history = {"train_loss": [], "train_acc": [], "val_acc": [], "lr": [], "epoch_seconds": []}
    best_acc = -1.0
    best_epoch = -1
    best_snapshot = _clone_tensors(params)

    order = np.arange(len(train_graphs))
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = learning_rate_at(cfg, epoch)
        rng.shuffle(order)
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_graphs[i] for i in order[start: start + cfg.batch_size]]
            loss, grads = _batch_step(batch, params, cache, rng, threads)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            if cfg.grad_clip is not None:
                _clip_grads(grads, cfg.grad_clip)
            opt.step(grads, lr)
            losses.append(loss)
        train_acc = evaluate(params, train_graphs, cache)
        val_acc = evaluate(params, val_graphs, cache)
        history["train_loss"].append(float(np.mean(losses)))
        history["train_acc"].append(train_acc)
        history["val_acc"].append(val_acc)
        history["lr"].append(lr)
        history["epoch_seconds"].append(time.perf_counter() - t0)
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_snapshot = _clone_tensors(params)

    _restore_tensors(params, best_snapshot)
    history["best_epoch"] = best_epoch
    history["best_val_acc"] = best_acc
    return params, history


def _grid_candidates(grid) -> list:
    if isinstance(grid, TrainConfig):
        return [grid]
    return list(grid)


def _grid_search_full(train_set, val_set, grid, rng, threads=1, cache=None):
    candidates = _grid_candidates(grid)
    if not candidates:
        raise ValueError("grid must contain at least one configuration")
    seeds = rng.integers(0, 2**63 - 1, size=len(candidates))
    best = None
    for cfg, seed in zip(candidates, seeds):
        try:
            cfg.validate()
        except ConfigError:
            continue
        params, history = train_fold(train_set, val_set, cfg, int(seed), threads, cache)
        score = history["best_val_acc"]
        if best is None or score > best[2]:
            best = (cfg, params, score, history)
    if best is None:
        raise ValueError("no valid configuration in grid")
    return best


def grid_search(train_set, val_set, grid, rng, threads: int = 1) -> TrainConfig:
    """Candidate with the best validation accuracy; ties keep grid order."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    return _grid_search_full(train_set, val_set, grid, rng, threads)[0]


def load_splits(path: str) -> list:
    """Fold indices from a JSON file: [{"train": [...], "test": [...]}, ...]."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{path}: expected a nonempty list of fold objects")
    splits = []
    for k, fold in enumerate(raw):
        try:
            train = np.array(fold["train"], dtype=np.int64)
            test = np.array(fold["test"], dtype=np.int64)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"{path}: fold {k} needs 'train' and 'test' index lists") from exc
        if np.intersect1d(train, test).size:
            raise ConfigError(f"{path}: fold {k} train/test overlap")
        splits.append((train, test))
    return splits


def stratified_kfold(labels: np.ndarray, k: int, rng: np.random.Generator) -> list:
    """Disjoint covering folds with per-class counts balanced within one."""
    labels = np.asarray(labels)
    folds = [[] for _ in range(k)]
    cursor = 0
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        for i, v in enumerate(idx):
            folds[(cursor + i) % k].append(int(v))
        cursor += len(idx)
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def stratified_split(labels: np.ndarray, holdout_frac: float, rng: np.random.Generator):
    """(train_idx, holdout_idx) with at least one holdout graph per class."""
    labels = np.asarray(labels)
    train, hold = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        n_hold = max(1, int(round(len(idx) * holdout_frac)))
        hold.extend(int(v) for v in idx[:n_hold])
        train.extend(int(v) for v in idx[n_hold:])
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(hold), dtype=np.int64)


def cross_validate(ds: Dataset, grid, seed: int, n_folds: int = 10, threads: int = 1,
                   out_dir: str | None = None, splits: list | None = None) -> CVResult:
    """Stratified n-fold assessment with inner 90/10 holdout model selection.

    `grid` is a TrainConfig or a list of them. With n_folds=1 a single
    stratified 90/10 train/test holdout is evaluated. Pre-computed splits
    (list of (train_indices, test_indices) pairs) override fold generation.
    """
    labels = ds.labels()
    counts = np.bincount(labels, minlength=ds.num_classes)
    if splits is None:
        if n_folds < 1:
            raise ValueError("n_folds must be >= 1")
        if np.any(counts < max(n_folds, 2)):
            raise ValueError(
                f"stratification needs at least {max(n_folds, 2)} graphs per class, got {counts.tolist()}"
            )

    ss = np.random.SeedSequence(seed)
    fold_ss = ss.spawn(1)[0]
    if splits is None:
        fold_rng = np.random.default_rng(fold_ss)
        if n_folds == 1:
            train_idx, test_idx = stratified_split(labels, 0.1, fold_rng)
            splits = [(train_idx, test_idx)]
        else:
            folds = stratified_kfold(labels, n_folds, fold_rng)
            all_idx = np.arange(len(ds))
            splits = [
                (np.setdiff1d(all_idx, fold), fold) for fold in folds
            ]

    cache = StackCache()
    accuracies, selected, epoch_seconds, histories = [], [], [], []
    per_fold_ss = ss.spawn(len(splits))
    for k, (train_idx, test_idx) in enumerate(splits):
        inner_ss, cand_ss = per_fold_ss[k].spawn(2)
        inner_rng = np.random.default_rng(inner_ss)
        inner_labels = labels[train_idx]
        tr, va = stratified_split(inner_labels, 0.1, inner_rng)
        inner_train = ds.subset(train_idx[tr])
        inner_val = ds.subset(train_idx[va])

        cfg, params, _, history = _grid_search_full(
            inner_train, inner_val, grid, np.random.default_rng(cand_ss), threads, cache
        )
        test_graphs = ds.subset(test_idx)
        acc = evaluate(params, test_graphs, cache)
        accuracies.append(float(acc))
        selected.append(cfg.to_dict())
        epoch_seconds.append(float(np.mean(history["epoch_seconds"])))
        histories.append(
            {key: history[key] for key in ("train_loss", "train_acc", "val_acc", "lr")}
        )
        if out_dir is not None:
            path = os.path.join(out_dir, f"fold{k}", "best.ckpt")
            save_checkpoint(path, params, seed=seed, extra={"fold": k, "config": cfg.to_dict()})

    return CVResult(
        fold_accuracies=accuracies,
        mean=float(np.mean(accuracies)),
        std=float(np.std(accuracies)),
        selected_configs=selected,
        epoch_seconds=epoch_seconds,
        histories=histories,
    )
