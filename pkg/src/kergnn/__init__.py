"""Graph classification with random walk kernels over trainable graph filters."""

import os

from .errors import CheckpointError, ConfigError, DatasetError, TrainingError
from .graphs import (
    Dataset,
    Graph,
    Subgraph,
    dataset_stats,
    extract_subgraph,
    load_tudataset,
    read_graph_file,
    save_tudataset,
    stack_subgraphs,
    write_graph_file,
)
from .kernels import (
    KernelGradients,
    RWKernelConfig,
    direct_product_graph,
    rw_kernel,
    rw_kernel_grad,
    rw_kernel_oracle,
    walk_kernel,
)
from .model import (
    GraphFilter,
    KerGNNLayer,
    LayerSpec,
    ModelConfig,
    ModelParams,
    export_filters,
    init_params,
    layer_forward,
    load_checkpoint,
    model_forward,
    save_checkpoint,
)
from .training import (
    Adam,
    CVResult,
    TrainConfig,
    cross_validate,
    evaluate,
    grid_search,
    train_fold,
)
from .wl import ColorHistogram, wl_refine, wl_test

__version__ = "0.1.0"


def bundled_graph(name: str) -> str:
    """Path of a graph file shipped with the package (e.g. "hexagon")."""
    return os.path.join(os.path.dirname(__file__), "data", f"{name}.graph")
