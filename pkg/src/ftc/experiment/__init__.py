"""Empirical width-scaling harness with swappable training kernels."""

from .harness import (
    CellResult,
    InsufficientDataError,
    PAPER_SCALE,
    ScalingResult,
    TrainConfig,
    constructive_network,
    f_as_network,
    finetune_additive,
    g_as_network,
    min_width_search,
    params_hash,
    perturb_labels,
    run_experiment,
    scaling_fit,
    train_mlp,
)
from .kernels import USING_NUMBA, backend_name

__all__ = [
    "CellResult",
    "InsufficientDataError",
    "PAPER_SCALE",
    "ScalingResult",
    "TrainConfig",
    "USING_NUMBA",
    "backend_name",
    "constructive_network",
    "f_as_network",
    "finetune_additive",
    "g_as_network",
    "min_width_search",
    "params_hash",
    "perturb_labels",
    "run_experiment",
    "scaling_fit",
    "train_mlp",
]
