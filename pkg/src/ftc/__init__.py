"""Additive fine-tuning toolkit.

Exact ReLU side-network builders (two-layer, three-layer, arbitrary depth),
piecewise-linear piece-count certificates, closed-form capacity bound
calculators, and a width-vs-samples scaling experiment harness.

The experiment harness lives in ``ftc.experiment`` and is imported lazily:
it pulls in the training kernels (numba when available).
"""

__version__ = "0.1.0"

from .bounds import (
    CapacityBounds,
    RegimeError,
    ftc_mc_consistency,
    m_bounds_2layer,
    m_bounds_3layer,
    n_bounds_2layer,
    n_bounds_3layer,
    n_regime_3layer,
)
from .builders2 import BuildReport, ChainSpec, build_two_layer, chain_interpolator
from .builders3 import (
    BuildError,
    TargetCollisionError,
    TargetRangeError,
    build_bump,
    build_compact,
    build_grid,
    build_sparse,
    three_layer_auto,
)
from .deep import DeepPlan, WidthBound, build_deep, deep_width_bound, plan_deep
from .instance import (
    Direction,
    DirectionSearchError,
    FineTuneInstance,
    direction_along,
    find_direction,
    gen_adversarial,
    gen_synthetic,
    synthetic_instance,
    zigzag_piece_count,
)
from .network import (
    Layer,
    Network,
    VerifyReport,
    eval_many,
    eval_network,
    relu_layer_widths,
    restrict_to_line,
    to_pure_relu,
    verify_finetune,
    zero_network,
)
from .pwl import Activation, Pwl1D, activation_to_relus, piece_budget

__all__ = [
    "Activation",
    "BuildError",
    "BuildReport",
    "CapacityBounds",
    "ChainSpec",
    "DeepPlan",
    "Direction",
    "DirectionSearchError",
    "FineTuneInstance",
    "Layer",
    "Network",
    "Pwl1D",
    "RegimeError",
    "TargetCollisionError",
    "TargetRangeError",
    "VerifyReport",
    "WidthBound",
    "activation_to_relus",
    "build_bump",
    "build_compact",
    "build_deep",
    "build_grid",
    "build_sparse",
    "build_two_layer",
    "chain_interpolator",
    "deep_width_bound",
    "direction_along",
    "eval_many",
    "eval_network",
    "find_direction",
    "ftc_mc_consistency",
    "gen_adversarial",
    "gen_synthetic",
    "m_bounds_2layer",
    "m_bounds_3layer",
    "n_bounds_2layer",
    "n_bounds_3layer",
    "n_regime_3layer",
    "piece_budget",
    "plan_deep",
    "relu_layer_widths",
    "restrict_to_line",
    "synthetic_instance",
    "three_layer_auto",
    "to_pure_relu",
    "verify_finetune",
    "zero_network",
    "zigzag_piece_count",
]
