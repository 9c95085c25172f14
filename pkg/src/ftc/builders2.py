"""Two-layer builders: the ReLU chain interpolator and the point-removal build.

The chain interpolator realizes any finite set of knots exactly with one
hidden neuron per interval.  The full builder projects the instance onto a
direction with distinct values, drops interior points of untuned runs (whose
zero values ride for free on the zero segment between run endpoints), and
interpolates the surviving knots.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from .instance import Direction, FineTuneInstance, find_direction
from .network import Layer, Network, zero_network
from .numerics import Scalar, exact_div
from .partition import ReducedIndexSet, reduced_index_set
from .pwl import identity, relu


@dataclass
class ChainSpec:
    """Sorted 1-D knots (w_i, z_i); the chain uses m = len-1 hidden neurons."""

    knots: List[Tuple[Scalar, Scalar]]

    def __post_init__(self):
        if len(self.knots) < 2:
            raise ValueError("need at least 2 knots")
        for (w0, _), (w1, _) in zip(self.knots, self.knots[1:]):
            if not w1 > w0:
                raise ValueError("knot abscissae must be strictly increasing")

    @property
    def m(self) -> int:
        return len(self.knots) - 1

    def slopes(self) -> List[Scalar]:
        return [
            exact_div(z1 - z0, w1 - w0)
            for (w0, z0), (w1, z1) in zip(self.knots, self.knots[1:])
        ]


@dataclass
class BuildReport:
    method: str
    K: int
    N: int
    m: int                      # materialized ReLU-equivalent neuron count
    bound: int                  # the bound this build promises to respect
    bound_parts: dict = field(default_factory=dict)
    direction: Optional[List[Scalar]] = None
    permutation: Optional[List[int]] = None   # 0-based sort order by projection
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "K": self.K,
            "N": self.N,
            "m": self.m,
            "bound": self.bound,
            "bound_parts": self.bound_parts,
            "direction": [float(v) for v in self.direction]
            if self.direction is not None
            else None,
            "permutation": self.permutation,
            "extras": _jsonable(self.extras),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (int, str, bool)) or obj is None:
        return obj
    return float(obj)


def chain_interpolator(spec: ChainSpec) -> Network:
    """One-dimensional ReLU chain through the knots.

    Hidden neuron i fires past w_i; its output weight is the slope change
    there, so the network is constant z_1 left of w_1, linear on each
    interval, and continues the final slope to the right.
    """
    slopes = spec.slopes()
    m = spec.m
    W1 = [[1] for _ in range(m)]
    b1 = [-spec.knots[i][0] for i in range(m)]
    prev: Scalar = 0
    W2_row: List[Scalar] = []
    for s in slopes:
        W2_row.append(s - prev)
        prev = s
    layers = [Layer(W1, b1, relu()), Layer([W2_row], [0], identity())]
    return Network(1, layers, spec.knots[0][1])


def build_two_layer(
    inst: FineTuneInstance, direction: Optional[Direction] = None
) -> Tuple[Network, BuildReport]:
    """Exact side network with m = |J| - 1 <= min(3N+1, K-1) hidden neurons."""
    K, N = inst.K, inst.N
    if K < 2:
        raise ValueError("need K >= 2")
    theorem_bound = min(3 * N + 1, K - 1)
    if N == 0:
        reduced = reduced_index_set(K, set())
        removal_bound = K - 1 - reduced.untuned_partition.interior_total()
        report = BuildReport(
            "two_layer", K, 0, 0, theorem_bound,
            bound_parts={"theorem": theorem_bound, "removal": removal_bound},
        )
        return zero_network(inst.d), report

    if direction is None:
        direction = find_direction(inst, seed=inst.seed or 0)
    order = direction.order
    c_sorted = direction.sorted_projections()
    z_sorted = [inst.targets[i] for i in order]
    inv = {orig: pos for pos, orig in enumerate(order)}
    tuned_pos = {inv[t - 1] + 1 for t in inst.tune_set}
    reduced = reduced_index_set(K, tuned_pos)

    knots = [(c_sorted[j - 1], z_sorted[j - 1]) for j in reduced.kept]
    spec = ChainSpec(knots)
    chain = chain_interpolator(spec)

    a = direction.vector
    m = spec.m
    W1 = [list(a) for _ in range(m)]
    b1 = chain.layers[0].biases
    layers = [
        Layer(W1, b1, relu()),
        Layer(chain.layers[1].weights, [0], identity()),
    ]
    net = Network(inst.d, layers, chain.output_bias)

    removal_bound = K - 1 - reduced.untuned_partition.interior_total()
    report = BuildReport(
        "two_layer",
        K,
        N,
        m,
        theorem_bound,
        bound_parts={"theorem": theorem_bound, "removal": removal_bound},
        direction=list(a),
        permutation=list(order),
        extras={
            "kept_positions": list(reduced.kept),
            "removed_positions": list(reduced.removed),
            "untuned_blocks": [list(b) for b in reduced.untuned_partition.blocks],
        },
    )
    return net, report
