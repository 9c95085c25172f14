"""Stack three-layer blocks into an L-layer network of bounded width.

The tuned set splits round-robin, in projection order, into q = floor((L-1)/2)
subsets.  Each subset gets its own three-layer build over the full sample set
(so each block is already zero on every sample outside its subset), and the
blocks run back to back.  Two single-ReLU channels thread through every hidden
layer: one re-emits the scalar projection for the next block, one accumulates
the outputs of the blocks already finished.  Each channel holds its value
minus a data-derived low so the ReLU never clips on the samples, which is why
every hidden layer costs the active block's own width plus exactly two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

from .builders2 import BuildReport
from .builders3 import BuildError, _check_target_range, build_grid, build_sparse
from .instance import Direction, FineTuneInstance, direction_along, find_direction
from .network import (
    Layer,
    Network,
    eval_network,
    relu_layer_widths,
    zero_network,
)
from .numerics import Scalar, exact_div
from .pwl import identity, relu

F = Fraction


class CarrierRangeError(BuildError):
    """The shift constant for a passthrough channel could not be estimated."""


@dataclass
class DeepPlan:
    """Round-robin split of the tuned set for an L-layer stacked build."""

    L: int
    q: int                      # number of block slots, floor((L-1)/2)
    subsets: List[List[int]]    # nonempty parts, original 1-based indices
    size_cap: int               # every part has at most this many elements
    K: int
    N: int                      # tuned samples with nonzero targets

    def __post_init__(self):
        if self.L < 3 or self.q < 1:
            raise ValueError("need L >= 3 so at least one block fits")
        flat = [i for part in self.subsets for i in part]
        if len(flat) != len(set(flat)):
            raise ValueError("subsets overlap")
        if len(flat) != self.N:
            raise ValueError("subsets must cover every effective tuned index")
        if self.subsets and max(len(p) for p in self.subsets) > self.size_cap:
            raise ValueError("subset exceeds the size cap")


@dataclass
class WidthBound:
    printed: float      # inner root over the subset count
    appendix: float     # subset count enters linearly under the outer root
    appendix_ceiling: int
    q: int


def _ceil_sqrt(v: int) -> int:
    return v if v <= 1 else math.isqrt(v - 1) + 1


def deep_width_bound(N: int, K: int, L: int) -> WidthBound:
    """Width guarantees for the stacked build, in both published shapes.

    The two real-valued forms disagree for q > 1; the integer ceiling form is
    the one built networks are checked against, with ceil(N/q) standing in
    for the largest subset size the round-robin split can produce.
    """
    if L < 4:
        raise ValueError("stacked builds need L >= 4")
    if not (0 <= N <= K):
        raise ValueError("need 0 <= N <= K")
    q = (L - 1) // 2
    printed = 4 * min(math.sqrt(3 * N / math.sqrt(q) + 5), math.sqrt(K)) + 2
    appendix = 4 * min(math.sqrt(3 * N / q + 5), math.sqrt(K)) + 2
    cap = -(-N // q)
    ceiling = 4 * min(_ceil_sqrt(3 * cap + 2), _ceil_sqrt(K)) + 2
    return WidthBound(printed, appendix, ceiling, q)


def plan_deep(
    inst: FineTuneInstance, L: int, direction: Optional[Direction] = None
) -> Tuple[DeepPlan, Direction]:
    """Split the effective tuned set round-robin along the projection order."""
    if L < 4:
        raise ValueError("stacked builds need L >= 4")
    if direction is None:
        direction = find_direction(inst, seed=inst.seed or 0)
    q = (L - 1) // 2
    effective = [t for t in sorted(inst.tune_set) if inst.targets[t - 1] != 0]
    effective.sort(key=lambda t: direction.projections[t - 1])
    parts: List[List[int]] = [[] for _ in range(q)]
    for k, t in enumerate(effective):
        parts[k % q].append(t)
    parts = [p for p in parts if p]
    cap = -(-len(effective) // q) if effective else 0
    plan = DeepPlan(L, q, parts, cap, inst.K, len(effective))
    return plan, direction


def _scalar_coeff(row: Sequence[Scalar], vec: Sequence[Scalar]) -> Scalar:
    # every first-layer row of a block is (scalar) * direction vector
    for w, v in zip(row, vec):
        if v != 0:
            return exact_div(w, v)
    raise CarrierRangeError("direction vector has no nonzero coordinate")


def _low(values: Sequence[Scalar]) -> Scalar:
    lo, hi = min(values), max(values)
    span = hi - lo
    if span == 0:
        span = F(1)
    return lo - span * F(1, 10)  # 10% headroom keeps the channel off its hinge


def build_deep(
    inst: FineTuneInstance, L: int, direction: Optional[Direction] = None
) -> Tuple[Network, BuildReport]:
    """L-layer build: one block per subset plus two passthrough channels.

    The network evaluates, exactly, to the sum of the per-subset three-layer
    blocks at every sample point; depth is exactly L (trailing single-neuron
    passthrough layers absorb any slack when fewer than q blocks are needed).
    """
    _check_target_range(inst)
    if not inst.exact:
        inst = inst.as_exact()
        if direction is not None:
            direction = direction_along(inst, direction.vector)
    plan, direction = plan_deep(inst, L, direction)
    K, d = inst.K, inst.d
    wb = deep_width_bound(plan.N, K, L) if plan.N else None

    if not plan.subsets:
        net = zero_network(d)
        report = BuildReport(
            "deep:zero", K, 0, 0, 0,
            bound_parts={}, direction=list(direction.vector),
            permutation=list(direction.order),
            extras={"L": L, "q": plan.q, "subsets": []},
        )
        return net, report

    # one three-layer block per subset, all sharing the projection direction
    blocks: List[Network] = []
    branches: List[str] = []
    for part in plan.subsets:
        member = set(part)
        targets = [
            inst.targets[i - 1] if i in member else F(0) for i in range(1, K + 1)
        ]
        sub_inst = FineTuneInstance(
            d, inst.points, targets, tuple(sorted(part)), seed=inst.seed
        )
        # pick the branch with the smaller width formula, not neuron total:
        # sparse layers peak at 4*ceil(sqrt(3n+2)), grid at 2*ceil(sqrt(K))
        branch = "sparse" if 3 * len(part) + 2 <= K else "grid"
        builder = build_sparse if branch == "sparse" else build_grid
        sub_net, _ = builder(sub_inst, direction)
        blocks.append(sub_net)
        branches.append(branch)

    a_vec = direction.vector
    lo_c = _low(direction.projections)
    block_vals = [
        [eval_network(b, x)[0] for x in inst.points] for b in blocks
    ]
    partials: List[List[Scalar]] = []
    running = [F(0)] * K
    for vals in block_vals:
        running = [r + v for r, v in zip(running, vals)]
        partials.append(list(running))
    acc_lows = [_low(p) for p in partials]

    layers: List[Layer] = []
    S = len(blocks)
    for i, block in enumerate(blocks):
        h1, h2, _ = block.layers
        if i == 0:
            W = [list(row) for row in h1.weights]
            b = list(h1.biases)
            acts = list(h1.activations)
            W.append(list(a_vec))
            b.append(-lo_c)
            acts.append(relu())
            W.append([F(0)] * d)          # accumulator starts empty
            b.append(F(0))
            acts.append(relu())
        else:
            prev = blocks[i - 1]
            pw = prev.layers[1].out_dim
            in_dim = pw + 2
            W, b, acts = [], [], []
            for row, bias in zip(h1.weights, h1.biases):
                a_j = _scalar_coeff(row, a_vec)
                wrow = [F(0)] * in_dim
                wrow[pw] = a_j
                W.append(wrow)
                b.append(bias + a_j * lo_c)
                # activation list extended below
            acts.extend(h1.activations)
            wrow = [F(0)] * in_dim
            wrow[pw] = F(1)
            W.append(wrow)
            b.append(F(0))
            acts.append(relu())
            # fold the finished block's readout into the accumulator
            out_w = prev.layers[2].weights[0]
            out_b = prev.layers[2].biases[0] + prev.output_bias
            wrow = [F(0)] * in_dim
            for k, w in enumerate(out_w):
                wrow[k] = w
            wrow[pw + 1] = F(1)
            prev_lo = acc_lows[i - 2] if i >= 2 else F(0)
            W.append(wrow)
            b.append(out_b + prev_lo - acc_lows[i - 1])
            acts.append(relu())
        layers.append(Layer(W, b, acts))

        w1 = h1.out_dim
        in_dim = w1 + 2
        W = [list(row) + [F(0), F(0)] for row in h2.weights]
        b = list(h2.biases)
        acts = list(h2.activations)
        for off in (0, 1):
            wrow = [F(0)] * in_dim
            wrow[w1 + off] = F(1)
            W.append(wrow)
            b.append(F(0))
            acts.append(relu())
        layers.append(Layer(W, b, acts))

    last = blocks[-1]
    lw = last.layers[1].out_dim
    out_w = last.layers[2].weights[0]
    out_b = last.layers[2].biases[0] + last.output_bias
    prev_lo = acc_lows[S - 2] if S >= 2 else F(0)
    pads = L - (2 * S + 1)
    if pads == 0:
        wrow = list(out_w) + [F(0), F(1)]
        layers.append(Layer([wrow], [out_b + prev_lo], identity()))
    else:
        wrow = list(out_w) + [F(0), F(1)]
        layers.append(
            Layer([wrow], [out_b + prev_lo - acc_lows[S - 1]], relu())
        )
        for _ in range(pads - 1):
            layers.append(Layer([[F(1)]], [F(0)], relu()))
        layers.append(Layer([[F(1)]], [acc_lows[S - 1]], identity()))

    net = Network(d, layers, F(0))
    widths = relu_layer_widths(net)
    max_width = max(widths)
    if max_width > wb.appendix_ceiling:
        raise BuildError(
            f"stacked build width {max_width} exceeds its ceiling "
            f"{wb.appendix_ceiling}"
        )
    report = BuildReport(
        "deep", K, plan.N, net.declared_neuron_count, wb.appendix_ceiling,
        bound_parts={
            "printed": wb.printed,
            "appendix": wb.appendix,
            "appendix_ceiling": wb.appendix_ceiling,
            "max_width": max_width,
            "printed_ok": max_width <= wb.printed,
            "appendix_ok": max_width <= wb.appendix_ceiling,
        },
        direction=list(direction.vector),
        permutation=list(direction.order),
        extras={
            "L": L,
            "q": plan.q,
            "blocks": S,
            "pad_layers": max(pads, 0),
            "subsets": [list(p) for p in plan.subsets],
            "branches": branches,
            "relu_widths": widths,
            "size_cap": plan.size_cap,
        },
    )
    return net, report
