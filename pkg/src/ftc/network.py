"""Network representation, exact evaluation, neuron accounting, and rewrites.

A Network is an ordered list of affine-plus-activation layers ending in a
width-1 Identity layer (the output read-out), plus a scalar output_bias.
All entries may be floats or Fractions; evaluation is exact in whichever
arithmetic the entries carry.  Neuron counts are always quoted in
ReLU-equivalent units: each hidden neuron contributes the size of its
activation's ReLU decomposition.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .numerics import Scalar, exact_dot, is_exact, to_exact
from .pwl import (
    Activation,
    Pwl1D,
    UnboundedDomainError,
    activation_to_relus,
    identity,
    pwl_apply_activation,
    pwl_weighted_sum,
    relu,
)


@dataclass
class Layer:
    weights: List[List[Scalar]]      # out x in
    biases: List[Scalar]
    activations: List[Activation]    # one per output neuron

    def __init__(
        self,
        weights: Sequence[Sequence[Scalar]],
        biases: Sequence[Scalar],
        activation,
    ):
        self.weights = [list(row) for row in weights]
        self.biases = list(biases)
        if isinstance(activation, Activation):
            self.activations = [activation] * len(self.biases)
        else:
            self.activations = list(activation)
        if len(self.weights) != len(self.biases) or len(self.biases) != len(
            self.activations
        ):
            raise ValueError("layer width mismatch between weights, biases, activations")
        widths = {len(row) for row in self.weights}
        if len(widths) > 1:
            raise ValueError("ragged weight matrix")

    @property
    def out_dim(self) -> int:
        return len(self.biases)

    @property
    def in_dim(self) -> int:
        return len(self.weights[0]) if self.weights else 0


@dataclass
class EvalTrace:
    preactivations: List[List[Scalar]] = field(default_factory=list)
    postactivations: List[List[Scalar]] = field(default_factory=list)


@dataclass
class Network:
    input_dim: int
    layers: List[Layer]
    output_bias: Scalar = 0

    def __post_init__(self):
        dim = self.input_dim
        for idx, layer in enumerate(self.layers):
            if layer.in_dim != dim:
                raise ValueError(
                    f"layer {idx} expects input dim {layer.in_dim}, got {dim}"
                )
            dim = layer.out_dim
        if self.layers and self.layers[-1].out_dim != 1:
            raise ValueError("final layer must have width 1")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def hidden_layers(self) -> List[Layer]:
        return self.layers[:-1]

    @property
    def widths(self) -> List[int]:
        return [layer.out_dim for layer in self.layers]

    @property
    def max_hidden_width(self) -> int:
        hidden = self.hidden_layers
        return max((l.out_dim for l in hidden), default=0)

    @property
    def declared_neuron_count(self) -> int:
        return sum(
            relu_equivalent_count(act)
            for layer in self.hidden_layers
            for act in layer.activations
        )

    def to_json(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "layers": [
                {
                    "W": [[_num_out(v) for v in row] for row in l.weights],
                    "b": [_num_out(v) for v in l.biases],
                    "activation": [a.to_json() for a in l.activations],
                }
                for l in self.layers
            ],
            "output_bias": _num_out(self.output_bias),
            "neuron_count": self.declared_neuron_count,
        }

    @staticmethod
    def from_json(obj: dict) -> "Network":
        layers = []
        for l in obj["layers"]:
            acts = [Activation.from_json(a) for a in l["activation"]]
            layers.append(
                Layer(
                    [[_num_in(v) for v in row] for row in l["W"]],
                    [_num_in(v) for v in l["b"]],
                    acts,
                )
            )
        net = Network(obj["input_dim"], layers, _num_in(obj["output_bias"]))
        declared = obj.get("neuron_count")
        if declared is not None and declared != net.declared_neuron_count:
            raise ValueError(
                f"stored neuron count {declared} disagrees with "
                f"recomputed {net.declared_neuron_count}"
            )
        return net

    def save(self, path: str):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @staticmethod
    def load(path: str) -> "Network":
        with open(path) as fh:
            return Network.from_json(json.load(fh))


def _num_out(v: Scalar):
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}"
    if isinstance(v, int):
        return v
    return float(v)


def _num_in(v) -> Scalar:
    if isinstance(v, str):
        num, den = v.split("/")
        return Fraction(int(num), int(den))
    return v


def relu_equivalent_count(act: Activation) -> int:
    """ReLU neurons needed to express one neuron with this activation."""
    try:
        return activation_to_relus(act).neuron_count
    except UnboundedDomainError:
        return activation_to_relus(act, domain_low=0).neuron_count


def relu_layer_widths(net: Network) -> List[int]:
    """Hidden-layer widths in ReLU-equivalent units, front to back."""
    return [
        sum(relu_equivalent_count(a) for a in layer.activations)
        for layer in net.hidden_layers
    ]


def zero_network(d: int) -> Network:
    return Network(d, [Layer([[0] * d], [0], identity())], 0)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def eval_network(net: Network, x: Sequence[Scalar]) -> Tuple[Scalar, EvalTrace]:
    if len(x) != net.input_dim:
        raise ValueError(f"expected input dim {net.input_dim}, got {len(x)}")
    trace = EvalTrace()
    values: List[Scalar] = list(x)
    fused = _network_exact(net) and all(is_exact(v) for v in x)
    for layer in net.layers:
        if fused:
            pre = [
                exact_dot(row, values, b)
                for row, b in zip(layer.weights, layer.biases)
            ]
        else:
            pre = [
                sum(w * v for w, v in zip(row, values)) + b
                for row, b in zip(layer.weights, layer.biases)
            ]
        post = [act(a) for act, a in zip(layer.activations, pre)]
        trace.preactivations.append(pre)
        trace.postactivations.append(post)
        values = post
    return values[0] + net.output_bias, trace


def _batch_apply(act: Activation, a: np.ndarray) -> np.ndarray:
    kind = act.kind
    p = dict(act.params)
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "identity":
        return a
    if kind == "hardtanh":
        return np.clip(a, -1.0, 1.0)
    if kind == "bump":
        c, d = float(p["center"]), float(p["delta"])
        return (c / d) * np.maximum(0.0, d - np.abs(a - c))
    if kind == "tailcut":
        d = float(p["delta"])
        return np.where(a <= 1.0, a, np.maximum(0.0, (1.0 + d - a) / d))
    if kind == "windowlinear":
        d = float(p["delta"])
        inner = np.clip(a, -1.0, 1.0)
        fade = np.clip((1.0 + d - np.abs(a)) / d, 0.0, 1.0)
        return inner * fade
    raise ValueError(f"unknown activation kind {kind!r}")


def eval_many(net: Network, X: np.ndarray) -> np.ndarray:
    """Batch float forward pass; X has shape (n, input_dim)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    vals = X
    for layer in net.layers:
        W = np.asarray(
            [[float(v) for v in row] for row in layer.weights], dtype=float
        )
        b = np.asarray([float(v) for v in layer.biases], dtype=float)
        pre = vals @ W.T + b
        post = np.empty_like(pre)
        acts = layer.activations
        j = 0
        while j < len(acts):
            k = j
            while k < len(acts) and acts[k] == acts[j]:
                k += 1
            post[:, j:k] = _batch_apply(acts[j], pre[:, j:k])
            j = k
        vals = post
    return vals[:, 0] + float(net.output_bias)


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


@dataclass
class VerifyReport:
    max_err_on_T: Scalar
    max_err_off_T: Scalar
    tol: Scalar
    passed: bool

    def to_json(self) -> dict:
        return {
            "max_err_on_T": float(self.max_err_on_T),
            "max_err_off_T": float(self.max_err_off_T),
            "tol": float(self.tol),
            "pass": self.passed,
        }


def verify_finetune(net: Network, inst, tol: Optional[Scalar] = None) -> VerifyReport:
    """Check the fine-tuning contract: targets on T, exact zero off T.

    Exact networks are evaluated in rational arithmetic even on float
    instances: a float input is a dyadic rational, so lifting it costs
    nothing and the measured errors carry no evaluation noise.  The default
    tolerance stays 0 only when the instance itself is exact.
    """
    exact_net = _network_exact(net)
    exact = inst.exact and exact_net
    if tol is None:
        tol = 0 if exact else 1e-8
    tuned = set(inst.tune_set)
    if exact_net:
        values = [
            eval_network(net, [to_exact(v) for v in row])[0] for row in inst.points
        ]
    else:
        values = list(eval_many(net, np.asarray(inst.points, dtype=float)))
    err_on = [abs(v - z) for v, (i, z) in zip(values, enumerate(inst.targets, 1)) if i in tuned]
    err_off = [abs(v) for v, i in zip(values, range(1, inst.K + 1)) if i not in tuned]
    max_on = max(err_on, default=0)
    max_off = max(err_off, default=0)
    return VerifyReport(max_on, max_off, tol, max_on <= tol and max_off <= tol)


def _network_exact(net: Network) -> bool:
    for layer in net.layers:
        for row in layer.weights:
            if not all(is_exact(v) for v in row):
                return False
        if not all(is_exact(v) for v in layer.biases):
            return False
        for act in layer.activations:
            if not all(is_exact(v) for _, v in act.params):
                return False
    return is_exact(net.output_bias)


# ---------------------------------------------------------------------------
# Pure-ReLU conversion
# ---------------------------------------------------------------------------


def to_pure_relu(net: Network, inst) -> Network:
    """Rewrite every hidden activation as ReLU neurons.

    Per-neuron input lower bounds come from evaluating the network on the
    instance points; they feed the carrier term for activations with two
    sloped tails.  Agreement with the original network is exact on the
    instance points and on any input whose preactivations stay above those
    bounds.
    """
    traces = [eval_network(net, row)[1] for row in inst.points]
    new_layers: List[Layer] = []
    # pending carries the layer about to be converted; after each hidden layer
    # is decomposed, its rewired consumer becomes the new pending layer
    pending = net.layers[0]
    for li in range(len(net.layers) - 1):
        layer = pending
        lows = [
            min(tr.preactivations[li][j] for tr in traces)
            for j in range(layer.out_dim)
        ]
        new_rows: List[List[Scalar]] = []
        new_biases: List[Scalar] = []
        wiring: List[Tuple[int, object]] = []
        for j in range(layer.out_dim):
            act = layer.activations[j]
            try:
                dec = activation_to_relus(act)
            except UnboundedDomainError:
                dec = activation_to_relus(act, domain_low=lows[j])
            start = len(new_rows)
            row_j = layer.weights[j]
            b_j = layer.biases[j]
            for term in dec.terms:
                new_rows.append([term.input_coeff * w for w in row_j])
                new_biases.append(term.input_coeff * b_j + term.input_shift)
            if dec.carrier_shift is not None:
                new_rows.append(list(row_j))
                new_biases.append(b_j - dec.carrier_shift)
            wiring.append((start, dec))
        new_layers.append(Layer(new_rows, new_biases, relu()))

        nxt = net.layers[li + 1]
        rew_rows: List[List[Scalar]] = []
        rew_biases: List[Scalar] = []
        for r in range(nxt.out_dim):
            row = [0] * len(new_rows)
            extra = nxt.biases[r]
            for j, (start, dec) in enumerate(wiring):
                v = nxt.weights[r][j]
                if v == 0:
                    continue
                k = start
                for term in dec.terms:
                    row[k] = row[k] + v * term.output_coeff
                    k += 1
                if dec.carrier_shift is not None:
                    row[k] = row[k] + v * dec.linear_coeff
                    extra = extra + v * dec.linear_coeff * dec.carrier_shift
                extra = extra + v * dec.constant
            rew_rows.append(row)
            rew_biases.append(extra)
        pending = Layer(rew_rows, rew_biases, nxt.activations)
    new_layers.append(pending)
    return Network(net.input_dim, new_layers, net.output_bias)


# ---------------------------------------------------------------------------
# Line restriction
# ---------------------------------------------------------------------------


def restrict_to_line(
    net: Network, direction: Sequence[Scalar], origin: Optional[Sequence[Scalar]] = None
) -> Pwl1D:
    """Exact one-dimensional trace t -> net(origin + t * direction)."""
    if origin is None:
        origin = [0] * net.input_dim
    funcs: List[Pwl1D] = [
        Pwl1D.affine(u, o) for u, o in zip(direction, origin)
    ]
    for layer in net.layers:
        nxt: List[Pwl1D] = []
        for row, b, act in zip(layer.weights, layer.biases, layer.activations):
            terms = [(w, f) for w, f in zip(row, funcs) if w != 0]
            pre = pwl_weighted_sum(terms, b) if terms else Pwl1D.constant(b)
            nxt.append(pwl_apply_activation(act, pre))
        funcs = nxt
    out = funcs[0]
    if net.output_bias != 0:
        out = pwl_weighted_sum([(1, out)], net.output_bias)
    return out.canonical()


# ---------------------------------------------------------------------------
# Combination
# ---------------------------------------------------------------------------


def sum_predictor(f: Network, g: Network) -> Network:
    """Network computing f(x) + g(x), via a block-diagonal merge."""
    if f.input_dim != g.input_dim:
        raise ValueError("input dims differ")
    fa = _pad_depth(f, max(f.depth, g.depth))
    ga = _pad_depth(g, max(f.depth, g.depth))
    layers: List[Layer] = []
    for lf, lg in zip(fa.layers, ga.layers):
        rows: List[List[Scalar]] = []
        if layers:
            fw, gw = lf.in_dim, lg.in_dim
            for row in lf.weights:
                rows.append(list(row) + [0] * gw)
            for row in lg.weights:
                rows.append([0] * fw + list(row))
        else:
            rows = [list(r) for r in lf.weights] + [list(r) for r in lg.weights]
        layers.append(
            Layer(rows, list(lf.biases) + list(lg.biases), lf.activations + lg.activations)
        )
    layers.append(Layer([[1, 1]], [0], identity()))
    return Network(f.input_dim, layers, fa.output_bias + ga.output_bias)


def _pad_depth(net: Network, depth: int) -> Network:
    if net.depth == depth:
        return net
    pads = [Layer([[1]], [0], identity()) for _ in range(depth - net.depth)]
    return Network(net.input_dim, net.layers + pads, net.output_bias)
