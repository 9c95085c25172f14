"""Width-vs-samples scaling harness.

Pipeline: pre-train a two-layer f on a synthetic regression set, redraw N of
the K labels, then train an additive three-layer g of width m on the residual
objective and record ell_ft = mean((f + g - y')^2).  A doubling-then-bisection
search per N finds the smallest m whose best-of-seeds loss clears the
threshold, and a log-log fit of that frontier gives the scaling exponent.

Every random draw comes from a counter-based Philox stream keyed by
(master_seed, N, m, seed), so any cell can be recomputed in isolation and
parallel schedules reproduce sequential results bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..builders3 import build_grid
from ..instance import FineTuneInstance, gen_synthetic
from ..network import Layer, Network, to_pure_relu
from ..pwl import identity, relu
from . import kernels

F = Fraction


class InsufficientDataError(ValueError):
    """Fewer than four usable points for the scaling fit."""


@dataclass
class TrainConfig:
    K: int = 200
    d: int = 10
    f_width: int = 256
    f_epochs: int = 3000
    f_lr: float = 0.02
    g_epochs: int = 4000
    g_lr: float = 0.05
    momentum: float = 0.9
    master_seed: int = 0
    seeds_per_cell: int = 3
    threshold: float = 0.04
    pretrain_threshold: float = 1e-4
    m_min: int = 2
    m_max: int = 512
    constructive_init: bool = False

    def __post_init__(self):
        positive = (
            self.K, self.d, self.f_width, self.f_epochs, self.g_epochs,
            self.seeds_per_cell, self.m_min, self.m_max,
        )
        if any(v < 1 for v in positive):
            raise ValueError("counts and widths must be positive")
        if min(self.f_lr, self.g_lr, self.threshold, self.pretrain_threshold) <= 0:
            raise ValueError("rates and thresholds must be positive")
        if not (0 <= self.momentum < 1):
            raise ValueError("momentum must lie in [0, 1)")
        if self.m_min < 2:
            raise ValueError("g splits across two hidden layers; need m >= 2")


# paper-scale preset; the default above is sized for a desk run
PAPER_SCALE = dict(K=1000, f_width=1024, f_epochs=6000, g_epochs=6000, m_max=1024)


@dataclass
class CellResult:
    N: int
    m: int
    seed: int
    loss_ft: float
    passed: bool


@dataclass
class ScalingResult:
    rows: List[CellResult]
    min_m: Dict[int, Optional[int]]
    exponent: Optional[float]
    stderr: Optional[float]
    intercept: Optional[float]
    meta: dict = field(default_factory=dict)

    def to_csv(self, path: str):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "m", "seed", "loss_ft", "passed"])
            for r in self.rows:
                w.writerow([r.N, r.m, r.seed, repr(r.loss_ft), int(r.passed)])

    def summary(self) -> dict:
        return {
            "min_m": {str(k): v for k, v in self.min_m.items()},
            "exponent": self.exponent,
            "stderr": self.stderr,
            "intercept": self.intercept,
            "meta": self.meta,
        }

    def save_summary(self, path: str):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=1)


def _philox(master: int, a: int = 0, b: int = 0, c: int = 0) -> np.random.Generator:
    # pack the stream coordinates into the 128-bit Philox key: master in the
    # high word, (purpose, cell, seed) in disjoint fields of the low word
    key = (
        ((master & 0xFFFFFFFFFFFFFFFF) << 64)
        | ((a & 0xFFFF) << 48)
        | ((b & 0xFFFFFFFF) << 16)
        | (c & 0xFFFF)
    )
    return np.random.default_rng(np.random.Philox(key=key))


def _he_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)


def params_hash(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Pre-training
# ---------------------------------------------------------------------------


def train_mlp(
    dataset: Tuple[np.ndarray, np.ndarray], cfg: TrainConfig
) -> Tuple[dict, float]:
    """Fit the frozen predictor; returns its parameter dict and final MSE.

    The loss is not gated here: a value above cfg.pretrain_threshold means
    the fit did not converge and the caller may widen the net and retry.
    """
    X, y = dataset
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    rng = _philox(cfg.master_seed, 1)
    d, h = X.shape[1], cfg.f_width
    W1 = _he_init(rng, d, h)
    b1 = np.zeros(h)
    w2 = rng.standard_normal(h) * math.sqrt(1.0 / h)
    b2 = np.zeros(1)
    loss = kernels.train_two_layer(
        X, y, W1, b1, w2, b2, cfg.f_lr, cfg.momentum, cfg.f_epochs
    )
    return {"W1": W1, "b1": b1, "w2": w2, "b2": b2}, loss


def f_as_network(params: dict) -> Network:
    W1, b1, w2, b2 = params["W1"], params["b1"], params["w2"], params["b2"]
    hidden = Layer(W1.T.tolist(), b1.tolist(), relu())
    out = Layer([w2.tolist()], [float(b2[0])], identity())
    return Network(W1.shape[0], [hidden, out], 0.0)


def perturb_labels(
    y: np.ndarray, N: int, master_seed: int, N_tag: Optional[int] = None
) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """Redraw N labels uniformly from [-1, 1]; returns (y', tuned 1-based)."""
    K = y.shape[0]
    if not (0 <= N <= K):
        raise ValueError("need 0 <= N <= K")
    rng = _philox(master_seed, 2, N if N_tag is None else N_tag)
    idx = np.sort(rng.choice(K, size=N, replace=False))
    y2 = y.copy()
    y2[idx] = rng.uniform(-1.0, 1.0, size=N)
    return y2, tuple(int(i) + 1 for i in idx)


# ---------------------------------------------------------------------------
# Fine-tuning
# ---------------------------------------------------------------------------


def _split_width(m: int) -> Tuple[int, int]:
    return -(-m // 2), m // 2


def finetune_additive(
    f_params: dict,
    X: np.ndarray,
    y2: np.ndarray,
    m: int,
    cfg: TrainConfig,
    N: int = 0,
    seed: int = 0,
    init: Optional[dict] = None,
) -> Tuple[dict, float]:
    """Train the additive three-layer g; f stays frozen.

    With init given (constructive mode), the parameters are used as-is and no
    training happens; the returned loss is the evaluated objective.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    resid = y2 - kernels.predict_two_layer(
        X, f_params["W1"], f_params["b1"], f_params["w2"], f_params["b2"]
    )
    d1, d2 = _split_width(m)
    if init is not None:
        pred = kernels.predict_three_layer(
            X, init["W1"], init["b1"], init["W2"], init["b2"],
            init["w3"], init["b3"],
        )
        err = pred - resid
        return init, float(np.mean(err * err))
    rng = _philox(cfg.master_seed, 3, (N << 20) | m, seed)
    d = X.shape[1]
    W1 = _he_init(rng, d, d1)
    b1 = np.zeros(d1)
    W2 = _he_init(rng, d1, d2)
    b2 = np.zeros(d2)
    w3 = np.zeros(d2)          # zero read-out: g starts exactly at zero
    b3 = np.zeros(1)
    loss = kernels.train_three_layer(
        X, resid, W1, b1, W2, b2, w3, b3, cfg.g_lr, cfg.momentum, cfg.g_epochs
    )
    return {"W1": W1, "b1": b1, "W2": W2, "b2": b2, "w3": w3, "b3": b3}, loss


def g_as_network(params: dict) -> Network:
    l1 = Layer(params["W1"].T.tolist(), params["b1"].tolist(), relu())
    l2 = Layer(params["W2"].T.tolist(), params["b2"].tolist(), relu())
    out = Layer([params["w3"].tolist()], [float(params["b3"][0])], identity())
    return Network(params["W1"].shape[0], [l1, l2, out], 0.0)


# ---------------------------------------------------------------------------
# Constructive initialization
# ---------------------------------------------------------------------------


def _pow2_at_least(v: float) -> Fraction:
    s = F(1)
    while s < v:
        s *= 2
    return s


def constructive_network(
    f_params: dict, X: np.ndarray, y2: np.ndarray
) -> Tuple[Network, int]:
    """Exact grid build on the full residual vector, as a pure-ReLU network.

    Residual targets can leave [-1, 1], so the build runs on targets scaled
    down by a power of two (keeping them dyadic) and the read-out layer is
    scaled back up, which preserves exactness.  Returns the network and the
    total width budget under an even split, 2 * max hidden width; this never
    exceeds 4 * ceil(sqrt(K)), the auto bound for a full-residual instance.
    """
    resid = y2 - kernels.predict_two_layer(
        X, f_params["W1"], f_params["b1"], f_params["w2"], f_params["b2"]
    )
    K = X.shape[0]
    points = [[F(v) for v in row] for row in X]
    scale = _pow2_at_least(float(np.max(np.abs(resid))) or 1.0)
    targets = [F(v) / scale for v in resid]
    tuned = tuple(i + 1 for i in range(K) if targets[i] != 0)
    targets = [t if (i + 1) in set(tuned) else F(0) for i, t in enumerate(targets)]
    inst = FineTuneInstance(X.shape[1], points, targets, tuned)
    net, report = build_grid(inst)
    out = net.layers[-1]
    rescaled = Layer(
        [[w * scale for w in out.weights[0]]],
        [out.biases[0] * scale],
        out.activations,
    )
    net = Network(
        net.input_dim, net.layers[:-1] + [rescaled], net.output_bias * scale
    )
    pure = to_pure_relu(net, inst)
    need = 2 * max(layer.out_dim for layer in pure.hidden_layers)
    return pure, need


def _embed(net: Network, d1: int, d2: int) -> Optional[dict]:
    """Zero-pad a pure-ReLU 3-layer network into the (d1, d2) parameter shape."""
    h1, h2, out = net.layers
    if h1.out_dim > d1 or h2.out_dim > d2:
        return None
    d = net.input_dim
    W1 = np.zeros((d, d1))
    b1 = np.zeros(d1)
    W1[:, : h1.out_dim] = np.array(h1.weights, dtype=np.float64).T
    b1[: h1.out_dim] = [float(v) for v in h1.biases]
    W2 = np.zeros((d1, d2))
    b2 = np.zeros(d2)
    W2[: h1.out_dim, : h2.out_dim] = np.array(h2.weights, dtype=np.float64).T
    b2[: h2.out_dim] = [float(v) for v in h2.biases]
    w3 = np.zeros(d2)
    w3[: h2.out_dim] = [float(v) for v in out.weights[0]]
    b3 = np.array([float(out.biases[0]) + float(net.output_bias)])
    return {"W1": W1, "b1": b1, "W2": W2, "b2": b2, "w3": w3, "b3": b3}


# ---------------------------------------------------------------------------
# Width search and scaling fit
# ---------------------------------------------------------------------------


def _eval_cell(
    f_params: dict,
    X: np.ndarray,
    y2: np.ndarray,
    N: int,
    m: int,
    cfg: TrainConfig,
    built: Optional[Tuple[Network, int]],
) -> List[CellResult]:
    rows = []
    init = None
    if built is not None:
        net, need = built
        d1, d2 = _split_width(m)
        if m >= need:
            init = _embed(net, d1, d2)
    seeds = 1 if init is not None else cfg.seeds_per_cell
    for seed in range(seeds):
        _, loss = finetune_additive(
            f_params, X, y2, m, cfg, N=N, seed=seed, init=init
        )
        rows.append(CellResult(N, m, seed, loss, loss <= cfg.threshold))
    return rows


def min_width_search(
    f_params: dict,
    X: np.ndarray,
    y: np.ndarray,
    N: int,
    cfg: TrainConfig,
) -> Tuple[Optional[int], List[CellResult]]:
    """Smallest m whose best-of-seeds loss clears the threshold.

    Doubling from m_min finds a passing width, then bisection tightens it.
    Returns (None, rows) when nothing passes at or below m_max.
    """
    y2, _ = perturb_labels(y, N, cfg.master_seed)
    built = None
    if cfg.constructive_init:
        built = constructive_network(f_params, X, y2)
    rows: List[CellResult] = []
    seen: Dict[int, bool] = {}

    def passes(m: int) -> bool:
        if m not in seen:
            cell = _eval_cell(f_params, X, y2, N, m, cfg, built)
            rows.extend(cell)
            seen[m] = any(r.passed for r in cell)
        return seen[m]

    m = cfg.m_min
    if passes(m):
        return m, rows
    while m < cfg.m_max:
        m = min(2 * m, cfg.m_max)
        if passes(m):
            break
    else:
        return None, rows
    lo, hi = m // 2 if m // 2 >= cfg.m_min else cfg.m_min, m
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if passes(mid):
            hi = mid
        else:
            lo = mid
    return hi, rows


def scaling_fit(pairs: Iterable[Tuple[int, float]]) -> Tuple[float, float, float]:
    """Least-squares slope of log m over log N: (exponent, stderr, intercept)."""
    pts = [(n, m) for n, m in pairs if n > 0 and m is not None and m > 0]
    if len({n for n, _ in pts}) < 4:
        raise InsufficientDataError("need at least 4 distinct N values")
    x = np.log([float(n) for n, _ in pts])
    z = np.log([float(m) for _, m in pts])
    xb, zb = x.mean(), z.mean()
    sxx = float(np.sum((x - xb) ** 2))
    slope = float(np.sum((x - xb) * (z - zb)) / sxx)
    intercept = zb - slope * xb
    resid = z - (slope * x + intercept)
    dof = max(len(pts) - 2, 1)
    stderr = math.sqrt(float(np.sum(resid**2)) / dof / sxx)
    return slope, stderr, intercept


def _search_task(args):
    f_params, X, y, N, cfg = args
    return N, min_width_search(f_params, X, y, N, cfg)


def run_experiment(
    cfg: TrainConfig,
    n_list: Sequence[int],
    workers: int = 1,
) -> ScalingResult:
    """Full pipeline: pre-train, per-N width search, scaling fit.

    Workers parallelize over N values; per-cell Philox streams make the
    parallel schedule produce exactly the sequential results.
    """
    X, y = gen_synthetic(cfg.K, cfg.d, seed=cfg.master_seed)
    f_params, f_loss = train_mlp((X, y), cfg)
    f_lr, f_epochs = cfg.f_lr, cfg.f_epochs
    attempts = 1
    # negated comparison so a NaN loss (divergence) also triggers a retry;
    # gentler steps with a longer schedule fix both failure modes
    while not (f_loss <= cfg.pretrain_threshold) and attempts < 3:
        f_lr *= 0.5
        f_epochs *= 2
        attempts += 1
        retry_cfg = TrainConfig(
            **{**asdict(cfg), "f_lr": f_lr, "f_epochs": f_epochs}
        )
        f_params, f_loss = train_mlp((X, y), retry_cfg)
    f_hash = params_hash(*(f_params[k] for k in ("W1", "b1", "w2", "b2")))

    tasks = [(f_params, X, y, N, cfg) for N in sorted(set(n_list))]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            found = dict(pool.map(_search_task, tasks))
    else:
        found = dict(map(_search_task, tasks))

    rows: List[CellResult] = []
    min_m: Dict[int, Optional[int]] = {}
    for N in sorted(found):
        m_star, cell_rows = found[N]
        min_m[N] = m_star
        rows.extend(cell_rows)

    exponent = stderr = intercept = None
    fit_pairs = [(n, m) for n, m in min_m.items() if n > 0 and m is not None]
    if len({n for n, _ in fit_pairs}) >= 4:
        exponent, stderr, intercept = scaling_fit(fit_pairs)

    post_hash = params_hash(*(f_params[k] for k in ("W1", "b1", "w2", "b2")))
    if post_hash != f_hash:
        raise RuntimeError("frozen predictor drifted during fine-tuning")

    meta = {
        "backend": kernels.backend_name(),
        "config": asdict(cfg),
        "f_width_used": width,
        "f_loss": f_loss,
        "f_hash": f_hash,
        "n_list": sorted(set(n_list)),
    }
    return ScalingResult(rows, min_m, exponent, stderr, intercept, meta)
