"""Exact calculus of continuous piecewise-linear functions on the real line.

A ``Pwl1D`` is stored as a strictly increasing breakpoint list, one slope per
piece (``len(slopes) == len(breakpoints) + 1``), and an anchor giving the
function value at the first breakpoint (or at an arbitrary reference x when
there are no breakpoints).  The canonical form merges adjacent pieces with
equal slope, so ``piece_count`` is the number of maximal affine pieces.

All operations work for float or Fraction scalars.  With Fractions every
operation here is exact, which is what the certification paths rely on.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

from .numerics import MERGE_TOL, Scalar, close, exact_div, is_exact, to_exact


class UnboundedDomainError(ValueError):
    """Raised when a ReLU decomposition needs a domain lower bound and none was given."""


# ---------------------------------------------------------------------------
# Pwl1D
# ---------------------------------------------------------------------------


@dataclass
class Pwl1D:
    breakpoints: List[Scalar]
    slopes: List[Scalar]
    anchor_x: Scalar
    anchor_y: Scalar
    # function values at each breakpoint, filled in by canonicalize()
    _bp_values: List[Scalar] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if len(self.slopes) != len(self.breakpoints) + 1:
            raise ValueError("need len(slopes) == len(breakpoints) + 1")
        for a, b in zip(self.breakpoints, self.breakpoints[1:]):
            if not a < b:
                raise ValueError("breakpoints must be strictly increasing")
        if self.breakpoints and self.anchor_x != self.breakpoints[0]:
            raise ValueError("anchor must sit at the first breakpoint")
        self._fill_values()

    @property
    def exact(self) -> bool:
        return (
            all(is_exact(v) for v in self.breakpoints)
            and all(is_exact(v) for v in self.slopes)
            and is_exact(self.anchor_y)
        )

    def _fill_values(self):
        vals = []
        if self.breakpoints:
            v = self.anchor_y
            vals.append(v)
            for k in range(1, len(self.breakpoints)):
                v = v + self.slopes[k] * (self.breakpoints[k] - self.breakpoints[k - 1])
                vals.append(v)
        self._bp_values = vals

    def value_at(self, x: Scalar) -> Scalar:
        bps = self.breakpoints
        if not bps:
            return self.anchor_y + self.slopes[0] * (x - self.anchor_x)
        k = bisect.bisect_right(bps, x)
        if k == 0:
            return self._bp_values[0] + self.slopes[0] * (x - bps[0])
        return self._bp_values[k - 1] + self.slopes[k] * (x - bps[k - 1])

    def piece_count(self) -> int:
        return len(self.slopes)

    def canonical(self, tol: Scalar = MERGE_TOL) -> "Pwl1D":
        """Merge adjacent equal-slope pieces. Exact inputs merge exactly."""
        bps, slopes = [], [self.slopes[0]]
        for bp, s in zip(self.breakpoints, self.slopes[1:]):
            if close(s, slopes[-1], tol):
                continue
            bps.append(bp)
            slopes.append(s)
        if not bps:
            return Pwl1D([], [slopes[0]], self.anchor_x, self.value_at(self.anchor_x))
        return Pwl1D(bps, slopes, bps[0], self.value_at(bps[0]))

    def equals(self, other: "Pwl1D", tol: Scalar = MERGE_TOL) -> bool:
        a, b = self.canonical(tol), other.canonical(tol)
        if len(a.breakpoints) != len(b.breakpoints):
            return False
        return (
            all(close(x, y, tol) for x, y in zip(a.breakpoints, b.breakpoints))
            and all(close(x, y, tol) for x, y in zip(a.slopes, b.slopes))
            and close(a.value_at(a.anchor_x), b.value_at(a.anchor_x), tol)
        )

    @staticmethod
    def affine(slope: Scalar, value_at_zero: Scalar) -> "Pwl1D":
        zero = Fraction(0) if is_exact(slope) and is_exact(value_at_zero) else 0.0
        return Pwl1D([], [slope], zero, value_at_zero)

    @staticmethod
    def constant(value: Scalar) -> "Pwl1D":
        return Pwl1D.affine(0 * value, value)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Activation:
    """Scalar activation with an exact piecewise-linear description.

    Kinds:
      relu          max(0, t)
      hardtanh      clamp to [-1, 1]
      bump          tent of height `center` on [center-delta, center+delta], zero outside
      tailcut       identity below 1, linear descent to 0 on [1, 1+delta], zero above
      windowlinear  identity on [-1, 1], zero outside [-1-delta, 1+delta], linear ramps between
      identity      t
    """

    kind: str
    params: Tuple[Tuple[str, Scalar], ...] = ()

    def param(self, name: str) -> Scalar:
        for k, v in self.params:
            if k == name:
                return v
        raise KeyError(name)

    def to_pwl(self) -> Pwl1D:
        k = self.kind
        if k == "relu":
            return Pwl1D([0], [0, 1], 0, 0)
        if k == "hardtanh":
            return Pwl1D([-1, 1], [0, 1, 0], -1, -1)
        if k == "identity":
            return Pwl1D.affine(1, 0)
        if k == "bump":
            c, d = self.param("center"), self.param("delta")
            if c == 0:
                raise ValueError("bump center must be nonzero")
            if not d > 0:
                raise ValueError("bump delta must be positive")
            return Pwl1D([c - d, c, c + d], [0 * c, c / d, -c / d, 0 * c], c - d, 0 * c)
        if k == "tailcut":
            d = self.param("delta")
            if not d > 0:
                raise ValueError("tailcut delta must be positive")
            one = d / d
            return Pwl1D([one, one + d], [one, -one / d, 0 * d], one, one)
        if k == "windowlinear":
            d = self.param("delta")
            if not d > 0:
                raise ValueError("windowlinear delta must be positive")
            one = d / d
            return Pwl1D(
                [-one - d, -one, one, one + d],
                [0 * d, -one / d, one, -one / d, 0 * d],
                -one - d,
                0 * d,
            )
        raise ValueError(f"unknown activation kind {k!r}")

    def __call__(self, t: Scalar) -> Scalar:
        # direct formulas agreeing with to_pwl everywhere; exact for the
        # flat regions in float mode too
        k = self.kind
        if k == "relu":
            return t if t > 0 else 0 * t
        if k == "identity":
            return t
        if k == "hardtanh":
            one = t * 0 + 1
            if t <= -1:
                return -one
            return t if t <= 1 else one
        if k == "bump":
            c, d = self.param("center"), self.param("delta")
            dist = abs(t - c)
            if dist >= d:
                return 0 * t
            return exact_div(c * (d - dist), d)
        if k == "tailcut":
            d = self.param("delta")
            if t <= 1:
                return t
            if t >= 1 + d:
                return 0 * t
            return exact_div(1 + d - t, d)
        if k == "windowlinear":
            d = self.param("delta")
            if -1 <= t <= 1:
                return t
            mag = abs(t)
            if mag >= 1 + d:
                return 0 * t
            ramp = exact_div(1 + d - mag, d)
            return ramp if t > 0 else -ramp
        return self.to_pwl().value_at(t)

    def to_json(self) -> dict:
        def out(v: Scalar):
            if isinstance(v, Fraction):
                return f"{v.numerator}/{v.denominator}"
            return v if isinstance(v, int) else float(v)

        return {"kind": self.kind, "params": {k: out(v) for k, v in self.params}}

    @staticmethod
    def from_json(obj: dict) -> "Activation":
        def parse(v) -> Scalar:
            if isinstance(v, str):
                num, den = v.split("/")
                return Fraction(int(num), int(den))
            return v

        params = tuple(sorted((k, parse(v)) for k, v in obj.get("params", {}).items()))
        return Activation(obj["kind"], params)


def relu() -> Activation:
    return Activation("relu")


def hardtanh() -> Activation:
    return Activation("hardtanh")


def identity() -> Activation:
    return Activation("identity")


def bump(center: Scalar, delta: Scalar) -> Activation:
    return Activation("bump", (("center", center), ("delta", delta)))


def tailcut(delta: Scalar) -> Activation:
    return Activation("tailcut", (("delta", delta),))


def windowlinear(delta: Scalar) -> Activation:
    return Activation("windowlinear", (("delta", delta),))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def pwl_affine_pre(f: Pwl1D, a: Scalar, b: Scalar) -> Pwl1D:
    """The function x -> f(a*x + b), exactly."""
    if a == 0:
        return Pwl1D.constant(f.value_at(b))
    if a > 0:
        bps = [(bp - b) / a for bp in f.breakpoints]
        slopes = [s * a for s in f.slopes]
    else:
        bps = [(bp - b) / a for bp in reversed(f.breakpoints)]
        slopes = [s * a for s in reversed(f.slopes)]
    if not bps:
        return Pwl1D([], slopes, 0 * a, f.value_at(b)).canonical()
    anchor_y = f.value_at(a * bps[0] + b)
    return Pwl1D(bps, slopes, bps[0], anchor_y).canonical()


def _piece_bounds(f: Pwl1D) -> List[Tuple[Optional[Scalar], Optional[Scalar]]]:
    bps = f.breakpoints
    if not bps:
        return [(None, None)]
    out = [(None, bps[0])]
    for a, b in zip(bps, bps[1:]):
        out.append((a, b))
    out.append((bps[-1], None))
    return out


def pwl_apply_activation(act: Activation, f: Pwl1D) -> Pwl1D:
    """Composition act(f(x)), exact for exact inputs."""
    g = act.to_pwl()
    cand = set(f.breakpoints)
    # crossings of f with each activation breakpoint, inside each piece of f
    for (lo, hi), s in zip(_piece_bounds(f), f.slopes):
        if s == 0:
            continue
        ref = lo if lo is not None else (hi if hi is not None else f.anchor_x)
        v_ref = f.value_at(ref)
        for B in g.breakpoints:
            t = ref + (B - v_ref) / s
            if (lo is None or t > lo) and (hi is None or t < hi):
                cand.add(t)
    bps = sorted(cand)
    # dedupe float fuzz
    if bps and not all(is_exact(b) for b in bps):
        dedup = [bps[0]]
        for b in bps[1:]:
            if not close(b, dedup[-1]):
                dedup.append(b)
        bps = dedup
    if not bps:
        probe = f.anchor_x
        v = f.value_at(probe)
        s = f.slopes[0]
        return Pwl1D.constant(g.value_at(v)) if s == 0 else _compose_affine_probe(g, f, probe)
    one = 1 if is_exact(bps[0]) else 1.0
    slopes = []
    probes = [bps[0] - one]
    for a, b in zip(bps, bps[1:]):
        probes.append((a + b) / 2)
    probes.append(bps[-1] + one)
    for p in probes:
        slopes.append(_slope_of_composition(g, f, p))
    anchor_y = g.value_at(f.value_at(bps[0]))
    return Pwl1D(bps, slopes, bps[0], anchor_y).canonical()


def _slope_of_composition(g: Pwl1D, f: Pwl1D, x: Scalar) -> Scalar:
    sf = _slope_at(f, x)
    v = f.value_at(x)
    sg = _slope_at(g, v) if sf == 0 else _slope_at(g, v, direction=sf)
    return sf * sg


def _slope_at(f: Pwl1D, x: Scalar, direction: Scalar = 1) -> Scalar:
    """Slope of f on the piece containing x; on a breakpoint, the side `direction` points to."""
    bps = f.breakpoints
    if not bps:
        return f.slopes[0]
    if direction >= 0:
        k = bisect.bisect_right(bps, x)
    else:
        k = bisect.bisect_left(bps, x)
    return f.slopes[k]


def _compose_affine_probe(g: Pwl1D, f: Pwl1D, probe: Scalar) -> Pwl1D:
    s = _slope_of_composition(g, f, probe)
    v = g.value_at(f.value_at(probe))
    return Pwl1D([], [s], probe, v)


def pwl_weighted_sum(
    terms: Sequence[Tuple[Scalar, Pwl1D]], bias: Scalar = 0
) -> Pwl1D:
    """sum_i coeff_i * f_i(x) + bias, exactly."""
    cand = set()
    for _, f in terms:
        cand.update(f.breakpoints)
    bps = sorted(cand)
    if bps and not all(is_exact(b) for b in bps):
        dedup = [bps[0]]
        for b in bps[1:]:
            if not close(b, dedup[-1]):
                dedup.append(b)
        bps = dedup
    if not bps:
        s = bias * 0
        v = bias
        x0 = 0 if all(is_exact(c) for c, _ in terms) else 0.0
        for c, f in terms:
            s = s + c * f.slopes[0]
            v = v + c * f.value_at(x0)
        return Pwl1D([], [s], x0, v)
    one = 1 if is_exact(bps[0]) else 1.0
    probes = [bps[0] - one] + [(a + b) / 2 for a, b in zip(bps, bps[1:])] + [bps[-1] + one]
    slopes = []
    for p in probes:
        s = bias * 0
        for c, f in terms:
            s = s + c * _slope_at(f, p)
        slopes.append(s)
    anchor_y = bias
    for c, f in terms:
        anchor_y = anchor_y + c * f.value_at(bps[0])
    return Pwl1D(bps, slopes, bps[0], anchor_y).canonical()


def piece_budget(K: int, N: int) -> int:
    """Forced piece count for the adversarial one-dimensional layouts."""
    if not (1 <= N <= K) or K < 3:
        raise ValueError("need 1 <= N <= K and K >= 3")
    return 3 * N + 1 if K >= 3 * N + 2 else K - 1


# ---------------------------------------------------------------------------
# ReLU decomposition of activations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReluTerm:
    """output_coeff * relu(input_coeff * t + input_shift), input_coeff in {+1, -1}."""

    input_coeff: int
    input_shift: Scalar
    output_coeff: Scalar


@dataclass
class ReluDecomposition:
    terms: List[ReluTerm]
    constant: Scalar
    linear_coeff: Scalar  # nonzero only when both tails slope; realized via carrier
    carrier_shift: Optional[Scalar] = None  # relu(t - carrier_shift) realizes the linear part
    domain_low: Optional[Scalar] = None

    @property
    def neuron_count(self) -> int:
        return len(self.terms) + (1 if self.carrier_shift is not None else 0)

    def evaluate(self, t: Scalar) -> Scalar:
        v = self.constant
        for term in self.terms:
            pre = term.input_coeff * t + term.input_shift
            if pre > 0:
                v = v + term.output_coeff * pre
        if self.linear_coeff != 0:
            if self.carrier_shift is None:
                v = v + self.linear_coeff * t
            else:
                pre = t - self.carrier_shift
                v = v + self.linear_coeff * (pre if pre > 0 else 0 * pre) \
                    + self.linear_coeff * self.carrier_shift
        return v

    def to_pwl(self) -> Pwl1D:
        terms = []
        base = Pwl1D([0], [0, 1], 0, 0)
        for term in self.terms:
            terms.append(
                (term.output_coeff, pwl_affine_pre(base, term.input_coeff, term.input_shift))
            )
        lin = self.linear_coeff
        if lin != 0:
            if self.carrier_shift is None:
                terms.append((lin, Pwl1D.affine(1, 0)))
            else:
                sh = self.carrier_shift
                terms.append((lin, pwl_affine_pre(base, 1, -sh)))
        const = self.constant
        if lin != 0 and self.carrier_shift is not None:
            const = const + lin * self.carrier_shift
        return pwl_weighted_sum(terms, const)


def activation_to_relus(
    act: Activation, domain_low: Optional[Scalar] = None
) -> ReluDecomposition:
    """Decompose an activation into a sum of ReLU terms plus an affine remainder.

    Activations with a flat left tail decompose rightward; those with a flat
    right tail decompose leftward (negative input weight), which covers the
    descending tail cut with two neurons everywhere on the line.  Only a
    both-tails-sloped activation (identity) needs the shifted-ReLU carrier,
    valid on [domain_low, inf).
    """
    if act.kind == "relu":
        return ReluDecomposition([ReluTerm(1, 0, 1)], 0, 0, domain_low=domain_low)
    f = act.to_pwl().canonical()
    bps, slopes = f.breakpoints, f.slopes
    if not bps:
        # affine activation (identity)
        lin = slopes[0]
        const = f.value_at(0 * lin)
        if lin == 0:
            return ReluDecomposition([], const, 0, domain_low=domain_low)
        if domain_low is None:
            raise UnboundedDomainError(
                "affine activation needs domain_low to realize the linear part as a ReLU"
            )
        return ReluDecomposition([], const, lin, carrier_shift=domain_low, domain_low=domain_low)
    left_slope, right_slope = slopes[0], slopes[-1]
    if left_slope == 0:
        # rightward: f(t) = left tail level + sum (s_k - s_{k-1}) relu(t - b_k)
        const = f.value_at(bps[0])
        terms = [
            ReluTerm(1, -bp, slopes[k + 1] - slopes[k]) for k, bp in enumerate(bps)
        ]
        return ReluDecomposition(terms, const, 0, domain_low=domain_low)
    if right_slope == 0:
        # leftward: flat right tail carries the constant; kinks open leftward
        const = f.value_at(bps[-1])
        terms = [
            ReluTerm(-1, bp, slopes[k + 1] - slopes[k]) for k, bp in enumerate(bps)
        ]
        return ReluDecomposition(terms, const, 0, domain_low=domain_low)
    # both tails sloped: rightward kinks plus a carrier for the leading slope
    if domain_low is None:
        raise UnboundedDomainError(
            f"activation {act.kind!r} slopes on both tails; needs domain_low"
        )
    terms = [ReluTerm(1, -bp, slopes[k + 1] - slopes[k]) for k, bp in enumerate(bps)]
    # intercept of the leftmost affine piece
    const = f.value_at(bps[0]) - left_slope * bps[0]
    return ReluDecomposition(
        terms, const, left_slope, carrier_shift=domain_low, domain_low=domain_low
    )
