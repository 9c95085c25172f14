"""Closed-form capacity bound calculators for additive builds.

Two dual families: m-bounds give the neuron count needed to tune N of K
samples; N-bounds invert them, giving the tunable-sample capacity of a fixed
neuron budget m.  Every acceptance check reads these functions rather than
re-deriving formulas inline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

F = Fraction
Real = Union[int, float, Fraction]


class RegimeError(RuntimeError):
    """The regime conditions failed to select exactly one clause."""


@dataclass(frozen=True)
class CapacityBounds:
    regime: str
    m_lower: Optional[Real] = None
    m_upper: Optional[Real] = None
    n_lower: Optional[Real] = None
    n_upper: Optional[Real] = None
    pinned: bool = False                 # n-bounds collapse to an exact value
    tightened: dict = field(default_factory=dict)

    def __post_init__(self):
        for lo, hi in ((self.m_lower, self.m_upper), (self.n_lower, self.n_upper)):
            if lo is not None and hi is not None and lo > hi:
                raise ValueError(f"lower bound {lo} exceeds upper bound {hi}")

    def to_json(self) -> dict:
        def out(v):
            if v is None:
                return None
            if isinstance(v, Fraction):
                if v.denominator == 1:
                    return v.numerator
                return f"{v.numerator}/{v.denominator}"
            return v if isinstance(v, int) else float(v)

        return {
            "regime": self.regime,
            "m_lower": out(self.m_lower),
            "m_upper": out(self.m_upper),
            "n_lower": out(self.n_lower),
            "n_upper": out(self.n_upper),
            "pinned": self.pinned,
            "tightened": {k: out(v) for k, v in self.tightened.items()},
        }


def _check_nk(N: int, K: int):
    if K < 3:
        raise ValueError("need K >= 3")
    if not (0 <= N <= K):
        raise ValueError("need 0 <= N <= K")


def _check_mk(m: int, K: int):
    if m < 1:
        raise ValueError("need m >= 1")
    if K < 3:
        raise ValueError("need K >= 3")


def m_bounds_2layer(N: int, K: int) -> CapacityBounds:
    """Neurons needed by a two-layer build: min{3N, K-2} to min{3N+1, K-1}."""
    _check_nk(N, K)
    regime = "tuned-limited" if 3 * N <= K - 2 else "sample-limited"
    return CapacityBounds(
        regime,
        m_lower=min(3 * N, K - 2),
        m_upper=min(3 * N + 1, K - 1),
    )


def n_bounds_2layer(m: int, K: int) -> CapacityBounds:
    """Tunable samples for a two-layer budget m.

    With K at most m+1 the whole sample set is tunable; beyond that the
    capacity sits between floor((m-1)/3) and m/3, and integrality pulls the
    upper end down to floor(m/3).
    """
    _check_mk(m, K)
    if K <= m + 1:
        return CapacityBounds("memorization", n_lower=K, n_upper=K, pinned=True)
    lower = (m - 1) // 3
    upper = F(m, 3)
    return CapacityBounds(
        "fine-tuning",
        n_lower=lower,
        n_upper=upper,
        tightened={"n_upper": m // 3},
    )


def m_bounds_3layer(N: int, K: int) -> CapacityBounds:
    """Neurons needed by a three-layer build.

    Upper: the cheaper of the window-plus-bump route, 2*sqrt(K) +
    min(2*sqrt(K), 3N), and the reduced-set route, 6*sqrt(3N+2).  Lower:
    sqrt(2*min{3N, K-2} + 1/4) - 1/2, from the piece-count argument.
    """
    _check_nk(N, K)
    rk = math.sqrt(K)
    windowed = 2 * rk + min(2 * rk, 3 * N)
    sparse = 6 * math.sqrt(3 * N + 2)
    upper = min(windowed, sparse)
    lower = math.sqrt(2 * min(3 * N, K - 2) + 0.25) - 0.5
    return CapacityBounds(
        "sparse" if sparse <= windowed else "windowed",
        m_lower=lower,
        m_upper=upper,
        tightened={"m_lower": math.ceil(lower), "m_upper": math.floor(upper)},
    )


def n_regime_3layer(m: int, K: int) -> str:
    """Which clause of the three-layer capacity bound applies.

    The three conditions are stated independently and must select exactly one
    regime; RegimeError means a gap or an overlap, which the sweep check
    treats as a hard failure.
    """
    _check_mk(m, K)
    mem = K <= (m * m) // 16
    transition = (m * m) // 16 + 1 <= K and 2 * K < m * m + m + 4
    fine = 2 * K >= m * m + m + 4
    hits = [
        name
        for name, hit in (
            ("memorization", mem),
            ("transition", transition),
            ("fine-tuning", fine),
        )
        if hit
    ]
    if len(hits) != 1:
        raise RegimeError(f"m={m}, K={K} matched {hits or 'no clause'}")
    return hits[0]


def n_bounds_3layer(m: int, K: int) -> CapacityBounds:
    """Tunable samples for a three-layer budget m, by regime.

    Memorization (K <= floor(m^2/16)): everything is tunable.  Past that the
    lower bound is floor(m^2/108 - 2/3); the upper is the trivial K until K
    reaches (m^2+m+4)/2, then (m^2+m)/6.
    """
    regime = n_regime_3layer(m, K)
    if regime == "memorization":
        return CapacityBounds(regime, n_lower=K, n_upper=K, pinned=True)
    lower = math.floor(F(m * m, 108) - F(2, 3))
    tight = {"n_lower": max(0, lower)}
    if regime == "transition":
        return CapacityBounds(regime, n_lower=lower, n_upper=K, tightened=tight)
    upper = F(m * m + m, 6)
    tight["n_upper"] = math.floor(upper)
    return CapacityBounds(regime, n_lower=lower, n_upper=upper, tightened=tight)


def ftc_mc_consistency(m: int, K: int) -> bool:
    """Capacity upper bounds never beat the memorization ceilings.

    Two sanity gates per depth: the computed n_upper stays at or below the
    sample count K, and at or below the largest sample set the same budget
    can memorize outright (m+2 for two layers, (m^2+m+4)/2 for three, both
    read off the m-lower-bound formulas at N = K).
    """
    two = n_bounds_2layer(m, K)
    three = n_bounds_3layer(m, K)
    mc_two = m + 2
    mc_three = F(m * m + m + 4, 2)
    return (
        two.n_upper <= K
        and two.n_upper <= mc_two
        and three.n_upper <= K
        and three.n_upper <= mc_three
    )
