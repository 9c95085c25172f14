"""Scalar helpers shared by the exact (rational) and floating-point code paths.

Every geometric quantity in the construction pipeline is either a Python
float or a fractions.Fraction.  Fractions flow through unchanged wherever
builders do algebra, which is what makes tolerance-zero certification
possible; floats take the same code paths with small tolerances.
"""

from __future__ import annotations

import os
from fractions import Fraction
from math import gcd
from typing import Iterable, Sequence, Union

Scalar = Union[int, float, Fraction]

# Slope/breakpoint merge tolerance for float-mode piecewise functions.
MERGE_TOL = 1e-12


def is_exact(x: Scalar) -> bool:
    return isinstance(x, (Fraction, int))


def all_exact(xs: Iterable[Scalar]) -> bool:
    return all(is_exact(x) for x in xs)


def to_exact(x: Scalar) -> Fraction:
    """Exact rational image of x (floats convert bit-exactly)."""
    if isinstance(x, Fraction):
        return x
    return Fraction(x)


def close(a: Scalar, b: Scalar, tol: Scalar = MERGE_TOL) -> bool:
    """Equality test honoring the arithmetic mode of the operands.

    Exact operands compare exactly; otherwise relative-absolute tolerance.
    """
    if is_exact(a) and is_exact(b):
        return a == b
    scale = max(1.0, abs(a), abs(b))
    return abs(a - b) <= tol * scale


def as_float(x: Scalar) -> float:
    return float(x)


def exact_div(a: Scalar, b: Scalar) -> Scalar:
    """Division that never demotes exact operands to float (int/int stays exact)."""
    if is_exact(a) and is_exact(b):
        return Fraction(a) / Fraction(b)
    return a / b


def exact_dot(row: Sequence[Scalar], values: Sequence[Scalar], bias: Scalar = 0) -> Fraction:
    """sum(r * v) + bias over exact scalars, normalizing once at the end.

    Fraction addition pays two gcds per step; accumulating raw numerator and
    denominator halves that, which dominates wide dot products with large
    rational entries (clip-system weights, exact network evaluation).
    """
    num, den = bias.numerator, getattr(bias, "denominator", 1)
    for r, v in zip(row, values):
        if not r or not v:
            continue
        p = r.numerator * v.numerator
        q = r.denominator * v.denominator
        g = gcd(den, q)
        if g == 1:
            num = num * q + p * den
            den = den * q
        else:
            qg = q // g
            num = num * qg + p * (den // g)
            den = den * qg
    return Fraction(num, den)


def rational_mode_enabled() -> bool:
    """Process-wide switch read by the CLI: FTC_RATIONAL=1 forces exact runs."""
    return os.environ.get("FTC_RATIONAL", "") in ("1", "true", "yes")


def coerce_like(value: Scalar, exact: bool) -> Scalar:
    return to_exact(value) if exact else float(value)
