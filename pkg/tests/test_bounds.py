"""Capacity bound calculators: frozen values, regimes, and cross-checks."""

import math
from fractions import Fraction

import numpy as np
import pytest

from ftc.bounds import (
    CapacityBounds,
    RegimeError,
    ftc_mc_consistency,
    m_bounds_2layer,
    m_bounds_3layer,
    n_bounds_2layer,
    n_bounds_3layer,
    n_regime_3layer,
)
from ftc.builders2 import build_two_layer
from ftc.builders3 import three_layer_auto
from ftc.instance import synthetic_instance

F = Fraction


def test_two_layer_m_bounds():
    b = m_bounds_2layer(4, 14)
    assert (b.m_lower, b.m_upper) == (12, 13)
    assert b.regime == "tuned-limited"

    for K in (3, 7, 14, 50):
        b = m_bounds_2layer(K, K)
        assert (b.m_lower, b.m_upper) == (K - 2, K - 1)
        assert b.regime == "sample-limited"

    b = m_bounds_2layer(0, 9)
    assert (b.m_lower, b.m_upper) == (0, 1)

    with pytest.raises(ValueError):
        m_bounds_2layer(5, 2)
    with pytest.raises(ValueError):
        m_bounds_2layer(-1, 9)
    with pytest.raises(ValueError):
        m_bounds_2layer(10, 9)


def test_two_layer_n_bounds():
    b = n_bounds_2layer(7, 20)
    assert (b.n_lower, b.n_upper) == (2, F(7, 3))
    assert b.tightened["n_upper"] == 2  # capacity is exactly 2

    b = n_bounds_2layer(10, 9)
    assert b.pinned and b.n_lower == b.n_upper == 9
    assert b.regime == "memorization"

    b = n_bounds_2layer(1, 3)
    assert (b.n_lower, b.n_upper) == (0, F(1, 3))
    assert b.tightened["n_upper"] == 0

    # boundary: K = m+1 memorizes, K = m+2 does not
    assert n_bounds_2layer(6, 7).pinned
    assert not n_bounds_2layer(6, 8).pinned

    with pytest.raises(ValueError):
        n_bounds_2layer(0, 5)


def test_three_layer_m_bounds():
    b = m_bounds_3layer(3, 10**4)
    assert b.m_upper == pytest.approx(6 * math.sqrt(11))
    assert b.m_lower == pytest.approx(math.sqrt(18.25) - 0.5)
    assert b.regime == "sparse"
    assert b.tightened == {"m_lower": 4, "m_upper": 19}

    # N = K: the lower bound grows like sqrt(K)
    for K in (10, 100, 1000):
        b = m_bounds_3layer(K, K)
        assert b.m_lower == pytest.approx(math.sqrt(2 * (K - 2) + 0.25) - 0.5)
        assert b.m_lower >= math.sqrt(K)

    # N = 0: the reduced-set branch caps the upper bound at 6*sqrt(2)
    b = m_bounds_3layer(0, 10**6)
    assert b.m_upper == pytest.approx(6 * math.sqrt(2))
    # tiny K: the windowed branch wins instead
    b = m_bounds_3layer(0, 3)
    assert b.m_upper == pytest.approx(2 * math.sqrt(3))
    assert b.regime == "windowed"


def test_three_layer_n_bounds():
    b = n_bounds_3layer(12, 9)
    assert b.pinned and b.n_upper == 9    # 9 = floor(144/16)

    b = n_bounds_3layer(12, 100)          # 100 >= (144+12+4)/2 = 80
    assert b.regime == "fine-tuning"
    assert (b.n_lower, b.n_upper) == (0, 26)
    assert b.tightened["n_upper"] == 26

    b = n_bounds_3layer(30, 200)          # 56 < 200 < 467
    assert b.regime == "transition"
    assert b.n_lower == 7 and b.n_upper == 200

    # small budgets push the raw lower bound below zero; the tightened
    # value clamps it
    b = n_bounds_3layer(4, 50)
    assert b.n_lower < 0 <= b.tightened["n_lower"]


def test_regime_partition_no_gaps_no_overlaps():
    for m in range(1, 140):
        for K in range(3, 400):
            n_regime_3layer(m, K)  # raises on gap or overlap
    # boundaries land exactly where the clauses hand over
    assert n_regime_3layer(12, 9) == "memorization"
    assert n_regime_3layer(12, 10) == "transition"
    assert n_regime_3layer(12, 79) == "transition"
    assert n_regime_3layer(12, 80) == "fine-tuning"


def test_lower_never_exceeds_upper():
    for m in range(1, 200):
        for K in (3, 5, 9, 20, 77, 300, 4096):
            b2 = n_bounds_2layer(m, K)
            b3 = n_bounds_3layer(m, K)
            assert b2.n_lower <= b2.n_upper
            assert b3.n_lower <= b3.n_upper
    for N in range(0, 60):
        for K in range(max(3, N), 90):
            a = m_bounds_2layer(N, K)
            b = m_bounds_3layer(N, K)
            assert a.m_lower <= a.m_upper
            assert b.m_lower <= b.m_upper


def test_bound_monotonicity():
    for K in (9, 30, 120):
        prev2 = prev3 = -1.0
        for N in range(0, K + 1):
            cur2 = m_bounds_2layer(N, K).m_upper
            cur3 = m_bounds_3layer(N, K).m_upper
            assert cur2 >= prev2 and cur3 >= prev3 - 1e-12
            prev2, prev3 = cur2, cur3
    for K in (9, 30, 120):
        prevn2 = prevn3 = -1.0
        for m in range(1, 200):
            n2 = n_bounds_2layer(m, K).n_upper
            n3 = n_bounds_3layer(m, K).n_upper
            assert n2 >= prevn2 and n3 >= prevn3
            prevn2, prevn3 = n2, n3


def test_consistency_check():
    assert ftc_mc_consistency(12, 100)
    for m in (1, 2, 7, 33, 500):
        for K in (3, 10, 99, 10**4):
            assert ftc_mc_consistency(m, K)


def test_invalid_bounds_object_rejected():
    with pytest.raises(ValueError):
        CapacityBounds("x", m_lower=5, m_upper=4)


def test_built_networks_respect_bounds():
    rng = np.random.default_rng(42)
    for trial in range(10):
        K = int(rng.integers(4, 60))
        N = int(rng.integers(0, K + 1))
        inst = synthetic_instance(K=K, d=3, N=N, seed=3000 + trial)

        net2, rep2 = build_two_layer(inst)
        b2 = m_bounds_2layer(N, K)
        assert rep2.m <= b2.m_upper

        net3, rep3 = three_layer_auto(inst)
        b3 = m_bounds_3layer(N, K)
        # the auto bound applies per-branch ceilings to the same formulas
        assert rep3.m <= rep3.bound
        assert rep3.m >= b3.m_lower if N else rep3.m == 0
