"""Instances, directions, generators, and the zigzag counting oracle."""

from fractions import Fraction

import numpy as np
import pytest

from ftc.instance import (
    DirectionSearchError,
    FineTuneInstance,
    direction_along,
    find_direction,
    gen_adversarial,
    gen_synthetic,
    synthetic_instance,
    zigzag_piece_count,
    zigzag_shareable_pairs,
)
from ftc.pwl import piece_budget

F = Fraction

# (K, N) -> (tuned indices, forced piece count, shareable slope-change pairs)
ADVERSARIAL_CASES = {
    (14, 4): ((3, 6, 9, 12), 13, 0),
    (9, 4): ((2, 4, 6, 8), 8, 3),
    (20, 3): ((3, 6, 9), 10, 0),
    (50, 10): ((3, 6, 9, 12, 15, 18, 21, 24, 27, 30), 31, 0),
    (5, 1): ((3,), 4, 0),
}


def _simple_instance():
    return FineTuneInstance(
        2,
        [[F(0), F(0)], [F(1), F(0)], [F(2), F(1)]],
        [0, F(1, 2), 0],
        (2,),
    )


# ---------------------------------------------------------------------------
# Instance validation and serialization
# ---------------------------------------------------------------------------


def test_instance_basic():
    inst = _simple_instance()
    assert inst.K == 3 and inst.N == 1 and inst.exact


def test_instance_validation_errors():
    with pytest.raises(ValueError):
        FineTuneInstance(1, [[0], [0]], [0, 0], ())  # duplicate points
    with pytest.raises(ValueError):
        FineTuneInstance(1, [[0], [1]], [0, 0], (3,))  # index out of range
    with pytest.raises(ValueError):
        FineTuneInstance(1, [[0], [1]], [0.1, 0], (2,))  # nonzero off tune set
    with pytest.raises(ValueError):
        FineTuneInstance(1, [[0], [1]], [0], (1,))  # target count mismatch


def test_instance_json_round_trip(tmp_path):
    inst = _simple_instance()
    path = tmp_path / "inst.json"
    inst.save(str(path))
    again = FineTuneInstance.load(str(path))
    assert again.points == inst.points
    assert again.targets == inst.targets
    assert again.tune_set == inst.tune_set
    assert again.exact  # fractions survive the round trip


def test_as_exact_lifts_floats():
    inst = synthetic_instance(K=6, d=2, N=2, seed=1)
    assert not inst.exact
    lifted = inst.as_exact()
    assert lifted.exact
    assert all(
        float(a) == b
        for ra, rb in zip(lifted.points, inst.points)
        for a, b in zip(ra, rb)
    )


# ---------------------------------------------------------------------------
# Directions
# ---------------------------------------------------------------------------


def test_direction_on_collinear_points():
    inst = gen_adversarial(8, 2)
    direction = find_direction(inst)
    assert direction.vector == [1]  # first axis works for x_i = i*u
    assert direction.sorted_projections() == sorted(direction.projections)
    assert direction.epsilon == F(1, 2)


def test_direction_one_dimensional():
    inst = FineTuneInstance(1, [[F(3)], [F(1)], [F(2)]], [F(1), 0, 0], (1,))
    d = find_direction(inst)
    assert d.projections == [F(3), F(1), F(2)]
    assert d.order == [1, 2, 0]


def test_direction_random_gaps_positive():
    inst = synthetic_instance(K=50, d=10, N=5, seed=7)
    d = find_direction(inst, seed=7)
    c = sorted(d.projections)
    assert all(b > a for a, b in zip(c, c[1:]))
    assert d.epsilon > 0
    again = find_direction(inst, seed=7)
    assert again.vector == d.vector  # deterministic


def test_direction_rejects_non_separating_vector():
    inst = FineTuneInstance(2, [[F(0), F(0)], [F(0), F(1)]], [F(1), 0], (1,))
    with pytest.raises(DirectionSearchError):
        direction_along(inst, [1, 0])  # both points project to 0


def test_direction_permutation_equivariance():
    inst = synthetic_instance(K=12, d=4, N=3, seed=3)
    vec = [1.0, -0.5, 2.0, 0.25]
    base = direction_along(inst, vec)
    perm = [5, 0, 11, 3, 7, 1, 9, 2, 10, 4, 8, 6]
    shuffled = FineTuneInstance(
        inst.d,
        [inst.points[i] for i in perm],
        [0.0] * 12,
        (),
    )
    moved = direction_along(shuffled, vec)
    assert moved.projections == [base.projections[i] for i in perm]


def test_direction_pads():
    inst = gen_adversarial(5, 1)
    d = find_direction(inst)
    c = d.sorted_projections()
    assert d.padded(0) == c[0] - d.epsilon
    assert d.padded(6) == c[-1] + d.epsilon
    assert d.padded(3) == c[2]


# ---------------------------------------------------------------------------
# Adversarial generator + zigzag oracle
# ---------------------------------------------------------------------------


def test_adversarial_frozen_layouts():
    for (K, N), (tuned, pieces, shareable) in ADVERSARIAL_CASES.items():
        inst = gen_adversarial(K, N)
        assert inst.tune_set == tuned
        # targets alternate -1, 2, -1, ... over tuned indices
        for k, t in enumerate(inst.tune_set, start=1):
            assert inst.targets[t - 1] == (-1 if k % 2 == 1 else 2)
        assert sum(1 for z in inst.targets if z != 0) == N
        pts = [(i, inst.targets[i - 1]) for i in range(1, K + 1)]
        assert zigzag_piece_count(pts) == pieces == piece_budget(K, N)
        assert zigzag_shareable_pairs(pts) == shareable


def test_adversarial_certified_when_spread():
    # with K >= 3N+2 the chain count is a certified minimum: no bend can
    # absorb two slope changes
    for K, N in [(11, 3), (17, 5), (32, 10), (61, 12)]:
        inst = gen_adversarial(K, N)
        pts = [(i, inst.targets[i - 1]) for i in range(1, K + 1)]
        assert zigzag_shareable_pairs(pts) == 0


def test_adversarial_all_feasible_layouts_validate():
    for K in range(3, 61):
        for N in range(1, K + 1):
            inst = gen_adversarial(K, N)  # raises if the oracle disagrees
            assert inst.K == K and inst.N == N
            pts = [(i, inst.targets[i - 1]) for i in range(1, K + 1)]
            assert zigzag_piece_count(pts) == piece_budget(K, N)


def test_adversarial_custom_direction():
    inst = gen_adversarial(9, 2, u=[2, -1])
    assert inst.d == 2
    assert inst.points[0] == [2, -1] and inst.points[8] == [18, -9]


def test_adversarial_range_errors():
    with pytest.raises(ValueError):
        gen_adversarial(2, 1)
    with pytest.raises(ValueError):
        gen_adversarial(5, 0)
    with pytest.raises(ValueError):
        gen_adversarial(5, 6)
    with pytest.raises(ValueError):
        gen_adversarial(5, 1, u=[0, 0])


def test_zigzag_oracle_hand_cases():
    line = [(1, 1), (2, 2), (3, 3)]
    assert zigzag_piece_count(line) == 1
    vee = [(0, 1), (1, 0), (2, 1)]
    assert zigzag_piece_count(vee) == 2
    zig = [(0, 0), (1, 1), (2, 0), (3, 1)]
    assert zigzag_piece_count(zig) == 3
    assert zigzag_shareable_pairs(zig) == 0
    # middle slope strictly between its neighbors: one bend could absorb both
    bendy = [(0, 0), (1, 1), (2, 3), (3, 6)]  # slopes 1, 2, 3
    assert zigzag_shareable_pairs(bendy) == 1
    with pytest.raises(ValueError):
        zigzag_piece_count([(0, 0), (0, 1)])


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------


def test_gen_synthetic_shapes_and_ranges():
    X, y = gen_synthetic(K=1000, d=10, seed=4)
    assert X.shape == (1000, 10) and y.shape == (1000,)
    assert np.all(y >= -1) and np.all(y <= 1)
    X2, y2 = gen_synthetic(K=1000, d=10, seed=4)
    assert np.array_equal(X, X2) and np.array_equal(y, y2)
    X3, _ = gen_synthetic(K=1000, d=10, seed=5)
    assert not np.array_equal(X, X3)


def test_synthetic_instance_contract():
    inst = synthetic_instance(K=30, d=5, N=7, seed=9)
    assert inst.K == 30 and inst.N == 7 and inst.d == 5
    tuned = set(inst.tune_set)
    for i, z in enumerate(inst.targets, start=1):
        if i in tuned:
            assert z != 0 and -1 <= z <= 1
        else:
            assert z == 0
    again = synthetic_instance(K=30, d=5, N=7, seed=9)
    assert again.points == inst.points and again.tune_set == inst.tune_set
