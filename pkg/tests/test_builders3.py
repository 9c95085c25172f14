"""Three-layer builders: window schemes, clip systems, and the four builds."""

from fractions import Fraction

import numpy as np
import pytest

from ftc.builders3 import (
    ClipRankError,
    LambdaSearchError,
    SignPatternError,
    TargetCollisionError,
    TargetRangeError,
    balanced_scheme,
    build_bump,
    build_compact,
    build_grid,
    build_sparse,
    compact_scheme,
    solve_clip_system,
    three_layer_auto,
)
from ftc.instance import FineTuneInstance, find_direction, synthetic_instance
from ftc.linsolve import solve_exact
from ftc.network import eval_network, verify_finetune
from ftc.numerics import is_exact

F = Fraction

BUILDERS = {
    "grid": build_grid,
    "bump": build_bump,
    "sparse": build_sparse,
    "compact": build_compact,
}


def bound_for(name, K, N):
    if name == "grid":
        return 4 * _ceil_sqrt(K)
    if name == "bump":
        return 2 * _ceil_sqrt(K) + 3 * N
    if name == "sparse":
        return 6 * _ceil_sqrt(3 * N + 2)
    return 4 * N + 4


def _ceil_sqrt(v):
    import math

    return v if v <= 1 else math.isqrt(v - 1) + 1


def collinear(K, tuned):
    targets = [tuned.get(i, F(0)) for i in range(1, K + 1)]
    return FineTuneInstance(
        1, [[F(i)] for i in range(1, K + 1)], targets, tuple(sorted(tuned))
    )


# ---------------------------------------------------------------------------
# Clip system
# ---------------------------------------------------------------------------


def test_clip_trivial_exact_solve():
    cs = solve_clip_system([[F(1, 2)]], [F(1, 4)], exact=True)
    assert cs.lam == 0
    w = cs.weights
    assert F(1, 2) * w[0] + w[1] == F(1, 4)


def test_clip_lambda_escalation_one_sided():
    cs = solve_clip_system(
        [[F(1), F(0)], [F(0), F(1)]],
        [F(0), F(0)],
        off_rows=[[F(1), F(1)]],
        one_sided=True,
        exact=True,
    )
    assert cs.mu == [0, 0, 0]
    assert cs.nu == [1, 1, -1]  # normalized: smallest head coordinate is 1
    assert cs.lam == 2  # first power of two pushing the off row past 3/2
    w = cs.weights
    assert w[0] + w[1] + w[2] >= F(3, 2)


def test_clip_rank_gate():
    # square system: no free column, no null direction
    with pytest.raises(ClipRankError):
        solve_clip_system([[F(1)], [F(2)]], [F(0), F(0)], exact=True)


def test_clip_sign_gate():
    with pytest.raises(SignPatternError):
        solve_clip_system([[F(1), F(0)], [F(0), F(-1)]], [F(0), F(0)], exact=True)


def test_clip_lambda_budget_exhaustion():
    # off row proportional to a designated row: lambda cannot separate them
    with pytest.raises(LambdaSearchError):
        solve_clip_system(
            [[F(1), F(0)], [F(0), F(1)]],
            [F(0), F(0)],
            off_rows=[[F(1), F(0)]],
            one_sided=True,
            exact=True,
        )


def test_clip_difference_rows_equivalent():
    # window-structure rows: foreign coordinates saturate at -o_j / +o_j
    rows = [
        [F(0), F(1), F(-1)],
        [F(1), F(1, 2), F(-1)],
        [F(1), F(-1), F(-1, 3)],
    ]
    targets = [F(1, 4), F(0), F(-1, 2)]
    plain = solve_clip_system(rows, targets, exact=True)
    diffed = solve_clip_system(rows, targets, exact=True, difference_rows=True)
    assert plain.nu == diffed.nu == [1, 2, F(9, 2), F(5, 2)]
    for cs in (plain, diffed):
        for row, t in zip(rows, targets):
            val = sum(r * w for r, w in zip(row, cs.weights)) + cs.weights[-1]
            assert val == t


def test_clip_positive_weights_constraint():
    cs = solve_clip_system(
        [[F(0), F(1), F(-1)], [F(1), F(1, 2), F(-1)], [F(1), F(-1), F(-1, 3)]],
        [F(1, 4), F(1, 2), F(1, 3)],
        positive_weights=True,
        exact=True,
    )
    assert all(v > 0 for v in cs.weights[:3])


# ---------------------------------------------------------------------------
# Group schemes
# ---------------------------------------------------------------------------


def test_balanced_scheme_pads_with_virtuals():
    c = [F(i) for i in range(1, 8)]  # 7 real samples
    scheme = balanced_scheme(c, F(1, 2), 3, 3)
    assert scheme.G == 3
    assert len(scheme.c_work) == 9
    assert scheme.real_position(7) == 7
    assert scheme.real_position(8) is None
    assert scheme.orientations == [1, -1, 1]
    # windows cover exactly their own group
    beta = scheme.beta_matrix()
    for pos in range(1, 10):
        g = scheme.group_of(pos)
        for j in range(3):
            if j == g:
                assert -1 <= beta[pos - 1][j] <= 1
            else:
                assert abs(beta[pos - 1][j]) == 1


def test_window_ranks_and_transversals():
    c = [F(i) for i in range(1, 10)]
    scheme = balanced_scheme(c, F(1, 2), 3, 3)
    ranks = scheme.window_ranks()
    # orientation -1 reverses the within-group order
    assert [ranks[p] for p in (1, 2, 3)] == [1, 2, 3]
    assert [ranks[p] for p in (4, 5, 6)] == [3, 2, 1]
    assert [ranks[p] for p in (7, 8, 9)] == [1, 2, 3]
    assert scheme.transversal(1) == [1, 6, 7]
    assert scheme.transversal(3) == [3, 4, 9]


def test_compact_scheme_layout():
    c = [F(i) for i in range(1, 17)]
    scheme = compact_scheme(c, F(1, 2), [4, 7])
    assert scheme.G == 5
    assert [scheme.members(g) for g in range(5)] == [
        [1, 2, 3], [4], [5, 6], [7], list(range(8, 17))
    ]
    assert scheme.orientations == [1, -1, 1, -1, 1]


def test_compact_scheme_virtual_fillers():
    c = [F(i) for i in range(1, 6)]
    # tuned at both ends and adjacent: fillers materialize as virtual slots
    scheme = compact_scheme(c, F(1, 2), [1, 2])
    assert scheme.G == 5
    virtuals = [p for p in range(1, len(scheme.c_work) + 1) if scheme.real_position(p) is None]
    assert len(virtuals) == 2
    assert scheme.orientations == [1, -1, 1, -1, 1]


# ---------------------------------------------------------------------------
# Worked example: K=16 with tuned singletons {4, 7}
# ---------------------------------------------------------------------------


def test_singleton_window_worked_example():
    inst = collinear(16, {4: F(1, 2), 7: F(1, 4)})
    net, report = build_compact(inst)
    assert report.extras["groups"] == [
        [1, 2, 3], [4], [5, 6], [7], list(range(8, 17))
    ]
    assert report.extras["representatives"] == [1, 4, 5, 7, 8]
    assert report.m == 12 and report.bound == 12
    rep = verify_finetune(net, inst)
    assert rep.passed and rep.tol == 0

    # re-derive the clip system directly: full rank, positive null head
    direction = find_direction(inst)
    scheme = compact_scheme(direction.sorted_projections(), direction.epsilon, [4, 7])
    beta = scheme.beta_matrix()
    S = [lo for (lo, _) in scheme.groups]
    M = [beta[p - 1] + [F(1)] for p in S]
    res = solve_exact(M)
    assert res.rank == 5
    assert len(res.nullspace) == 1
    nu = res.nullspace[0]
    if nu[0] < 0:
        nu = [-v for v in nu]
    assert all(v > 0 for v in nu[:5])

    # one-sided clipping: every off-representative sample's layer-2
    # preactivation clears the cutoff threshold 1 + delta
    delta = F(report.extras["delta"]).limit_denominator()
    for i in range(1, 17):
        pre = eval_network(net, [F(i)])[1].preactivations[1][0]
        if i in {4, 7}:
            assert pre == inst.targets[i - 1]
        elif i in {1, 5, 8}:
            assert pre == 0  # filler representatives pinned to zero
        else:
            assert pre >= 1 + delta


def test_singleton_window_trailing_virtual():
    # tuned sample at the right edge: the trailing filler group is virtual
    inst = collinear(9, {9: F(2, 5)})
    net, report = build_compact(inst)
    assert report.extras["virtual_slots"] == 1
    assert verify_finetune(net, inst).passed
    assert report.m <= 4 * 1 + 4


def test_compact_rejects_colliding_targets():
    with pytest.raises(TargetCollisionError):
        build_compact(collinear(8, {2: F(1, 2), 5: F(1, 2)}))


def test_compact_skips_zero_targets():
    inst = collinear(10, {3: F(1, 2), 7: F(0)})
    net, report = build_compact(inst)
    assert report.bound_parts["effective_N"] == 1
    assert verify_finetune(net, inst).passed


def test_target_range_gate():
    bad = collinear(6, {2: F(3, 2)})
    for builder in BUILDERS.values():
        with pytest.raises(TargetRangeError):
            builder(bad)


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


def test_grid_sixteen_point_layout():
    inst = collinear(16, {3: F(1, 2), 11: F(-2, 5)})
    net, report = build_grid(inst)
    assert report.extras["groups"] == 4 and report.extras["rows"] == 4
    assert report.m == 16 and report.bound == 16
    assert verify_finetune(net, inst).passed


def test_grid_full_memorization():
    K = 9
    inst = collinear(K, {i: F(2 * i - K, 2 * K) for i in range(1, K + 1)})
    net, report = build_grid(inst)
    assert report.m <= 4 * 3
    rep = verify_finetune(net, inst)
    assert rep.passed and rep.tol == 0


def test_grid_small_instance():
    inst = collinear(4, {1: F(1, 2), 2: F(-1, 2), 3: F(1, 4), 4: F(3, 4)})
    net, report = build_grid(inst)
    assert report.m == 8
    for i in range(1, 5):
        assert eval_network(net, [F(i)])[0] == inst.targets[i - 1]


# ---------------------------------------------------------------------------
# Bump
# ---------------------------------------------------------------------------


def test_bump_single_tuned_sample():
    inst = collinear(16, {7: F(3, 5)})
    net, report = build_bump(inst)
    assert report.extras["bumps"] == 1
    assert report.m == 11 and report.bound == 11  # 2*4 windows + 3*1
    assert verify_finetune(net, inst).passed


def test_bump_no_tuned_samples():
    inst = collinear(9, {})
    net, report = build_bump(inst)
    assert report.extras["bumps"] == 0
    assert verify_finetune(net, inst).passed


def test_bump_collision_resolves_per_sample():
    # positions 1 and 7 share within-group rank 1 and the same target value
    inst = collinear(9, {1: F(1, 2), 7: F(1, 2)})
    net, report = build_bump(inst)
    assert report.extras["collision_rows"] == 1
    assert report.extras["row_solves"] == 2
    assert report.extras["bumps"] == 2
    assert report.m <= report.bound == 12
    assert verify_finetune(net, inst).passed


def test_bump_boundary_targets():
    inst = collinear(12, {4: F(1), 9: F(-1)})
    net, report = build_bump(inst)
    assert verify_finetune(net, inst).passed


# ---------------------------------------------------------------------------
# Sparse
# ---------------------------------------------------------------------------


def test_sparse_worked_example():
    inst = collinear(16, {2: F(1, 3), 4: F(-1, 2), 9: F(2, 3)})
    net, report = build_sparse(inst)
    assert report.extras["reduced_size"] == 9
    assert report.extras["groups"] == 3
    assert report.extras["removed"] == [6, 7, 11, 12, 13, 14, 15]
    assert report.m == 18 and report.bound == 24
    assert verify_finetune(net, inst).passed


def test_sparse_single_untuned_block():
    # all untuned indices in one run: reduced size N + 2
    K, N = 30, 4
    inst = collinear(K, {i: F(i, 10) for i in range(1, N + 1)})
    net, report = build_sparse(inst)
    assert report.extras["reduced_size"] == N + 2
    assert verify_finetune(net, inst).passed


def test_sparse_zero_tuned_shortcut():
    inst = collinear(7, {})
    net, report = build_sparse(inst)
    assert report.m == 0
    assert verify_finetune(net, inst).passed


# ---------------------------------------------------------------------------
# Auto branch selection
# ---------------------------------------------------------------------------


def test_auto_branches():
    cases = [
        (16, 16, "auto:grid"),
        (9, 1, "auto:bump"),
        (100, 1, "auto:sparse"),
    ]
    for K, N, want in cases:
        tuned = {i: F(2 * i - 1, 2 * K) for i in range(1, N + 1)}
        inst = collinear(K, tuned)
        net, report = three_layer_auto(inst)
        assert report.method == want
        assert verify_finetune(net, inst).passed
        assert {"grid", "bump", "sparse"} <= set(report.bound_parts)


def test_auto_zero_tuned():
    net, report = three_layer_auto(collinear(5, {}))
    assert report.method == "auto:zero" and report.m == 0


# ---------------------------------------------------------------------------
# Randomized sweeps
# ---------------------------------------------------------------------------


def test_float_instances_build_exact_networks():
    # float data lifts to exact arithmetic; the built network carries exact
    # weights and the verification errors are exactly zero
    inst = synthetic_instance(K=24, d=3, N=5, seed=11)
    for name, builder in BUILDERS.items():
        net, report = builder(inst)
        assert all(
            is_exact(v) for l in net.layers for row in l.weights for v in row
        ), name
        rep = verify_finetune(net, inst)
        assert rep.passed
        assert rep.max_err_on_T == 0 and rep.max_err_off_T == 0


def test_random_sweep_all_builders():
    rng = np.random.default_rng(900)
    for trial in range(15):
        K = int(rng.integers(2, 100))
        N = int(rng.integers(1, K + 1))
        d = int(rng.integers(1, 7))
        inst = synthetic_instance(K=K, d=d, N=N, seed=5000 + trial)
        for name, builder in BUILDERS.items():
            net, report = builder(inst)
            assert report.m <= bound_for(name, K, N), (name, K, N)
            assert report.m == net.declared_neuron_count


def test_exact_instances_certify_at_zero_tolerance():
    rng = np.random.default_rng(901)
    for trial in range(8):
        K = int(rng.integers(3, 60))
        N = int(rng.integers(1, K + 1))
        pool = list(range(1, K + 1))
        rng.shuffle(pool)
        tuned = {}
        used = set()
        for t in sorted(pool[:N]):
            while True:
                z = F(int(rng.integers(-4095, 4096)), 4096)
                if z != 0 and z not in used:
                    used.add(z)
                    break
            tuned[t] = z
        inst = collinear(K, tuned)
        for name, builder in BUILDERS.items():
            net, _ = builder(inst)
            rep = verify_finetune(net, inst)
            assert rep.passed and rep.tol == 0, (name, K, N)
