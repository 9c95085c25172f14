"""Two-layer chain interpolator and the point-removal builder."""

from fractions import Fraction

import numpy as np
import pytest

from ftc.builders2 import ChainSpec, build_two_layer, chain_interpolator
from ftc.instance import FineTuneInstance, gen_adversarial, synthetic_instance
from ftc.network import eval_network, restrict_to_line, verify_finetune
from ftc.pwl import piece_budget

F = Fraction


def _collinear_instance(K, tuned_targets):
    """x_i = i on the line; tuned_targets maps 1-based index -> value."""
    targets = [tuned_targets.get(i, F(0)) for i in range(1, K + 1)]
    return FineTuneInstance(
        1, [[F(i)] for i in range(1, K + 1)], targets, tuple(sorted(tuned_targets))
    )


# ---------------------------------------------------------------------------
# Chain interpolator
# ---------------------------------------------------------------------------


def test_chain_two_knots_is_relu():
    net = chain_interpolator(ChainSpec([(F(0), F(0)), (F(1), F(1))]))
    for t, want in [(-2, 0), (0, 0), (F(1, 2), F(1, 2)), (1, 1), (3, 3)]:
        assert eval_network(net, [F(t)])[0] == want


def test_chain_hat_function():
    spec = ChainSpec([(F(0), F(0)), (F(1), F(1)), (F(2), F(0))])
    net = chain_interpolator(spec)
    assert spec.m == 2
    assert eval_network(net, [F(3, 2)])[0] == F(1, 2)
    assert eval_network(net, [F(2)])[0] == 0
    # continues the final slope to the right
    assert eval_network(net, [F(3)])[0] == -1


def test_chain_left_constant():
    spec = ChainSpec([(F(2), F(5)), (F(3), F(1)), (F(7), F(2))])
    net = chain_interpolator(spec)
    assert eval_network(net, [F(-3)])[0] == 5  # w1 - 5
    assert eval_network(net, [F(2)])[0] == 5


def test_chain_hits_every_knot():
    rng = np.random.default_rng(12)
    for _ in range(20):
        n = int(rng.integers(2, 12))
        xs = sorted(set(F(int(v), 3) for v in rng.integers(-30, 31, size=n)))
        ys = [F(int(v), 5) for v in rng.integers(-20, 21, size=len(xs))]
        spec = ChainSpec(list(zip(xs, ys)))
        net = chain_interpolator(spec)
        assert net.layers[0].out_dim == len(xs) - 1
        for x, y in zip(xs, ys):
            assert eval_network(net, [x])[0] == y


def test_chain_validation():
    with pytest.raises(ValueError):
        ChainSpec([(F(0), F(0))])
    with pytest.raises(ValueError):
        ChainSpec([(F(1), F(0)), (F(1), F(2))])


# ---------------------------------------------------------------------------
# build_two_layer
# ---------------------------------------------------------------------------


def test_build_collinear_worked_example():
    # tuned {4, 7, 9, 14} on 14 collinear points: 11 surviving knots
    inst = _collinear_instance(
        14, {4: F(1, 2), 7: F(-1, 3), 9: F(3, 4), 14: F(1, 5)}
    )
    net, report = build_two_layer(inst)
    assert report.m == 10
    assert report.bound == 13
    assert report.extras["kept_positions"] == [1, 3, 4, 5, 6, 7, 8, 9, 10, 13, 14]
    assert verify_finetune(net, inst).passed
    assert verify_finetune(net, inst).tol == 0


def test_build_empty_tune_set():
    inst = _collinear_instance(6, {})
    net, report = build_two_layer(inst)
    assert report.m == 0
    assert verify_finetune(net, inst).passed


def test_build_full_memorization():
    K = 9
    inst = _collinear_instance(K, {i: F(i, 10) for i in range(1, K + 1)})
    net, report = build_two_layer(inst)
    assert report.m == K - 1
    assert verify_finetune(net, inst).passed


def test_build_segregated_tune_set_economy():
    # untuned indices form a single run -> m <= N + 1
    K, N = 20, 5
    inst = _collinear_instance(K, {i: F(i, 7) for i in range(1, N + 1)})
    net, report = build_two_layer(inst)
    assert report.m <= N + 1
    assert verify_finetune(net, inst).passed


def test_build_random_instances_exact_and_bounded():
    for seed in range(40):
        rng = np.random.default_rng(seed + 1000)
        K = int(rng.integers(2, 60))
        N = int(rng.integers(0, K + 1))
        inst = synthetic_instance(K=K, d=int(rng.integers(1, 6)), N=N, seed=seed)
        exact = inst.as_exact()
        net, report = build_two_layer(exact)
        assert report.m <= min(3 * N + 1, K - 1) or (N == 0 and report.m == 0)
        # the sharper removal-count bound also holds
        assert report.m <= report.bound_parts["removal"]
        rep = verify_finetune(net, exact)
        assert rep.passed and rep.tol == 0


def test_build_float_instances_verify():
    for seed in range(10):
        inst = synthetic_instance(K=25, d=3, N=6, seed=seed + 77)
        net, report = build_two_layer(inst)
        assert verify_finetune(net, inst).passed


def test_build_adversarial_piece_tightness():
    # built network restricted to the layout direction shows the forced
    # piece count, and the builder lands within one neuron of it
    for K, N in [(14, 4), (9, 4), (20, 3)]:
        inst = gen_adversarial(K, N)
        net, report = build_two_layer(inst)
        assert verify_finetune(net, inst).passed
        f = restrict_to_line(net, [F(1)])
        budget = piece_budget(K, N)
        assert f.piece_count() >= budget
        assert f.piece_count() <= report.m + 1
        lower = min(3 * N, K - 2)
        assert report.m - lower <= 1


def test_build_report_shape():
    inst = _collinear_instance(8, {3: F(1, 2)})
    _, report = build_two_layer(inst)
    obj = report.to_json()
    assert obj["method"] == "two_layer"
    assert obj["K"] == 8 and obj["N"] == 1
    assert obj["m"] == report.m
    assert "theorem" in obj["bound_parts"] and "removal" in obj["bound_parts"]
    assert obj["permutation"] is not None
