import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from earlyrec.errors import InvalidInputError
from earlyrec.gradcheck import gradient_check
from earlyrec.losses import (
    LossSelection,
    average_ce,
    classification_loss,
    false_positive_weights,
    fsp_total,
    future_pred_loss,
    linear_weighted_ce,
)
from earlyrec.tensor import softmax


def probs_with_true(ps, N=3, label=0):
    rows = []
    for p in ps:
        rest = (1 - p) / (N - 1)
        rows.append([p if k == label else rest for k in range(N)])
    return np.array(rows)


def test_average_ce_examples():
    assert average_ce(probs_with_true([0.5, 0.25]), 0, 2)[0] == pytest.approx(1.03972, abs=1e-5)
    assert average_ce(np.full((4, 9), 1 / 9), 3)[0] == pytest.approx(math.log(9), abs=1e-12)
    assert average_ce(probs_with_true([1.0, 1.0]), 0)[0] == pytest.approx(0.0, abs=1e-11)


def test_linear_weighted_single_step_term():
    # t = 5 of T = 10, y = (1, 0), p = (0.8, 0.2)
    P = np.tile([0.8, 0.2], (10, 1))
    full, _ = linear_weighted_ce(P, 0, 5, 10)
    fewer, _ = linear_weighted_ce(P, 0, 4, 10)
    term = 5 * full - 4 * fewer
    assert term == pytest.approx(0.33471, abs=1e-5)
    assert term == pytest.approx(-(math.log(0.8) + 0.5 * math.log(0.8)), abs=1e-12)


def test_linear_weighted_perfect_prediction_is_zero():
    P = np.tile([0.0, 1.0, 0.0], (6, 1))
    assert linear_weighted_ce(P, 1)[0] == pytest.approx(0.0, abs=1e-10)


def test_false_positive_coefficient_is_t_over_T():
    w = false_positive_weights(7, 7)
    assert w.tolist() == [t / 7 for t in range(1, 8)]
    assert w[-1] == 1.0
    assert false_positive_weights(3, 10).tolist() == [0.1, 0.2, 0.3]


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_linear_weighted_relations_to_average(seed):
    rng = np.random.default_rng(seed)
    T, N = int(rng.integers(1, 8)), int(rng.integers(2, 6))
    P = softmax(rng.normal(0, 2, size=(T, N)))
    y, Tp = int(rng.integers(N)), int(rng.integers(1, T + 1))
    avg, g_avg = average_ce(P, y, Tp)
    lw0, g_lw0 = linear_weighted_ce(P, y, Tp, T, fp_scale=0.0)
    assert lw0 == avg
    assert np.array_equal(g_lw0, g_avg)
    assert linear_weighted_ce(P, y, Tp, T)[0] >= avg


def test_gradients_are_zero_beyond_trained_range():
    P = softmax(np.random.default_rng(0).normal(size=(6, 4)))
    for fn in (lambda: average_ce(P, 1, 3), lambda: linear_weighted_ce(P, 1, 3, 6)):
        _, g = fn()
        assert np.all(g[3:] == 0) and np.any(g[:3] != 0)


@pytest.mark.parametrize("kind", ["average", "linear_weighted"])
def test_classification_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(3)
    for _ in range(20):
        T, N = int(rng.integers(1, 6)), int(rng.integers(2, 5))
        z = {"z": rng.normal(0, 2, size=(T, N))}
        y, Tp = int(rng.integers(N)), int(rng.integers(1, T + 1))
        report = gradient_check(lambda: (lambda r: (r[0], {"z": r[1]}))(
            classification_loss(kind, softmax(z["z"]), y, Tp, T)), z)
        assert report.ok(), report.per_tensor


def test_probability_validation():
    with pytest.raises(InvalidInputError):
        average_ce([[1.2, -0.2]], 0)
    with pytest.raises(InvalidInputError):
        average_ce([[0.5, 0.5]], 2)
    with pytest.raises(InvalidInputError):
        average_ce([[0.5, 0.5]], 0, 2)
    with pytest.raises(InvalidInputError):
        linear_weighted_ce([[0.5, 0.5]] * 3, 0, 3, 2)
    with pytest.raises(InvalidInputError):
        classification_loss("hinge", [[0.5, 0.5]], 0)


@pytest.mark.parametrize("x, smooth, l2", [(0.5, 0.125, 0.25), (1.0, 0.5, 1.0), (2.0, 1.5, 4.0), (-2.0, 1.5, 4.0)])
def test_future_loss_scalar_values(x, smooth, l2):
    assert future_pred_loss("smooth_l1", [x], [0.0])[0] == smooth
    assert future_pred_loss("l2", [x], [0.0])[0] == l2


def test_future_loss_is_mean_over_coordinates_and_zero_at_target():
    v, g = future_pred_loss("l2", [1.0, 3.0], [0.0, 1.0])
    assert v == pytest.approx(2.5) and g.tolist() == [1.0, 2.0]
    h = np.array([0.3, -0.7])
    for kind in ("smooth_l1", "l2"):
        assert future_pred_loss(kind, h, h)[0] == 0.0
        with pytest.raises(InvalidInputError):
            future_pred_loss(kind, [1.0, 2.0], [1.0])
    with pytest.raises(InvalidInputError):
        future_pred_loss("l1", [1.0], [0.0])


def test_smooth_l1_once_differentiable_at_kink():
    eps = 1e-7
    for side in (1.0 - eps, 1.0 + eps):
        assert future_pred_loss("smooth_l1", [side], [0.0])[1][0] == pytest.approx(1.0, abs=1e-6)
    left = future_pred_loss("smooth_l1", [1 - eps], [0.0])[0]
    right = future_pred_loss("smooth_l1", [1 + eps], [0.0])[0]
    assert abs(left - right) < 1e-6


@pytest.mark.parametrize("kind", ["smooth_l1", "l2"])
def test_future_loss_gradients(kind):
    rng = np.random.default_rng(9)
    for _ in range(20):
        h = {"h": rng.normal(0, 1.5, size=(3, 4))}
        tgt = rng.normal(0, 1.5, size=(3, 4))
        h["h"][np.abs(np.abs(h["h"] - tgt) - 1) < 1e-3] += 0.01
        report = gradient_check(lambda: (lambda v, g: (float(v.sum()), {"h": g}))(
            *future_pred_loss(kind, h["h"], tgt)), h)
        assert report.ok(), report.per_tensor


def test_fsp_total_arithmetic():
    future = np.array([[0.0, 0.0]])
    target = np.array([[0.3, 0.3]])  # l2 per step: 0.09
    sel = LossSelection("average", "l2", 10.0)
    loss, _, _, mean_future = fsp_total(sel, 0.2, np.zeros((1, 2)), future, target, 1)
    assert mean_future == pytest.approx(0.09)
    assert loss == pytest.approx(0.2 + 10 * 0.09)
    # worked example: lambda 10, classification 0.2, mean future 0.03
    target = np.array([[np.sqrt(0.03), np.sqrt(0.03)]])
    assert fsp_total(sel, 0.2, None, future, target, 1)[0] == pytest.approx(0.5)


def test_fsp_total_lambda_zero_is_bitwise_classification_loss():
    rng = np.random.default_rng(0)
    P = softmax(rng.normal(size=(5, 3)))
    cls, g = linear_weighted_ce(P, 2, 4, 5)
    loss, dlog, dfut, _ = fsp_total(LossSelection("linear_weighted", "smooth_l1", 0.0), cls, g,
                                    rng.normal(size=(5, 2)), rng.normal(size=(4, 2)), 4)
    assert loss == cls
    assert dlog is g
    assert not dfut.any()


def test_fsp_total_validates_targets():
    sel = LossSelection("average", "l2", 1.0)
    with pytest.raises(InvalidInputError):
        fsp_total(sel, 0.0, None, np.zeros((4, 2)), np.zeros((2, 2)), 3)
    with pytest.raises(InvalidInputError):
        fsp_total(sel, 0.0, None, np.zeros((4, 2)), np.zeros((4, 3)), 3)


def test_fsp_future_gradient_only_within_range():
    rng = np.random.default_rng(1)
    sel = LossSelection("average", "smooth_l1", 10.0)
    _, _, dfut, _ = fsp_total(sel, 0.0, None, rng.normal(size=(6, 3)), rng.normal(size=(6, 3)), 4)
    assert np.all(dfut[4:] == 0) and np.all(dfut[:4] != 0)


def test_loss_selection_validation():
    for bad in ({"classification": "x"}, {"future": "l1"}, {"lam": -1.0}):
        with pytest.raises(InvalidInputError):
            LossSelection(**bad)
