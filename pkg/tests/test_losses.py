import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lafs.losses import (
    LossConfig,
    angle_grad,
    angle_loss,
    conf_grad,
    conf_loss,
    dice_grad,
    dice_loss,
    grad_check,
    gradcheck_suite,
    iou_grad,
    iou_loss,
    iou_loss_per_pixel,
    map_losses,
    smooth_l1,
    total_loss,
)


def test_dice_perfect():
    ones = np.ones(4)
    assert dice_loss(ones, ones) == pytest.approx(1 - 8 / (8 + 1e-5), abs=1e-12)
    assert dice_loss(ones, ones) == pytest.approx(1.25e-6, rel=1e-4)


def test_dice_disjoint():
    assert dice_loss([1, 0], [0, 1]) == pytest.approx(1.0)


def test_dice_half():
    assert dice_loss([1, 0], [1, 1]) == pytest.approx(1 - 2 / (3 + 1e-5), abs=1e-12)
    assert dice_loss([1, 0], [1, 1]) == pytest.approx(1 / 3, abs=1e-5)


def test_iou_loss_values():
    assert iou_loss(np.full((1, 4), 3.0), np.full((1, 4), 3.0)) == 0.0
    assert iou_loss(np.ones((1, 4)), np.full((1, 4), 2.0)) == pytest.approx(-math.log(0.25), abs=1e-6)
    assert iou_loss(np.full((1, 4), 2.0), np.ones((1, 4))) == pytest.approx(1.3863, abs=1e-4)


def test_iou_loss_disjoint_is_clamped():
    loss = iou_loss_per_pixel(np.array([0.0, 0.0, 1.0, 1.0]), np.ones(4))
    assert loss[0] == pytest.approx(-math.log(1e-8))


@pytest.mark.parametrize("delta, want", [(0.0, 0.0), (math.pi / 3, 0.5), (math.pi / 2, 1.0)])
def test_angle_loss_values(delta, want):
    assert angle_loss(0.2 + delta, 0.2) == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("x, want", [(0.0, 0.0), (0.5, 0.125), (2.0, 1.5), (-2.0, 1.5)])
def test_smooth_l1_values(x, want):
    assert float(smooth_l1(x)) == pytest.approx(want)


def test_total_loss_weighting():
    parts = {"cls": 0.1, "iou": 0.2, "angle": 0.0, "conf": 0.03}
    assert total_loss(parts) == pytest.approx(0.6, abs=1e-15)
    assert total_loss(dict.fromkeys(parts, 0.0)) == 0.0


@given(*[st.floats(0, 10)] * 4)
def test_total_loss_is_linear(cls, iou, angle, conf):
    cfg = LossConfig(gamma=2.0, lambda_=3.0, mu=5.0)
    got = total_loss({"cls": cls, "iou": iou, "angle": angle, "conf": conf}, cfg)
    assert got == pytest.approx(cls + 2.0 * (iou + 5.0 * angle) + 3.0 * conf)


def test_conf_loss_mask():
    pred = np.zeros((2, 2, 5))
    gt = np.zeros((2, 2, 5))
    pred[1, 1] = 0.5
    mask = np.array([[1, 0], [0, 1]])
    # 10 masked entries, five of them off by 0.5
    assert conf_loss(pred, gt, mask=mask) == pytest.approx(5 * 0.125 / 10)
    assert conf_loss(pred, gt, mask=np.zeros((2, 2))) == 0.0


dists = st.lists(st.floats(0.1, 50), min_size=4, max_size=4)


@given(dists, dists)
def test_iou_loss_nonnegative_and_zero_iff_equal(p, g):
    loss = iou_loss(np.array([p]), np.array([g]))
    assert loss >= 0
    if p == g:
        assert loss == 0


@given(dists, dists, st.floats(0.1, 10))
def test_iou_loss_scale_free(p, g, c):
    a = iou_loss(np.array([p]), np.array([g]))
    b = iou_loss(np.array([p]) * c, np.array([g]) * c)
    assert a == pytest.approx(b, abs=1e-9)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8).flatmap(
    lambda p: st.tuples(st.just(p), st.lists(st.sampled_from([0.0, 1.0]), min_size=len(p), max_size=len(p)))
))
def test_dice_range(pg):
    p, g = pg
    loss = dice_loss(p, g)
    assert 0 <= loss <= 1


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_angle_loss_bounds(a, b):
    loss = angle_loss(a, b)
    assert 0 <= loss <= 2
    if a == b:
        assert loss == 0


def test_map_losses_perfect_prediction():
    score = np.zeros((4, 4))
    score[1:3, 1:3] = 1
    geo = np.zeros((4, 4, 5))
    geo[1:3, 1:3, :4] = 2
    conf = np.ones((4, 4, 5))
    parts = map_losses(score, score, geo, geo, conf, conf)
    assert parts["iou"] == 0 and parts["angle"] == 0 and parts["conf"] == 0
    assert parts["total"] == pytest.approx(parts["cls"])


# -- gradients ----------------------------------------------------------------

def test_dice_grad_interior_point():
    rng = np.random.default_rng(0)
    gt = (rng.random(10) > 0.5).astype(float)
    pred = rng.uniform(0.1, 0.9, 10)
    assert grad_check(lambda p: dice_loss(p, gt), lambda p: dice_grad(p, gt), pred, 1e-3) < 1e-4


def test_iou_grad_away_from_kinks():
    gt = np.array([[2.0, 3.0, 4.0, 5.0]])
    pred = np.array([[2.5, 2.0, 6.0, 4.2]])
    assert grad_check(lambda p: iou_loss(p, gt), lambda p: iou_grad(p, gt), pred) < 1e-4


def test_angle_grad_anywhere():
    rng = np.random.default_rng(1)
    gt, pred = rng.uniform(-3, 3, 6), rng.uniform(-3, 3, 6)
    assert grad_check(lambda p: angle_loss(p, gt), lambda p: angle_grad(p, gt), pred) < 1e-6


def test_conf_grad_with_mask():
    rng = np.random.default_rng(2)
    gt = rng.random((3, 3, 5))
    pred = gt + rng.uniform(-0.8, 0.8, gt.shape)
    mask = rng.random((3, 3)) > 0.4
    err = grad_check(lambda p: conf_loss(p, gt, mask=mask), lambda p: conf_grad(p, gt, mask=mask), pred)
    assert err < 1e-4


def test_gradcheck_suite():
    worst = gradcheck_suite(n_points=20, seed=7)
    assert set(worst) == {"dice", "iou", "angle", "conf"}
    assert max(worst.values()) < 1e-4


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(gamma=0)
    with pytest.raises(ValueError):
        LossConfig(reduction="median")
