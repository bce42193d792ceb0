import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from litetrack.boxes import BBox
from litetrack.exceptions import InputError
from litetrack.head import ScoreMaps
from litetrack.objective import (LossConfig, focal_loss, gaussian_target, giou, gt_cell, loss_grad,
                                 total_loss)
from litetrack.verify import grad_rel_error, numeric_grad, random_maps


def test_gaussian_peak_symmetry_and_diagonal():
    y = gaussian_target((5, 6), 12, 1.0)
    assert y[5, 6] == 1.0
    assert y[7, 6] == y[3, 6]
    assert y[6, 7] == pytest.approx(math.exp(-1.0), abs=1e-12)
    assert (y == 1.0).sum() == 1


def test_focal_vanishes_for_near_perfect_prediction():
    target = np.zeros((8, 8))
    target[3, 4] = 1.0
    losses = []
    for eps in (1e-2, 1e-3, 1e-4):
        pred = np.full((8, 8), eps)
        pred[3, 4] = 1 - eps
        losses.append(focal_loss(pred, target))
    assert losses[0] > losses[1] > losses[2] and losses[2] < 1e-6


def test_focal_closed_form():
    target = np.zeros((8, 8))
    target[2, 2] = 1.0
    pred = np.full((8, 8), 1e-7)
    pred[2, 2] = 0.5
    # (1 - 0.5)^2 * -ln(0.5); negatives contribute ~1e-14 * 1e-7
    assert focal_loss(pred, target) == pytest.approx(0.25 * math.log(2.0), abs=1e-9)


def test_focal_positive_term_ignores_sigma():
    pred = np.full((8, 8), 1e-7)
    pred[4, 4] = 0.3
    pos_only = lambda t: focal_loss(np.where(t == 1.0, pred, 1e-7), t)  # noqa: E731
    assert pos_only(gaussian_target((4, 4), 8, 1.0)) == pytest.approx(pos_only(gaussian_target((4, 4), 8, 2.0)), abs=1e-12)


def test_giou_cases():
    assert giou(BBox(1, 1, 2, 2), BBox(1, 1, 2, 2)) == 1.0
    assert giou(BBox.from_xyxy(0, 0, 2, 2), BBox.from_xyxy(1, 1, 3, 3)) == pytest.approx(-5 / 63, abs=1e-12)
    far = giou(BBox.from_xyxy(0, 0, 1, 1), BBox.from_xyxy(99, 99, 100, 100))
    assert far == pytest.approx(-0.9998, abs=1e-12)


def test_giou_degenerate_box():
    with pytest.raises(InputError):
        giou(BBox(0, 0, 0, 1), BBox(0, 0, 1, 1))


box_st = st.builds(BBox, st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 4), st.floats(0.01, 4))


@settings(max_examples=200, deadline=None)
@given(box_st, box_st)
def test_giou_symmetric_and_bounded(a, b):
    g = giou(a, b)
    assert -1.0 <= g <= 1.0
    assert g == pytest.approx(giou(b, a), abs=1e-12)
    if max(abs(u - v) for u, v in zip(a.to_xyxy(), b.to_xyxy())) > 1e-6:
        assert g < 1.0


def _perfect_maps(gt, s=8, eps=1e-6):
    row, col = gt_cell(gt, s)
    center = np.full((s, s), eps)
    center[row, col] = 1 - eps
    offset = np.zeros((2, s, s))
    size = np.full((2, s, s), 0.5)
    offset[0, row, col] = gt.cx * s - col
    offset[1, row, col] = gt.cy * s - row
    size[:, row, col] = (gt.w, gt.h)
    return ScoreMaps(center, offset, size)


def test_total_loss_perfect_prediction():
    gt = BBox(0.43, 0.61, 0.2, 0.3)
    br = total_loss(_perfect_maps(gt), gt)
    assert br.giou == pytest.approx(0.0, abs=1e-12) and br.l1 == pytest.approx(0.0, abs=1e-12)
    assert br.total < 1e-5


def test_total_loss_composition(rng):
    maps, gt = random_maps(rng, 8)
    br = total_loss(maps, gt)
    assert br.total == br.focal + 2.0 * br.giou + 5.0 * br.l1
    assert 0.1 + 2 * 0.2 + 5 * 0.02 == pytest.approx(0.6, abs=1e-12)
    no_l1 = total_loss(maps, gt, LossConfig(lambda_l1=0.0))
    assert no_l1.total == br.focal + 2.0 * br.giou


def test_loss_grad_far_center_vanishes():
    gt = BBox(0.1, 0.1, 0.2, 0.2)
    maps = _perfect_maps(gt, eps=1e-5)
    g = loss_grad(maps, gt)
    assert abs(g.center[7, 7]) < 1e-8


def test_loss_grad_zero_off_cell(rng):
    maps, gt = random_maps(rng, 8)
    g = loss_grad(maps, gt)
    row, col = gt_cell(gt, 8)
    mask = np.ones((8, 8), bool)
    mask[row, col] = False
    assert not g.offset[:, mask].any() and not g.size[:, mask].any()


@pytest.mark.parametrize("seed", range(5))
def test_loss_grad_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    maps, gt = random_maps(rng, 8)
    cfg = LossConfig()
    assert grad_rel_error(loss_grad(maps, gt, cfg), numeric_grad(maps, gt, cfg)) <= 1e-4


def test_loss_grad_converges_quadratically_over_wide_range():
    # near-saturated probabilities need a finer step; the error must shrink ~100x per 10x step
    rng = np.random.default_rng(99)
    maps, gt = random_maps(rng, 8, center_range=(0.01, 0.99), margin=1e-2)
    analytic = loss_grad(maps, gt)
    errs = [grad_rel_error(analytic, numeric_grad(maps, gt, LossConfig(), step=h)) for h in (1e-3, 1e-4)]
    assert errs[1] <= 1e-4
    assert errs[1] < errs[0] / 30


def test_total_loss_continuous_within_cell(rng):
    maps, _ = random_maps(rng, 8)
    gt = BBox(0.44, 0.56, 0.25, 0.3)
    base = total_loss(maps, gt).total
    near = total_loss(maps, BBox(0.44 + 1e-6, 0.56 - 1e-6, 0.25, 0.3)).total
    assert abs(base - near) < 1e-4
