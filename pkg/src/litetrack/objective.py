"""Training objective: weighted focal loss on the center map plus GIoU and L1 box terms.

Gradients are written out by hand so they can be checked against finite
differences; nothing here backpropagates into the encoder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boxes import BBox
from .exceptions import InputError
from .head import ScoreMaps

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    lambda_giou: float = 2.0
    lambda_l1: float = 5.0
    focal_alpha: float = 2.0
    focal_beta: float = 4.0
    gaussian_sigma: float | None = None  # None -> max(1, S / 16) cells

    def __post_init__(self):
        for name in ("lambda_giou", "lambda_l1", "focal_alpha", "focal_beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def sigma_for(self, s: int) -> float:
        return self.gaussian_sigma if self.gaussian_sigma is not None else max(1.0, s / 16.0)


@dataclass(frozen=True)
class LossBreakdown:
    focal: float
    giou: float
    l1: float
    total: float


def gaussian_target(cell: tuple[int, int], s: int, sigma: float) -> np.ndarray:
    """Gaussian bump on an ``s x s`` grid peaking at exactly 1 on ``cell``."""
    row, col = cell
    if not (0 <= row < s and 0 <= col < s):
        raise InputError(f"cell {cell} outside a {s}x{s} grid")
    r = np.arange(s, dtype=np.float64)[:, None]
    c = np.arange(s, dtype=np.float64)[None, :]
    return np.exp(-((r - row) ** 2 + (c - col) ** 2) / (2.0 * sigma ** 2))


def _focal_terms(pred, target, alpha, beta):
    p = np.clip(np.asarray(pred, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(target, dtype=np.float64)
    pos = y == 1.0
    num_pos = max(int(pos.sum()), 1)
    pos_loss = -((1.0 - p) ** alpha) * np.log(p)
    neg_loss = -((1.0 - y) ** beta) * (p ** alpha) * np.log(1.0 - p)
    return p, pos, num_pos, pos_loss, neg_loss


def focal_loss(pred: np.ndarray, target: np.ndarray, alpha: float = 2.0, beta: float = 4.0) -> float:
    """Penalty-reduced focal loss, normalized by the number of ``y == 1`` cells.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]`` before the logs.
    """
    _, pos, num_pos, pos_loss, neg_loss = _focal_terms(pred, target, alpha, beta)
    return float(np.where(pos, pos_loss, neg_loss).sum() / num_pos)


def focal_grad(pred: np.ndarray, target: np.ndarray, alpha: float = 2.0, beta: float = 4.0) -> np.ndarray:
    raw = np.asarray(pred, dtype=np.float64)
    p, pos, num_pos, _, _ = _focal_terms(pred, target, alpha, beta)
    y = np.asarray(target, dtype=np.float64)
    d_pos = alpha * (1.0 - p) ** (alpha - 1.0) * np.log(p) - (1.0 - p) ** alpha / p
    d_neg = -((1.0 - y) ** beta) * (alpha * p ** (alpha - 1.0) * np.log(1.0 - p) - p ** alpha / (1.0 - p))
    grad = np.where(pos, d_pos, d_neg) / num_pos
    inside = (raw > PROB_CLAMP) & (raw < 1.0 - PROB_CLAMP)
    return np.where(inside, grad, 0.0)


def _giou_xyxy(a, b):
    """GIoU of two xyxy boxes and its gradient with respect to ``a``."""
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    aw, ah = ax2 - ax1, ay2 - ay1
    bw, bh = bx2 - bx1, by2 - by1
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise InputError(f"giou needs positive-area boxes, got {a} and {b}")
    iw_raw = min(ax2, bx2) - max(ax1, bx1)
    ih_raw = min(ay2, by2) - max(ay1, by1)
    iw, ih = max(iw_raw, 0.0), max(ih_raw, 0.0)
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    cw = max(ax2, bx2) - min(ax1, bx1)
    ch = max(ay2, by2) - min(ay1, by1)
    hull = cw * ch
    value = inter / union - (hull - union) / hull

    # partials of inter, pred area and hull w.r.t. (x1, y1, x2, y2) of a
    d_iw = np.array([-float(ax1 > bx1), 0.0, float(ax2 < bx2), 0.0]) if iw_raw > 0 else np.zeros(4)
    d_ih = np.array([0.0, -float(ay1 > by1), 0.0, float(ay2 < by2)]) if ih_raw > 0 else np.zeros(4)
    d_inter = d_iw * ih + d_ih * iw
    d_area = np.array([-ah, -aw, ah, aw])
    d_union = d_area - d_inter
    d_cw = np.array([-float(ax1 < bx1), 0.0, float(ax2 > bx2), 0.0])
    d_ch = np.array([0.0, -float(ay1 < by1), 0.0, float(ay2 > by2)])
    d_hull = d_cw * ch + d_ch * cw
    grad = (d_inter * union - inter * d_union) / union ** 2 + (d_union * hull - union * d_hull) / hull ** 2
    return value, grad


def giou(a: BBox, b: BBox) -> float:
    """Generalized IoU in ``[-1, 1]``; raises on zero-area boxes."""
    return float(_giou_xyxy(a.to_xyxy(), b.to_xyxy())[0])


def gt_cell(box: BBox, s: int) -> tuple[int, int]:
    """Grid cell containing the box center (clamped onto the grid)."""
    row = min(max(int(math.floor(box.cy * s)), 0), s - 1)
    col = min(max(int(math.floor(box.cx * s)), 0), s - 1)
    return row, col


def box_at(maps: ScoreMaps, cell: tuple[int, int]) -> BBox:
    s = maps.grid
    row, col = cell
    return BBox((col + float(maps.offset[0, row, col])) / s,
                (row + float(maps.offset[1, row, col])) / s,
                float(maps.size[0, row, col]), float(maps.size[1, row, col]))


def _check_gt(gt_box: BBox) -> None:
    if not (gt_box.w > 0 and gt_box.h > 0):
        raise InputError(f"ground-truth box must have positive size, got {gt_box}")


def _box_terms(maps, gt_box):
    cell = gt_cell(gt_box, maps.grid)
    pred = np.array(box_at(maps, cell).to_xyxy())
    gt = np.array(gt_box.to_xyxy())
    g, g_grad = _giou_xyxy(pred, gt)
    l1 = float(np.abs(pred - gt).mean())
    l1_grad = np.sign(pred - gt) / 4.0
    return cell, 1.0 - g, -g_grad, l1, l1_grad


def total_loss(maps: ScoreMaps, gt_box: BBox, config: LossConfig = LossConfig()) -> LossBreakdown:
    """Focal + lambda_giou * (1 - GIoU) + lambda_l1 * L1.

    The box terms use the prediction read off the ground-truth center cell.
    """
    _check_gt(gt_box)
    s = maps.grid
    cell, giou_loss, _, l1, _ = _box_terms(maps, gt_box)
    target = gaussian_target(cell, s, config.sigma_for(s))
    focal = focal_loss(maps.center, target, config.focal_alpha, config.focal_beta)
    total = focal + config.lambda_giou * giou_loss + config.lambda_l1 * l1
    return LossBreakdown(focal=focal, giou=giou_loss, l1=l1, total=total)


def loss_grad(maps: ScoreMaps, gt_box: BBox, config: LossConfig = LossConfig()) -> ScoreMaps:
    """Analytic gradient of ``total_loss(...).total`` for every map entry.

    Returned as a float64 :class:`ScoreMaps` with the same extents as ``maps``.
    """
    _check_gt(gt_box)
    s = maps.grid
    cell, _, d_giou, _, d_l1 = _box_terms(maps, gt_box)
    target = gaussian_target(cell, s, config.sigma_for(s))
    g_center = focal_grad(maps.center, target, config.focal_alpha, config.focal_beta)

    # d loss / d (x1, y1, x2, y2) of the predicted box
    d_box = config.lambda_giou * d_giou + config.lambda_l1 * d_l1
    row, col = cell
    g_offset = np.zeros(maps.offset.shape)
    g_size = np.zeros(maps.size.shape)
    # x1 = (col + ox)/s - w/2, x2 = (col + ox)/s + w/2; same for y
    g_offset[0, row, col] = (d_box[0] + d_box[2]) / s
    g_offset[1, row, col] = (d_box[1] + d_box[3]) / s
    g_size[0, row, col] = (d_box[2] - d_box[0]) / 2.0
    g_size[1, row, col] = (d_box[3] - d_box[1]) / 2.0
    return ScoreMaps(center=g_center, offset=g_offset, size=g_size)
