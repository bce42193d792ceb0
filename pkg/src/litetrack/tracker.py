"""Per-sequence tracking loop with a cached last-layer template."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .boxes import BBox
from .config import ModelConfig, variant_config
from .encoder import extract_template, forward_search
from .exceptions import InputError
from .head import decode_box, head_forward
from .tensor import DTYPE, MacCounter
from .validation import check_box, check_frame
from .weights import WeightStore, init_weights

SEARCH_FACTOR = 4.0
TEMPLATE_FACTOR = 2.0
MIN_BOX_SIDE = 1.0


@dataclass(frozen=True)
class CropSpec:
    center: tuple[float, float]
    side: float
    scale: float  # model pixels per crop pixel
    padded: bool

    @property
    def corners(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        half = self.side / 2.0
        return (cx - half, cy - half, cx + half, cy + half)

    def to_frame(self, box: BBox) -> BBox:
        """Map a box normalized to the crop back to frame pixels."""
        x0, y0, _, _ = self.corners
        return BBox(x0 + box.cx * self.side, y0 + box.cy * self.side,
                    box.w * self.side, box.h * self.side)


@dataclass(frozen=True)
class TemplateCache:
    features: np.ndarray
    config_hash: str

    def digest(self) -> str:
        return hashlib.sha256(self.features.tobytes()).hexdigest()


@dataclass(frozen=True)
class TrackState:
    template_cache: TemplateCache
    prev_box: BBox
    frame_index: int
    config: ModelConfig
    weights: WeightStore
    frame_shape: tuple[int, int, int]


def config_hash(config: ModelConfig, weights: WeightStore) -> str:
    return hashlib.sha256((config.digest() + weights.digest()).encode()).hexdigest()


def _axis_samples(start: float, side: float, out: int, limit: int):
    # half-pixel centers: output pixel i samples source coordinate u
    u = start + (np.arange(out) + 0.5) * (side / out) - 0.5
    i0 = np.floor(u).astype(np.int64)
    t = u - i0
    i1 = i0 + 1
    return (i0, i1), (1.0 - t, t), (i0 >= 0) & (i0 < limit), (i1 >= 0) & (i1 < limit)


def make_crop(image: np.ndarray, box: BBox, factor: float, out_size: int | tuple) -> tuple[np.ndarray, CropSpec]:
    """Square crop of side ``factor * sqrt(w * h)`` around the box center.

    Area outside the frame takes the per-channel frame mean; the crop is
    resampled to ``out_size`` with bilinear interpolation (half-pixel centers).
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.size == 0:
        raise InputError(f"make_crop needs a non-empty C x H x W image, got shape {image.shape}")
    if factor <= 0:
        raise InputError(f"crop factor must be positive, got {factor}")
    if not (box.w > 0 and box.h > 0):
        raise InputError(f"crop box must have positive area, got {box}")
    oh, ow = (out_size, out_size) if isinstance(out_size, int) else out_size
    c, h, w = image.shape
    side = factor * math.sqrt(box.w * box.h)
    x0, y0 = box.cx - side / 2.0, box.cy - side / 2.0
    (ya, yb), (wya, wyb), vya, vyb = _axis_samples(y0, side, oh, h)
    (xa, xb), (wxa, wxb), vxa, vxb = _axis_samples(x0, side, ow, w)

    img = image.astype(np.float64)
    mean = img.reshape(c, -1).mean(axis=1)[:, None, None]
    out = np.zeros((c, oh, ow))
    for yi, wy, vy in ((ya, wya, vya), (yb, wyb, vyb)):
        for xi, wx, vx in ((xa, wxa, vxa), (xb, wxb, vxb)):
            vals = img[:, np.clip(yi, 0, h - 1)[:, None], np.clip(xi, 0, w - 1)[None, :]]
            mask = vy[:, None] & vx[None, :]
            vals = np.where(mask[None], vals, mean)
            out += vals * (wy[:, None] * wx[None, :])[None]
    padded = x0 < 0 or y0 < 0 or x0 + side > w or y0 + side > h
    spec = CropSpec(center=(box.cx, box.cy), side=side, scale=ow / side, padded=bool(padded))
    return out.astype(DTYPE), spec


def hanning2d(s: int) -> np.ndarray:
    """Outer product of the length-``s`` Hann window; ``[[1]]`` for ``s == 1``."""
    if s < 1:
        raise ValueError("window size must be >= 1")
    if s == 1:
        return np.ones((1, 1), dtype=DTYPE)
    i = np.arange(s, dtype=np.float64)
    w = 0.5 * (1.0 - np.cos(2.0 * np.pi * i / (s - 1)))
    return np.outer(w, w).astype(DTYPE)


def clip_box(box: BBox, width: int, height: int, min_side: float = MIN_BOX_SIDE) -> BBox:
    """Clamp a pixel box inside the frame, keeping at least ``min_side`` per side."""
    x1, y1, x2, y2 = box.to_xyxy()
    min_w, min_h = min(min_side, width), min(min_side, height)
    x1 = min(max(x1, 0.0), width - min_w)
    y1 = min(max(y1, 0.0), height - min_h)
    x2 = min(max(x2, x1 + min_w), width)
    y2 = min(max(y2, y1 + min_h), height)
    return BBox.from_xyxy(x1, y1, x2, y2)


def init_track(first_frame: np.ndarray, gt_box: BBox, config: ModelConfig, weights: WeightStore,
               counter: MacCounter | None = None) -> TrackState:
    """Crop the template (factor 2), extract and cache its last-layer features."""
    frame = check_frame(first_frame)
    gt_box = check_box(gt_box, frame.shape)
    template, _ = make_crop(frame, gt_box, TEMPLATE_FACTOR, config.template_size)
    features = extract_template(template, config, weights, counter)
    cache = TemplateCache(features=features, config_hash=config_hash(config, weights))
    return TrackState(cache, gt_box, 0, config, weights, frame.shape)


def track_frame(state: TrackState, frame: np.ndarray, counter: MacCounter | None = None,
                template_features: np.ndarray | None = None) -> tuple[BBox, float, TrackState]:
    """Locate the target in ``frame``; returns the pixel box, its score and the next state.

    ``template_features`` overrides the cache; it exists so a reference
    tracker can feed freshly recomputed features.
    """
    frame = check_frame(frame)
    if frame.shape != state.frame_shape:
        raise InputError(f"frame shape {frame.shape} differs from the first frame {state.frame_shape}")
    config, weights = state.config, state.weights
    feats = state.template_cache.features if template_features is None else template_features
    search, spec = make_crop(frame, state.prev_box, SEARCH_FACTOR, config.search_size)
    tokens = forward_search(search, feats, config, weights, counter)
    maps = head_forward(tokens, weights, counter)
    norm_box, score, _ = decode_box(maps, hanning2d(maps.grid))
    box = clip_box(spec.to_frame(norm_box), frame.shape[2], frame.shape[1])
    return box, score, replace(state, prev_box=box, frame_index=state.frame_index + 1)


class LiteTracker(BaseEstimator):
    """Single-object tracker with the estimator interface.

    ``fit(first_frame, gt_box)`` builds the template cache; ``predict(frame)``
    tracks one frame (or a list of frames, in order) and returns ``x, y, w, h``
    rows in pixels.

    Parameters
    ----------
    variant : str
        Layer preset, one of ``B9``, ``B8``, ``B6``, ``B4``. Ignored when
        ``config`` is given.
    toy : bool
        Use the small test dimensions instead of ViT-B.
    config : ModelConfig, optional
    weights : WeightStore, optional
        Defaults to seeded random weights built from ``seed``.
    seed : int
    """

    def __init__(self, variant="B6", toy=False, config=None, weights=None, seed=0):
        self.variant = variant
        self.toy = toy
        self.config = config
        self.weights = weights
        self.seed = seed

    def _resolve(self):
        if self.weights is not None:
            return self.weights.config, self.weights
        config = self.config if self.config is not None else variant_config(self.variant, toy=self.toy)
        return config, init_weights(config, seed=self.seed)

    def fit(self, X, y):
        config, weights = self._resolve()
        box = y if isinstance(y, BBox) else BBox.from_xywh(*np.asarray(y, dtype=np.float64).ravel()[:4])
        self.state_ = init_track(X, box, config, weights)
        self.scores_ = []
        return self

    def predict(self, X):
        check_is_fitted(self, "state_")
        frames = [X] if np.ndim(X) == 3 else list(X)
        rows = []
        for frame in frames:
            box, score, self.state_ = track_frame(self.state_, frame)
            self.scores_.append(score)
            rows.append(box.to_xywh())
        return np.asarray(rows)

    @property
    def template_cache_(self) -> TemplateCache:
        check_is_fitted(self, "state_")
        return self.state_.template_cache
