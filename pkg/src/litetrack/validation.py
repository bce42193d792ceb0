"""Input checks shared by the tracker, estimators and CLI."""
from __future__ import annotations

import math

import numpy as np

from .boxes import BBox
from .exceptions import InputError, NumericError
from .tensor import DTYPE


def check_frame(frame) -> np.ndarray:
    """Return ``frame`` as a finite float32 ``3 x H x W`` array."""
    arr = np.asarray(frame)
    if arr.ndim != 3 or arr.shape[0] != 3 or arr.shape[1] == 0 or arr.shape[2] == 0:
        raise InputError(f"frames must be non-empty 3 x H x W arrays, got shape {arr.shape}")
    arr = arr.astype(DTYPE, copy=False)
    if not np.isfinite(arr).all():
        raise NumericError("frame contains non-finite values")
    return arr


def check_box(box: BBox, frame_shape: tuple) -> BBox:
    """Reject degenerate boxes and boxes whose center lies outside the frame."""
    values = (box.cx, box.cy, box.w, box.h)
    if not all(math.isfinite(v) for v in values):
        raise InputError(f"box has non-finite coordinates: {box}")
    if box.w <= 0 or box.h <= 0:
        raise InputError(f"box must have positive width and height: {box}")
    _, h, w = frame_shape
    if not (0 <= box.cx <= w and 0 <= box.cy <= h):
        raise InputError(f"box center ({box.cx:.1f}, {box.cy:.1f}) outside the {w}x{h} frame")
    return box
