"""Center head: score / offset / size maps from search tokens, and box decoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import BBox
from .exceptions import DimensionError
from .tensor import DTYPE, LN_EPS, MacCounter, matmul, sigmoid
from .weights import HEAD_BRANCHES, HEAD_STAGES, WeightStore

OUT_EPS = DTYPE(1e-6)


@dataclass(frozen=True)
class ScoreMaps:
    """Head outputs on an ``S x S`` grid.

    ``offset[0]``/``size[0]`` are the x / width channels, ``[1]`` the y /
    height channels.
    """

    center: np.ndarray
    offset: np.ndarray
    size: np.ndarray

    @property
    def grid(self) -> int:
        return self.center.shape[0]


def _im2col3x3(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    pad = np.zeros((c, h + 2, w + 2), dtype=x.dtype)
    pad[:, 1:-1, 1:-1] = x
    cols = np.empty((c, 9, h, w), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, ky * 3 + kx] = pad[:, ky:ky + h, kx:kx + w]
    # -> (h*w, c*9) with column index ci*9 + ky*3 + kx
    return cols.reshape(c * 9, h * w).T


def conv3x3(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, counter: MacCounter | None = None) -> np.ndarray:
    """Stride-1, padding-1 convolution; ``weight`` is ``Cout x Cin x 3 x 3``."""
    cout, cin = weight.shape[:2]
    if x.shape[0] != cin:
        raise DimensionError(f"conv3x3: input has {x.shape[0]} channels, kernel expects {cin}")
    _, h, w = x.shape
    out = matmul(_im2col3x3(x), weight.reshape(cout, cin * 9).T, counter) + bias
    return np.ascontiguousarray(out.T.reshape(cout, h, w))


def channel_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    """Per-channel normalization over spatial positions (no batch statistics)."""
    x64 = x.astype(np.float64)
    mean = x64.mean(axis=(1, 2), keepdims=True)
    var = x64.var(axis=(1, 2), keepdims=True)
    y = (x64 - mean) / np.sqrt(var + eps)
    return (y * gamma[:, None, None] + beta[:, None, None]).astype(DTYPE)


def _branch(x, weights, name, counter):
    for j in range(HEAD_STAGES):
        p = f"head.{name}.{j}."
        x = conv3x3(x, weights[p + "weight"], weights[p + "bias"], counter)
        if j < HEAD_STAGES - 1:
            x = channel_norm(x, weights[p + "norm.weight"], weights[p + "norm.bias"])
            x = np.maximum(x, 0)
    # keeps decoded centers strictly inside [0, 1) and sizes strictly positive
    return np.clip(sigmoid(x), OUT_EPS, DTYPE(1.0) - OUT_EPS)


def head_forward(search_tokens: np.ndarray, weights: WeightStore, counter: MacCounter | None = None) -> ScoreMaps:
    """Run the three conv branches on the ``N_x x C`` token matrix."""
    n, c = search_tokens.shape
    s = int(round(np.sqrt(n)))
    if s * s != n:
        raise DimensionError(f"head needs a square token grid, got {n} tokens")
    fmap = np.ascontiguousarray(search_tokens.T.reshape(c, s, s))
    counter = counter if counter is not None else MacCounter(enabled=False)
    with counter.stage("head"):
        outs = {name: _branch(fmap, weights, name, counter) for name, _ in HEAD_BRANCHES}
    return ScoreMaps(center=outs["center"][0], offset=outs["offset"], size=outs["size"])


def decode_box(maps: ScoreMaps, penalty: np.ndarray | None = None) -> tuple[BBox, float, tuple[int, int]]:
    """Pick the best cell and turn its offset / size into a normalized box.

    The cell maximizes ``center * penalty``; ties go to the smallest
    row-major index.  The returned score is the unpenalized center value.
    """
    s = maps.grid
    score_map = maps.center.astype(np.float64)
    if penalty is not None:
        if penalty.shape != maps.center.shape:
            raise DimensionError(f"penalty {penalty.shape} vs center map {maps.center.shape}")
        score_map = score_map * penalty
    flat = int(np.argmax(score_map))
    row, col = divmod(flat, s)
    cx = (col + float(maps.offset[0, row, col])) / s
    cy = (row + float(maps.offset[1, row, col])) / s
    box = BBox(cx, cy, float(maps.size[0, row, col]), float(maps.size[1, row, col]))
    return box, float(maps.center[row, col]), (row, col)
