"""Dense float32 kernels shared by the encoder, the head and the cost oracle.

Tensors are plain ``numpy.ndarray`` objects of dtype float32.  Products and
reductions are accumulated in float64 and rounded back to float32, which keeps
results reproducible from run to run on the same machine.
"""
from __future__ import annotations

from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .exceptions import DimensionError, NumericError

DTYPE = np.float32
LN_EPS = 1e-5


def as_tensor(x) -> np.ndarray:
    """Return ``x`` as a C-contiguous float32 array (no copy when possible)."""
    return np.ascontiguousarray(x, dtype=DTYPE)


@dataclass
class MacCounter:
    """Tally of matrix-product multiply-accumulates.

    Only :func:`matmul` reports to the counter; elementwise work, softmax and
    normalization are deliberately left out.  ``stage`` attributes MACs to a
    named bucket and ``blocks`` records encoder block invocations so tests
    can check how many layers of each kind actually ran.

    A counter is not thread safe; give every worker its own and add the
    totals afterwards.
    """

    enabled: bool = True
    total: int = 0
    by_stage: Counter = field(default_factory=Counter)
    blocks: list = field(default_factory=list)
    _stage: list = field(default_factory=list, repr=False)

    def add(self, macs: int) -> None:
        if not self.enabled:
            return
        macs = int(macs)
        self.total += macs
        self.by_stage[self._stage[-1] if self._stage else "other"] += macs

    @contextmanager
    def stage(self, name: str):
        self._stage.append(name)
        try:
            yield self
        finally:
            self._stage.pop()

    def record_block(self, kind: str, origin: str) -> None:
        if self.enabled:
            self.blocks.append((kind, origin))

    def block_counts(self, origin: str) -> tuple[int, int]:
        """Return ``(self_blocks, asym_blocks)`` executed for ``origin``."""
        kinds = [k for k, o in self.blocks if o == origin]
        return kinds.count("self"), kinds.count("asym")

    def reset(self) -> None:
        self.total = 0
        self.by_stage.clear()
        self.blocks.clear()

    def __iadd__(self, other: "MacCounter") -> "MacCounter":
        self.total += other.total
        self.by_stage.update(other.by_stage)
        self.blocks.extend(other.blocks)
        return self


def matmul(a: np.ndarray, b: np.ndarray, counter: MacCounter | None = None) -> np.ndarray:
    """Matrix product of ``a`` (M x K) and ``b`` (K x N).

    Adds exactly ``M*K*N`` to ``counter`` when it is enabled.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    if counter is not None:
        counter.add(m * k * n)
    if m == 0 or n == 0:
        return np.zeros((m, n), dtype=DTYPE)
    out = np.matmul(a.astype(np.float64), b.astype(np.float64))
    return out.astype(DTYPE)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, stabilized by the row maximum."""
    x = np.asarray(logits, dtype=np.float64)
    if np.isnan(x).any():
        raise NumericError("softmax_rows: NaN in logits")
    if x.shape[-1] == 0:
        return x.astype(DTYPE)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return (e / e.sum(axis=-1, keepdims=True)).astype(DTYPE)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    """Normalize each row of ``x`` to zero mean / unit variance, then scale and shift."""
    if x.shape[-1] != gamma.shape[-1] or gamma.shape != beta.shape:
        raise DimensionError(
            f"layer_norm: input {x.shape} vs gamma {gamma.shape} / beta {beta.shape}"
        )
    x64 = np.asarray(x, dtype=np.float64)
    mean = x64.mean(axis=-1, keepdims=True)
    var = x64.var(axis=-1, keepdims=True)
    y = (x64 - mean) / np.sqrt(var + eps)
    return (y * gamma.astype(np.float64) + beta.astype(np.float64)).astype(DTYPE)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, ``x * Phi(x)`` with Phi the standard normal CDF."""
    x64 = np.asarray(x, dtype=np.float64)
    return (0.5 * x64 * (1.0 + erf(x64 / np.sqrt(2.0)))).astype(DTYPE)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x64 = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x64)
    pos = x64 >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x64[pos]))
    ex = np.exp(x64[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.astype(DTYPE)


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """Cut a ``3 x H x W`` image into flattened ``P x P`` patches.

    Rows follow raster order over the patch grid; each row is laid out
    channel-major (all of channel 0, then channel 1, ...).
    """
    if image.ndim != 3:
        raise DimensionError(f"patchify: expected C x H x W, got {image.shape}")
    c, h, w = image.shape
    if patch <= 0 or h % patch or w % patch:
        raise DimensionError(f"patchify: extents {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    x = image.reshape(c, gh, patch, gw, patch)
    x = x.transpose(1, 3, 0, 2, 4)
    return as_tensor(x.reshape(gh * gw, c * patch * patch))


def unpatchify(patches: np.ndarray, patch: int, height: int, width: int, channels: int = 3) -> np.ndarray:
    """Inverse of :func:`patchify`."""
    gh, gw = height // patch, width // patch
    if patches.shape != (gh * gw, channels * patch * patch):
        raise DimensionError(
            f"unpatchify: {patches.shape} does not tile a {channels}x{height}x{width} image"
        )
    x = patches.reshape(gh, gw, channels, patch, patch).transpose(2, 0, 3, 1, 4)
    return as_tensor(x.reshape(channels, height, width))
