"""Layer-pruned ViT encoder with asynchronous template / search extraction.

The template runs through every layer as plain self-attention and only its
final token matrix is kept.  The search image runs ``fe_layers`` self-attention
blocks, then ``ai_layers`` blocks whose queries come from the search tokens
alone while keys and values span ``[search; cached template]``.  Both branches
share one set of weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .config import ModelConfig
from .exceptions import ConfigError, DimensionError
from .tensor import DTYPE, MacCounter, gelu, layer_norm, matmul, patchify, softmax_rows
from .weights import LayerView, WeightStore

ORIGINS = ("template", "search", "joint")


@dataclass(frozen=True)
class TokenSeq:
    tokens: np.ndarray
    origin: str

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}, got {self.origin!r}")
        if self.tokens.ndim != 2:
            raise DimensionError(f"tokens must be N x C, got {self.tokens.shape}")

    def __len__(self):
        return self.tokens.shape[0]


def _linear(x, lw, name, counter):
    return matmul(x, lw[name + ".weight"], counter) + lw[name + ".bias"]


def _check_image(image: np.ndarray, size: tuple, branch: str) -> None:
    if image.ndim != 3 or image.shape[0] != 3:
        raise ConfigError(f"{branch} image must be 3 x H x W, got {image.shape}")
    if tuple(image.shape[1:]) != tuple(size):
        raise ConfigError(f"{branch} image is {image.shape[1]}x{image.shape[2]}, config expects {size[0]}x{size[1]}")


def patch_embed(image: np.ndarray, weights: WeightStore, branch: str,
                counter: MacCounter | None = None) -> TokenSeq:
    """Patchify, project to ``embed_dim`` and add the branch's positional table."""
    config = weights.config
    size = config.template_size if branch == "template" else config.search_size
    _check_image(image, size, branch)
    patches = patchify(np.asarray(image, dtype=DTYPE), config.patch_size)
    tokens = matmul(patches, weights["patch_embed.weight"], counter) + weights["patch_embed.bias"]
    tokens = tokens + weights[f"pos_embed.{branch}"]
    return TokenSeq(tokens.astype(DTYPE), branch)


def _attention(h, kv, lw: LayerView, num_heads: int, counter, capture=None):
    n, c = h.shape
    dk = c // num_heads
    q = _linear(h, lw, "attn.q", counter)
    k = _linear(kv, lw, "attn.k", counter)
    v = _linear(kv, lw, "attn.v", counter)
    scale = DTYPE(1.0 / np.sqrt(dk))
    heads, probs = [], []
    for i in range(num_heads):
        sl = slice(i * dk, (i + 1) * dk)
        # k is N' x dk; transpose is a view, matmul copies it to float64 anyway
        scores = matmul(q[:, sl], k[:, sl].T, counter) * scale
        p = softmax_rows(scores)
        heads.append(matmul(p, v[:, sl], counter))
        if capture is not None:
            probs.append(p)
    if capture is not None:
        capture["attn"] = np.stack(probs)
    out = np.concatenate(heads, axis=1) if heads else np.zeros((n, c), DTYPE)
    return _linear(out, lw, "attn.proj", counter)


def _block(x: np.ndarray, extra_kv: np.ndarray | None, lw: LayerView, num_heads: int,
           counter, capture=None) -> np.ndarray:
    h = layer_norm(x, lw["norm1.weight"], lw["norm1.bias"])
    if extra_kv is None:
        kv = h
    else:
        kv = np.concatenate([h, layer_norm(extra_kv, lw["norm1.weight"], lw["norm1.bias"])], axis=0)
    x = x + _attention(h, kv, lw, num_heads, counter, capture)
    h = layer_norm(x, lw["norm2.weight"], lw["norm2.bias"])
    h = gelu(_linear(h, lw, "mlp.fc1", counter))
    return (x + _linear(h, lw, "mlp.fc2", counter)).astype(DTYPE)


def _num_heads(lw) -> int:
    return lw._store.config.num_heads


def self_block(x: TokenSeq, layer_weights: LayerView, counter: MacCounter | None = None,
               capture: dict | None = None) -> TokenSeq:
    """Pre-norm transformer block where the tokens attend only to themselves."""
    if counter is not None:
        counter.record_block("self", x.origin)
    out = _block(x.tokens, None, layer_weights, _num_heads(layer_weights), counter, capture)
    return TokenSeq(out, x.origin)


def asym_block(x: TokenSeq, z_cached: TokenSeq, layer_weights: LayerView,
               counter: MacCounter | None = None, capture: dict | None = None) -> TokenSeq:
    """Interaction block: search queries over ``[search; template]`` keys/values.

    Only the search rows are updated and returned; ``z_cached`` is read-only.
    """
    if x.origin != "search" or z_cached.origin != "template":
        raise ValueError(f"asym_block expects (search, template), got ({x.origin}, {z_cached.origin})")
    if x.tokens.shape[1] != z_cached.tokens.shape[1]:
        raise DimensionError(
            f"channel width mismatch: search {x.tokens.shape} vs template {z_cached.tokens.shape}"
        )
    if counter is not None:
        counter.record_block("asym", x.origin)
    out = _block(x.tokens, z_cached.tokens, layer_weights, _num_heads(layer_weights), counter, capture)
    return TokenSeq(out, "search")


def _final_norm(x: np.ndarray, weights: WeightStore) -> np.ndarray:
    out = layer_norm(x, weights["norm.weight"], weights["norm.bias"])
    out.setflags(write=False)
    return out


def extract_template(template_image: np.ndarray, config: ModelConfig, weights: WeightStore,
                     counter: MacCounter | None = None) -> np.ndarray:
    """Template features: all ``fe + ai`` layers as self-attention, then the final norm."""
    _check_config(config, weights)
    counter = counter if counter is not None else MacCounter(enabled=False)
    with counter.stage("template"):
        z = patch_embed(template_image, weights, "template", counter)
        for i in range(config.depth):
            z = self_block(z, weights.layer(i), counter)
    return _final_norm(z.tokens, weights)


def _check_config(config: ModelConfig, weights: WeightStore) -> None:
    if config != weights.config:
        raise ConfigError("config does not match the weight store's config")


def _run_search(search_image, template_features, config, weights, counter, capture_layer=None):
    _check_config(config, weights)
    nz, c = config.num_template_tokens, config.embed_dim
    if config.ai_layers and template_features.shape != (nz, c):
        raise DimensionError(f"template features {template_features.shape}, expected {(nz, c)}")
    counter = counter if counter is not None else MacCounter(enabled=False)
    capture = {} if capture_layer is not None else None
    with counter.stage("patch_embed"):
        x = patch_embed(search_image, weights, "search", counter)
    with counter.stage("fe"):
        for i in range(config.fe_layers):
            x = self_block(x, weights.layer(i), counter)
    z = TokenSeq(np.asarray(template_features, dtype=DTYPE), "template")
    with counter.stage("ai"):
        for i in range(config.fe_layers, config.depth):
            cap = capture if i == capture_layer else None
            x = asym_block(x, z, weights.layer(i), counter, cap)
            if cap is not None:
                return None, cap["attn"]
    return _final_norm(x.tokens, weights), None


def forward_search(search_image: np.ndarray, template_features: np.ndarray, config: ModelConfig,
                   weights: WeightStore, counter: MacCounter | None = None) -> np.ndarray:
    """Search token matrix after FE blocks, AI blocks and the final norm."""
    out, _ = _run_search(search_image, template_features, config, weights, counter)
    return out


def _check_ai_layer(config: ModelConfig, layer_index: int) -> None:
    valid = range(config.fe_layers, config.depth)
    if layer_index not in valid:
        raise IndexError(
            f"layer {layer_index} is not an interaction layer; valid layers: {list(valid)}"
        )


def attention_weights(search_image, template_features, config, weights, layer_index) -> np.ndarray:
    """Softmaxed attention of AI layer ``layer_index``, ``heads x N_x x (N_x + N_z)``."""
    _check_ai_layer(config, layer_index)
    _, attn = _run_search(search_image, template_features, config, weights, None, layer_index)
    return attn


def attention_probe(search_image, template_features, config, weights, layer_index) -> np.ndarray:
    """Mean attention each search token pays to the template, on the search grid.

    Averages over heads and over the template key columns; ``layer_index`` is
    the global 0-based layer number and must belong to the interaction stage.
    """
    attn = attention_weights(search_image, template_features, config, weights, layer_index)
    nx = config.num_search_tokens
    cols = attn[:, :, nx:].astype(np.float64)
    probe = cols.mean(axis=(0, 2)) if cols.shape[2] else np.zeros(nx)
    return probe.reshape(config.search_grid).astype(DTYPE)


class LiteTrackEncoder(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` caches template features, ``transform`` encodes search crops.

    Parameters
    ----------
    weights : WeightStore
        Parameters shared by the template and search branches.
    """

    def __init__(self, weights=None):
        self.weights = weights

    def fit(self, X, y=None):
        """``X`` is a template image (3 x H_z x W_z) or a batch with one template."""
        if self.weights is None:
            raise ConfigError("LiteTrackEncoder needs weights")
        z = np.asarray(X, dtype=DTYPE)
        if z.ndim == 4:
            if z.shape[0] != 1:
                raise DimensionError("fit expects a single template image")
            z = z[0]
        self.config_ = self.weights.config
        self.template_features_ = extract_template(z, self.config_, self.weights)
        return self

    def transform(self, X):
        """Encode one search image, or a batch of them, to ``N_x x C`` tokens each."""
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "template_features_")
        x = np.asarray(X, dtype=DTYPE)
        if x.ndim == 3:
            return forward_search(x, self.template_features_, self.config_, self.weights)
        return np.stack([forward_search(img, self.template_features_, self.config_, self.weights) for img in x])
