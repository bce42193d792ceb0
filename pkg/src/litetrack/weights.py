"""Named parameter store, seeded initialization and the binary weight file.

Weight file layout (all integers little-endian)::

    offset 0   4 bytes   magic b"LTWT"
    offset 4   uint32    format version (1)
    offset 8   uint64    manifest length L in bytes
    offset 16  L bytes   UTF-8 JSON manifest
    ...        padding   zero bytes up to the next multiple of 16
    payload    raw float32 tensors, little-endian, row-major

The manifest is ``{"config": {...}, "head": bool, "tensors": [{"name",
"shape", "offset", "nbytes"}, ...]}`` where ``offset`` is relative to the
start of the payload.  Keys are sorted so identical stores serialize to
identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .exceptions import ConfigError
from .tensor import DTYPE

MAGIC = b"LTWT"
VERSION = 1
INIT_STD = 0.02
HEAD_BRANCHES = (("center", 1), ("offset", 2), ("size", 2))
HEAD_STAGES = 4


def head_channels(config: ModelConfig, out: int) -> list[int]:
    """Channel widths C -> C/2 -> C/4 -> C/8 -> out of one head branch."""
    c = config.embed_dim
    if c % 8:
        raise ConfigError(f"head needs embed_dim divisible by 8, got {c}")
    return [c, c // 2, c // 4, c // 8, out]


def weight_shapes(config: ModelConfig, include_head: bool = True) -> dict[str, tuple]:
    """Every tensor name required by ``config`` mapped to its shape."""
    c, hid = config.embed_dim, config.hidden_dim
    shapes: dict[str, tuple] = {
        "patch_embed.weight": (config.patch_dim, c),
        "patch_embed.bias": (c,),
        "pos_embed.template": (config.num_template_tokens, c),
        "pos_embed.search": (config.num_search_tokens, c),
    }
    for i in range(config.depth):
        p = f"blocks.{i}."
        shapes[p + "norm1.weight"] = (c,)
        shapes[p + "norm1.bias"] = (c,)
        for proj in ("q", "k", "v", "proj"):
            shapes[p + f"attn.{proj}.weight"] = (c, c)
            shapes[p + f"attn.{proj}.bias"] = (c,)
        shapes[p + "norm2.weight"] = (c,)
        shapes[p + "norm2.bias"] = (c,)
        shapes[p + "mlp.fc1.weight"] = (c, hid)
        shapes[p + "mlp.fc1.bias"] = (hid,)
        shapes[p + "mlp.fc2.weight"] = (hid, c)
        shapes[p + "mlp.fc2.bias"] = (c,)
    shapes["norm.weight"] = (c,)
    shapes["norm.bias"] = (c,)
    if include_head:
        for branch, out in HEAD_BRANCHES:
            widths = head_channels(config, out)
            for j in range(HEAD_STAGES):
                p = f"head.{branch}.{j}."
                shapes[p + "weight"] = (widths[j + 1], widths[j], 3, 3)
                shapes[p + "bias"] = (widths[j + 1],)
                if j < HEAD_STAGES - 1:
                    shapes[p + "norm.weight"] = (widths[j + 1],)
                    shapes[p + "norm.bias"] = (widths[j + 1],)
    return shapes


class WeightStore(Mapping):
    """Immutable mapping from canonical parameter names to float32 arrays.

    Set ``access_log`` to a list to record every name that is looked up.
    """

    def __init__(self, config: ModelConfig, tensors: Mapping[str, np.ndarray], include_head: bool | None = None):
        if include_head is None:
            include_head = any(k.startswith("head.") for k in tensors)
        expected = weight_shapes(config, include_head)
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        if missing or extra:
            raise ConfigError(f"weight names do not match config: missing={missing[:5]} extra={extra[:5]}")
        data = {}
        for name, shape in expected.items():
            arr = np.array(tensors[name], dtype=DTYPE, copy=True, order="C")
            if arr.shape != shape:
                raise ConfigError(f"{name}: shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            data[name] = arr
        self.config = config
        self.include_head = include_head
        self._data = data
        self.access_log: list | None = None

    def __getitem__(self, name: str) -> np.ndarray:
        if self.access_log is not None:
            self.access_log.append(name)
        return self._data[name]

    def __iter__(self):
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def layer(self, index: int) -> "LayerView":
        if not 0 <= index < self.config.depth:
            raise IndexError(f"layer {index} outside 0..{self.config.depth - 1}")
        return LayerView(self, f"blocks.{index}.")

    def num_elements(self) -> int:
        return sum(a.size for a in self._data.values())

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self._data):
            h.update(name.encode())
            h.update(self._data[name].tobytes())
        return h.hexdigest()


class LayerView:
    """Prefix-scoped read access to one encoder layer's parameters."""

    def __init__(self, store: WeightStore, prefix: str):
        self._store = store
        self.prefix = prefix

    def __getitem__(self, name: str) -> np.ndarray:
        return self._store[self.prefix + name]


def init_weights(config: ModelConfig, seed: int = 0, include_head: bool = True) -> WeightStore:
    """Seeded Gaussian init (std 0.02), zero biases and betas, unit gammas."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in weight_shapes(config, include_head).items():
        if name.endswith("norm.weight") or name.endswith("norm1.weight") or name.endswith("norm2.weight"):
            tensors[name] = np.ones(shape, dtype=DTYPE)
        elif name.endswith("bias"):
            tensors[name] = np.zeros(shape, dtype=DTYPE)
        else:
            tensors[name] = (rng.standard_normal(shape) * INIT_STD).astype(DTYPE)
    return WeightStore(config, tensors, include_head)


def prune_weights(weights: WeightStore, config: ModelConfig) -> WeightStore:
    """Keep the bottom ``config.depth`` layers of a deeper store (top-down pruning)."""
    base = weights.config
    if config.depth > base.depth:
        raise ConfigError(f"cannot prune {base.depth} layers down to {config.depth}")
    same = ("embed_dim", "num_heads", "mlp_ratio", "patch_size", "template_size", "search_size")
    for key in same:
        if getattr(base, key) != getattr(config, key):
            raise ConfigError(f"pruned config differs from base in {key}")
    wanted = weight_shapes(config, weights.include_head)
    return WeightStore(config, {k: weights._data[k] for k in wanted}, weights.include_head)


def replace_weights(weights: WeightStore, **updates: np.ndarray) -> WeightStore:
    """Copy of ``weights`` with some tensors swapped (names use ``__`` for ``.``)."""
    data = dict(weights._data)
    for key, val in updates.items():
        name = key.replace("__", ".")
        if name not in data:
            raise ConfigError(f"unknown weight {name}")
        data[name] = val
    return WeightStore(weights.config, data, weights.include_head)


def to_bytes(weights: WeightStore) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in weights:
        arr = weights._data[name]
        raw = arr.astype("<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"config": weights.config.to_dict(), "head": weights.include_head, "tensors": entries}
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    header = MAGIC + struct.pack("<IQ", VERSION, len(blob)) + blob
    header += b"\0" * (-len(header) % 16)
    return header + b"".join(chunks)


def from_bytes(buf: bytes) -> WeightStore:
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise ConfigError("not a weight file (bad magic)")
    version, mlen = struct.unpack_from("<IQ", buf, 4)
    if version != VERSION:
        raise ConfigError(f"unsupported weight file version {version}")
    try:
        manifest = json.loads(buf[16:16 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError("corrupt weight manifest") from exc
    start = 16 + mlen
    start += -start % 16
    config = ModelConfig.from_dict(manifest["config"])
    tensors = {}
    for ent in manifest["tensors"]:
        lo = start + ent["offset"]
        hi = lo + ent["nbytes"]
        if hi > len(buf):
            raise ConfigError(f"weight file truncated in {ent['name']}")
        tensors[ent["name"]] = np.frombuffer(buf[lo:hi], dtype="<f4").reshape(ent["shape"])
    return WeightStore(config, tensors, manifest["head"])


def save_weights(weights: WeightStore, path) -> None:
    Path(path).write_bytes(to_bytes(weights))


def load_weights(path) -> WeightStore:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read weights {path}: {exc}") from exc
    return from_bytes(buf)
