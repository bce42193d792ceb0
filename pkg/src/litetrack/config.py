"""Model configuration, variant presets and the key=value config file format."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .exceptions import ConfigError

# (fe_layers, ai_layers) per released variant
VARIANTS = {
    "B9": (6, 3),
    "B8": (6, 2),
    "B6": (3, 3),
    "B4": (2, 2),
}

# reported MACs (G) and params (M) for each variant, compared but never asserted
REPORTED_TABLE = {
    "B9": {"macs_g": 14.17, "params_m": 54.92},
    "B8": {"macs_g": 12.77, "params_m": 49.60},
    "B6": {"macs_g": 10.09, "params_m": 38.97},
    "B4": {"macs_g": 6.78, "params_m": 26.18},
}

# (total layers) -> [(fe, ai), ...] rows of the FE/AI ratio ablation
ABLATION_ROWS = [
    (8, 6, 2), (8, 5, 3), (8, 0, 8),
    (6, 4, 2), (6, 3, 3),
    (4, 3, 1), (4, 2, 2),
]


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    if isinstance(v, str):
        parts = v.lower().replace(",", "x").split("x")
        return tuple(int(p) for p in parts) if len(parts) == 2 else (int(parts[0]),) * 2
    h, w = v
    return (int(h), int(w))


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters of one encoder + head.

    Sizes are ``(height, width)`` pixel pairs.  Defaults are ViT-B at the
    128 / 256 template / search resolution.
    """

    embed_dim: int = 768
    num_heads: int = 12
    mlp_ratio: int = 4
    patch_size: int = 16
    template_size: tuple = (128, 128)
    search_size: tuple = (256, 256)
    fe_layers: int = 6
    ai_layers: int = 3

    def __post_init__(self):
        object.__setattr__(self, "template_size", _pair(self.template_size))
        object.__setattr__(self, "search_size", _pair(self.search_size))
        self.validate()

    def validate(self) -> None:
        ints = ("embed_dim", "num_heads", "mlp_ratio", "patch_size")
        for name in ints:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.fe_layers < 0 or self.ai_layers < 0:
            raise ConfigError("layer counts must be non-negative")
        if self.fe_layers + self.ai_layers < 1:
            raise ConfigError("need at least one encoder layer")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        for label, (h, w) in (("template", self.template_size), ("search", self.search_size)):
            if h <= 0 or w <= 0 or h % self.patch_size or w % self.patch_size:
                raise ConfigError(f"{label} size {h}x{w} not a positive multiple of patch {self.patch_size}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def hidden_dim(self) -> int:
        return self.mlp_ratio * self.embed_dim

    @property
    def depth(self) -> int:
        return self.fe_layers + self.ai_layers

    @property
    def template_grid(self) -> tuple[int, int]:
        return (self.template_size[0] // self.patch_size, self.template_size[1] // self.patch_size)

    @property
    def search_grid(self) -> tuple[int, int]:
        return (self.search_size[0] // self.patch_size, self.search_size[1] // self.patch_size)

    @property
    def num_template_tokens(self) -> int:
        gh, gw = self.template_grid
        return gh * gw

    @property
    def num_search_tokens(self) -> int:
        gh, gw = self.search_grid
        return gh * gw

    @property
    def patch_dim(self) -> int:
        return 3 * self.patch_size ** 2

    def with_layers(self, fe: int, ai: int) -> "ModelConfig":
        return replace(self, fe_layers=fe, ai_layers=ai)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["template_size"] = list(self.template_size)
        d["search_size"] = list(self.search_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**known)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


# dims used by the fast test / verify paths: 16 search tokens, 4 template tokens
TOY = dict(embed_dim=64, num_heads=4, mlp_ratio=4, patch_size=16,
           template_size=(32, 32), search_size=(64, 64))


def variant_config(name: str, toy: bool = False, **overrides) -> ModelConfig:
    """Preset configuration for ``B9``/``B8``/``B6``/``B4``."""
    key = name.upper()
    if key not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
    fe, ai = VARIANTS[key]
    base = dict(TOY) if toy else {}
    base.update(fe_layers=fe, ai_layers=ai)
    base.update(overrides)
    return ModelConfig(**base)


def parse_config_text(text: str) -> ModelConfig:
    """Parse the flat ``key=value`` config format (``#`` starts a comment)."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in ("template_size", "search_size"):
            try:
                values[key] = _pair(val)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad size {val!r}") from exc
        else:
            try:
                values[key] = int(val)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {key} must be an integer, got {val!r}") from exc
    return ModelConfig.from_dict(values)


def load_config(path) -> ModelConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def format_config(config: ModelConfig) -> str:
    lines = []
    for key, val in config.to_dict().items():
        if isinstance(val, list):
            val = f"{val[0]}x{val[1]}"
        lines.append(f"{key}={val}")
    return "\n".join(lines) + "\n"
