"""LiteTrack: layer-pruned ViT tracking with asynchronous template caching."""
from .boxes import BBox
from .config import ModelConfig, variant_config
from .encoder import LiteTrackEncoder, attention_probe, extract_template, forward_search
from .exceptions import (ConfigError, DimensionError, InputError, InvariantError,
                         LiteTrackError, NumericError)
from .head import ScoreMaps, decode_box, head_forward
from .tensor import MacCounter
from .tracker import LiteTracker, init_track, track_frame
from .weights import WeightStore, init_weights, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "BBox", "ModelConfig", "variant_config", "LiteTrackEncoder", "attention_probe",
    "extract_template", "forward_search", "ConfigError", "DimensionError", "InputError",
    "InvariantError", "LiteTrackError", "NumericError", "ScoreMaps", "decode_box",
    "head_forward", "MacCounter", "LiteTracker", "init_track", "track_frame", "WeightStore",
    "init_weights", "load_weights", "save_weights",
]
