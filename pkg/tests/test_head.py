import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from litetrack.exceptions import DimensionError
from litetrack.head import ScoreMaps, conv3x3, decode_box, head_forward
from litetrack.tracker import hanning2d
from litetrack.weights import replace_weights


def _zero_head(weights):
    updates = {k.replace(".", "__"): np.zeros_like(weights[k]) for k in weights
               if k.startswith("head.") and not k.endswith("norm.weight")}
    return replace_weights(weights, **updates)


def test_conv3x3_against_direct_loop(rng):
    x = rng.standard_normal((3, 5, 6)).astype(np.float32)
    wt = rng.standard_normal((2, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(2).astype(np.float32)
    pad = np.pad(x.astype(np.float64), ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 5, 6))
    for o in range(2):
        for i in range(5):
            for j in range(6):
                ref[o, i, j] = (pad[:, i:i + 3, j:j + 3] * wt[o]).sum() + b[o]
    np.testing.assert_allclose(conv3x3(x, wt, b), ref, atol=1e-5)


def test_head_output_extents(toy_b4, rng):
    _, w = toy_b4
    maps = head_forward(rng.standard_normal((16, 64)).astype(np.float32), w)
    assert maps.center.shape == (4, 4)
    assert maps.offset.shape == (2, 4, 4) and maps.size.shape == (2, 4, 4)
    assert 0 < maps.center.min() and maps.center.max() < 1
    assert maps.size.min() > 0


def test_head_full_grid_is_16(rng):
    from litetrack.config import ModelConfig
    from litetrack.weights import init_weights
    config = ModelConfig(embed_dim=32, num_heads=4, fe_layers=1, ai_layers=0)
    w = init_weights(config, seed=0)
    assert head_forward(rng.standard_normal((256, 32)).astype(np.float32), w).center.shape == (16, 16)


def test_zero_head_gives_half(toy_b4, rng):
    _, w = toy_b4
    maps = head_forward(rng.standard_normal((16, 64)).astype(np.float32), _zero_head(w))
    assert np.all(maps.center == 0.5)


def test_head_rejects_non_square(toy_b4):
    _, w = toy_b4
    with pytest.raises(DimensionError):
        head_forward(np.zeros((15, 64), np.float32), w)


def _maps(center, s=16, off=0.5, size=0.25):
    return ScoreMaps(center=center, offset=np.full((2, s, s), off), size=np.full((2, s, s), size))


def test_decode_one_hot():
    center = np.zeros((16, 16))
    center[7, 7] = 1.0
    box, score, cell = decode_box(_maps(center))
    assert cell == (7, 7) and score == 1.0
    assert (box.cx, box.cy, box.w, box.h) == (0.46875, 0.46875, 0.25, 0.25)


def test_decode_uniform_with_hanning_picks_window_peak():
    s = 16
    pen = hanning2d(s)
    _, _, cell = decode_box(_maps(np.full((s, s), 0.3)), pen)
    # two-by-two plateau at the center of an even window; smallest flat index wins
    assert cell == divmod(int(np.argmax(pen)), s) == (7, 7)


def test_decode_ones_penalty_is_identity(rng):
    center = rng.random((16, 16))
    assert decode_box(_maps(center)) == decode_box(_maps(center), np.ones((16, 16)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_decode_invariant_to_positive_scale(seed, k):
    rng = np.random.default_rng(seed)
    maps = ScoreMaps(rng.random((8, 8)), rng.random((2, 8, 8)) * 0.999, rng.random((2, 8, 8)) * 0.9 + 0.05)
    scaled = ScoreMaps(maps.center * k, maps.offset, maps.size)
    pen = hanning2d(8)
    a, _, ca = decode_box(maps, pen)
    b, _, cb = decode_box(scaled, pen)
    assert ca == cb and a == b


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_decoded_box_ranges(seed):
    rng = np.random.default_rng(seed)
    from litetrack.config import variant_config
    from litetrack.weights import init_weights
    config = variant_config("B4", toy=True)
    w = init_weights(config, seed=seed % 7)
    maps = head_forward((rng.standard_normal((16, 64)) * 30).astype(np.float32), w)
    box, _, _ = decode_box(maps, hanning2d(4))
    assert 0 <= box.cx < 1 and 0 <= box.cy < 1
    assert 0 < box.w < 1 and 0 < box.h < 1
