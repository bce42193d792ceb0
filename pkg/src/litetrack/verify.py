"""Self-check suite run by ``litetrack verify``.

Each check returns ``(passed, detail)``.  Everything runs at toy dimensions
and finishes in a few seconds.
"""
from __future__ import annotations

import time

import numpy as np

from .boxes import BBox
from .config import ModelConfig, variant_config, VARIANTS
from .cost import count_macs, count_params, measure_macs
from .encoder import TokenSeq, asym_block, attention_weights, extract_template, self_block
from .head import ScoreMaps
from .objective import LossConfig, box_at, giou, gt_cell, loss_grad, total_loss
from .sequence import synthetic_frames
from .tensor import MacCounter, patchify, softmax_rows, unpatchify
from .tracker import TEMPLATE_FACTOR, hanning2d, init_track, make_crop, track_frame
from .weights import init_weights


def slice_config(fe=0, ai=1) -> ModelConfig:
    """C=64, 4 heads, 16 search tokens, 4 template tokens."""
    return ModelConfig(embed_dim=64, num_heads=4, mlp_ratio=4, patch_size=16,
                       template_size=(32, 32), search_size=(64, 64), fe_layers=fe, ai_layers=ai)


def check_slice_equivalence(trials: int = 20, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(trials):
        config = slice_config()
        w = init_weights(config, seed=int(rng.integers(2**31)), include_head=False)
        x = rng.standard_normal((16, 64)).astype(np.float32)
        z = rng.standard_normal((4, 64)).astype(np.float32)
        lw = w.layer(0)
        out = asym_block(TokenSeq(x, "search"), TokenSeq(z, "template"), lw).tokens
        joint = self_block(TokenSeq(np.concatenate([x, z]), "joint"), lw).tokens[:16]
        worst = max(worst, float(np.abs(out - joint).max()))
    return worst <= 1e-6, f"max abs diff {worst:.2e} over {trials} trials"


def check_cache_soundness(frames: int = 5, seed: int = 0):
    config = variant_config("B4", toy=True)
    weights = init_weights(config, seed=seed)
    clip, box = synthetic_frames(frames + 1, size=128, box_side=16, seed=seed)
    template, _ = make_crop(clip[0], box, TEMPLATE_FACTOR, config.template_size)
    cached = init_track(clip[0], box, config, weights)
    ref = cached
    digest = cached.template_cache.digest()
    worst = 0.0
    for frame in clip[1:]:
        b1, s1, cached = track_frame(cached, frame)
        fresh = extract_template(template, config, weights)
        b2, s2, ref = track_frame(ref, frame, template_features=fresh)
        worst = max(worst, max(abs(a - b) for a, b in zip(b1.to_xyxy() + (s1,), b2.to_xyxy() + (s2,))))
    ok = worst <= 1e-6 and cached.template_cache.digest() == digest
    return ok, f"max abs diff {worst:.2e}, cache digest unchanged={cached.template_cache.digest() == digest}"


def random_toy_config(rng) -> ModelConfig:
    heads = int(rng.choice([1, 2, 4]))
    c = 8 * heads * int(rng.integers(1, 3))
    patch = int(rng.choice([4, 8]))
    s = int(rng.integers(2, 5))
    zt = int(rng.integers(1, 4))
    fe = int(rng.integers(0, 3))
    ai = int(rng.integers(0 if fe else 1, 3))
    return ModelConfig(embed_dim=c, num_heads=heads, mlp_ratio=int(rng.integers(1, 5)), patch_size=patch,
                       template_size=(zt * patch, zt * patch), search_size=(s * patch, s * patch),
                       fe_layers=fe, ai_layers=ai)


def check_cost_oracle(random_configs: int = 5, seed: int = 0):
    rng = np.random.default_rng(seed)
    configs = [variant_config(v, toy=True) for v in VARIANTS]
    configs += [random_toy_config(rng) for _ in range(random_configs)]
    bad = []
    for cfg in configs:
        weights = init_weights(cfg, seed=1)
        for flag in (False, True):
            if count_macs(cfg, flag).total_macs != measure_macs(cfg, weights, flag).total:
                bad.append((cfg, flag))
        if count_params(cfg).total_params != weights.num_elements():
            bad.append((cfg, "params"))
    return not bad, f"{len(configs)} configs, {len(bad)} mismatches"


def kink_margin(maps: ScoreMaps, gt: BBox) -> float:
    """Distance of the assigned box from the nearest L1 / GIoU non-differentiable point."""
    p = np.array(box_at(maps, gt_cell(gt, maps.grid)).to_xyxy())
    q = np.array(gt.to_xyxy())
    gaps = [*(p - q), p[2] - q[0], q[2] - p[0], p[3] - q[1], q[3] - p[1]]
    return float(np.abs(gaps).min())


def random_maps(rng, s: int, center_range=(0.1, 0.9), margin: float = 1e-3) -> tuple[ScoreMaps, BBox]:
    """Random head outputs and target, resampled until no kink lies within ``margin``.

    A step of 1e-3 on an offset / size entry moves a box edge by at most 5e-4,
    so the default margin keeps central differences on one smooth piece.
    """
    while True:
        maps = ScoreMaps(center=rng.uniform(*center_range, (s, s)),
                         offset=rng.uniform(0.05, 0.95, (2, s, s)),
                         size=rng.uniform(0.1, 0.5, (2, s, s)))
        gt = BBox(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5))
        if kink_margin(maps, gt) >= margin:
            return maps, gt


def numeric_grad(maps: ScoreMaps, gt: BBox, config: LossConfig, step: float = 1e-3) -> ScoreMaps:
    out = {}
    for name in ("center", "offset", "size"):
        base = getattr(maps, name)
        g = np.zeros(base.shape)
        for idx in np.ndindex(base.shape):
            vals = []
            for sign in (1, -1):
                arr = base.copy()
                arr[idx] += sign * step
                m = ScoreMaps(**{**maps.__dict__, name: arr})
                vals.append(total_loss(m, gt, config).total)
            g[idx] = (vals[0] - vals[1]) / (2 * step)
        out[name] = g
    return ScoreMaps(**out)


def grad_rel_error(a: ScoreMaps, b: ScoreMaps) -> float:
    va = np.concatenate([a.center.ravel(), a.offset.ravel(), a.size.ravel()])
    vb = np.concatenate([b.center.ravel(), b.offset.ravel(), b.size.ravel()])
    return float(np.linalg.norm(va - vb) / max(np.linalg.norm(vb), 1e-12))


def check_gradients(instances: int = 10, seed: int = 0):
    rng = np.random.default_rng(seed)
    cfg = LossConfig()
    worst = max(grad_rel_error(loss_grad(m, g, cfg), numeric_grad(m, g, cfg))
                for m, g in (random_maps(rng, 8) for _ in range(instances)))
    return worst <= 1e-4, f"worst relative error {worst:.2e} over {instances} instances"


def check_loss_identities(pairs: int = 2000, seed: int = 0):
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(pairs):
        a = BBox(*rng.uniform(0, 1, 2), *rng.uniform(0.01, 1, 2))
        b = BBox(*rng.uniform(0, 1, 2), *rng.uniform(0.01, 1, 2))
        g = giou(a, b)
        ok &= -1.0 <= g <= 1.0 and abs(g - giou(b, a)) < 1e-12 and g < 1.0 and giou(a, a) == 1.0
    maps, gt = random_maps(rng, 8)
    br = total_loss(maps, gt)
    ok &= br.total == br.focal + 2.0 * br.giou + 5.0 * br.l1 and br.focal >= 0
    return bool(ok), f"{pairs} random box pairs, composition with lambda_G=2, lambda_l=5"


def check_numeric_invariants(seed: int = 0):
    rng = np.random.default_rng(seed)
    sm = softmax_rows(rng.uniform(-50, 50, (32, 40)).astype(np.float32))
    soft_ok = np.abs(sm.astype(np.float64).sum(axis=1) - 1).max() <= 1e-6
    config = variant_config("B6", toy=True)
    weights = init_weights(config, seed=seed, include_head=False)
    z = extract_template(rng.random((3, 32, 32), dtype=np.float32), config, weights)
    attn = attention_weights(rng.random((3, 64, 64), dtype=np.float32), z, config, weights, config.fe_layers)
    probe_ok = np.abs(attn.astype(np.float64).sum(axis=-1) - 1).max() <= 1e-6
    hann_ok = np.array_equal(hanning2d(3), np.array([[0, 0, 0], [0, 1, 0], [0, 0, 0]], dtype=np.float32))
    img = rng.random((3, 64, 48), dtype=np.float32)
    patch_ok = np.array_equal(unpatchify(patchify(img, 16), 16, 64, 48), img)
    ok = bool(soft_ok and probe_ok and hann_ok and patch_ok)
    return ok, f"softmax={soft_ok} attention rows={probe_ok} hanning={hann_ok} patchify={patch_ok}"


def check_layer_counts(seed: int = 0):
    bad = []
    for name, (fe, ai) in VARIANTS.items():
        config = variant_config(name, toy=True)
        counter = MacCounter()
        measure = measure_macs(config, init_weights(config, seed=seed), include_template_pass=True)
        counter += measure
        if counter.block_counts("template") != (fe + ai, 0) or counter.block_counts("search") != (fe, ai):
            bad.append(name)
    return not bad, f"variants with wrong block counts: {bad or 'none'}"


CHECKS = [
    ("slice-equivalence", check_slice_equivalence),
    ("cache-soundness", check_cache_soundness),
    ("cost-oracle", check_cost_oracle),
    ("gradient-check", check_gradients),
    ("loss-identities", check_loss_identities),
    ("numeric-invariants", check_numeric_invariants),
    ("layer-counts", check_layer_counts),
]


def run_all(seed: int = 0, out=print) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn(seed=seed)
        except Exception as exc:  # noqa: BLE001 - report and keep going
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        out(f"{'PASS' if ok else 'FAIL'}  {name:<20} {detail} ({time.perf_counter() - t0:.2f}s)")
        all_ok &= ok
    return all_ok
