import math

import numpy as np
import pytest

from litetrack.config import ABLATION_ROWS, VARIANTS, ModelConfig, variant_config
from litetrack.cost import (asym_layer_macs, bench_latency, count_macs, count_params, format_reported_comparison,
                            head_costs, layer_params, measure_macs, reported_comparison, pruning_sweep,
                            self_layer_macs, to_csv)
from litetrack.sequence import synthetic_frames
from litetrack.verify import random_toy_config
from litetrack.weights import init_weights

TINY = ModelConfig(embed_dim=8, num_heads=2, mlp_ratio=4, patch_size=4, template_size=8,
                   search_size=16, fe_layers=1, ai_layers=0)


def test_tiny_params_by_hand():
    c, p = 8, 4
    layer = 4 * (c * c + c) + (c * 4 * c + 4 * c) + (4 * c * c + c) + 4 * c
    total = (3 * p * p * c + c) + (4 + 16) * c + layer + 2 * c
    assert layer_params(TINY) == layer
    assert count_params(TINY, include_head=False).total_params == total
    assert init_weights(TINY, seed=0, include_head=False).num_elements() == total


def test_tiny_layer_macs_by_hand():
    n, c, hid = 16, 8, 32
    assert self_layer_macs(TINY, n) == 3 * n * c * c + 2 * n * n * c + n * c * c + 2 * n * c * hid
    assert asym_layer_macs(TINY, n, 0) == self_layer_macs(TINY, n)


def test_head_costs_by_hand():
    cfg = variant_config("B4", toy=True)  # C=64, S=4
    chans = [64, 32, 16, 8]
    per_branch = sum(16 * 9 * a * b for a, b in zip(chans, chans[1:])) + 16 * 9 * 8 * 1
    macs = 3 * per_branch + 16 * 9 * 8 * (2 - 1) * 2
    assert head_costs(cfg)[1] == macs


def test_layers_add_up():
    cfg = variant_config("B9", toy=True)
    rep = count_macs(cfg)
    nx, nz = cfg.num_search_tokens, cfg.num_template_tokens
    assert rep.stage_macs["fe"] == 6 * self_layer_macs(cfg, nx)
    assert rep.stage_macs["ai"] == 3 * asym_layer_macs(cfg, nx, nz)
    assert sum(l.macs for l in rep.layers) == rep.stage_macs["fe"] + rep.stage_macs["ai"]


@pytest.mark.parametrize("name", list(VARIANTS))
@pytest.mark.parametrize("with_template", [False, True])
def test_oracle_presets(name, with_template):
    cfg = variant_config(name, toy=True)
    w = init_weights(cfg, seed=2)
    measured = measure_macs(cfg, w, with_template)
    rep = count_macs(cfg, with_template)
    assert rep.total_macs == measured.total
    for stage, macs in rep.stage_macs.items():
        assert measured.by_stage.get(stage, 0) == macs, stage
    assert count_params(cfg).total_params == w.num_elements()


def test_oracle_random_configs():
    rng = np.random.default_rng(77)
    for _ in range(20):
        cfg = random_toy_config(rng)
        w = init_weights(cfg, seed=0)
        for flag in (False, True):
            assert count_macs(cfg, flag).total_macs == measure_macs(cfg, w, flag).total, cfg
        assert count_params(cfg).total_params == w.num_elements()


def test_template_pass_difference():
    cfg = variant_config("B8", toy=True)
    diff = count_macs(cfg, True).total_macs - count_macs(cfg, False).total_macs
    nz = cfg.num_template_tokens
    expected = nz * cfg.patch_dim * cfg.embed_dim + cfg.depth * self_layer_macs(cfg, nz)
    assert diff == expected == measure_macs(cfg, include_template_pass=True).by_stage["template"]


def test_macs_do_not_depend_on_pixels_or_weights():
    cfg = variant_config("B4", toy=True)
    a = measure_macs(cfg, init_weights(cfg, seed=1), seed=1).total
    b = measure_macs(cfg, init_weights(cfg, seed=2), seed=9).total
    assert a == b


def test_full_dims_counts_follow_layer_order():
    totals = {n: count_macs(variant_config(n)).total_macs for n in VARIANTS}
    assert totals["B4"] < totals["B6"] < totals["B8"] < totals["B9"]
    params = {n: count_params(variant_config(n)).total_params for n in VARIANTS}
    assert params["B4"] < params["B6"] < params["B8"] < params["B9"]


def test_reported_comparison_reports(capsys):
    rows = reported_comparison()
    assert {r["variant"] for r in rows} == set(VARIANTS)
    text = format_reported_comparison(rows)
    print(text)
    assert "B9" in text


def test_sweep_rows_and_monotone_macs():
    base = variant_config("B4", toy=True).with_layers(8, 0)
    rows = pruning_sweep(base)
    assert [(r.total_layers, r.fe, r.ai) for r in rows] == [tuple(r) for r in ABLATION_ROWS]
    for a in rows:
        for b in rows:
            if a.total_layers > b.total_layers:
                assert a.macs > b.macs
        assert a.macs == count_macs(base.with_layers(a.fe, a.ai)).total_macs
        assert math.isnan(a.median_ms)


def test_sweep_callback_failure_is_isolated():
    base = variant_config("B4", toy=True).with_layers(8, 0)

    def cb(cfg):
        if cfg.ai_layers == 8:
            raise RuntimeError("boom")
        return cfg.fe_layers / cfg.depth

    rows = pruning_sweep(base, eval_callback=cb)
    failed = [r for r in rows if r.status != "ok"]
    assert len(failed) == 1 and failed[0].ai == 8 and "boom" in failed[0].status
    assert all(r.metric is not None for r in rows if r.status == "ok")


def test_sweep_rejects_bad_row():
    with pytest.raises(ValueError):
        pruning_sweep(variant_config("B4", toy=True), rows=[(4, 2, 1)])


def test_sweep_csv_columns():
    rows = pruning_sweep(variant_config("B4", toy=True).with_layers(8, 0))
    lines = to_csv(rows).splitlines()
    assert lines[0] == "variant,total_layers,fe,ai,params,macs,median_ms,p90_ms"
    assert len(lines) == len(ABLATION_ROWS) + 1


def test_bench_needs_30_runs(toy_b4):
    config, w = toy_b4
    with pytest.raises(ValueError):
        bench_latency(config, w, runs=29)


def test_bench_discards_warmup(toy_b4):
    config, w = toy_b4
    stamps = []

    # warmup calls last 1000 s on the fake clock, measured calls 1 s
    def timer():
        i = len(stamps)
        call = i // 2
        t = 0.0 if i % 2 == 0 else (1000.0 if call < 3 else 1.0)
        stamps.append(t)
        return t

    clip = synthetic_frames(4, size=128, seed=0)
    res = bench_latency(config, w, frames=clip, runs=30, warmup=3, timer=timer)
    assert res.runs == 30 and len(res.samples_ms) == 30
    assert res.median_ms == pytest.approx(1000.0) and res.p90_ms == pytest.approx(1000.0)
    assert len(stamps) == 66
