"""Analytic parameter / MAC counts, the instrumented cross-check, latency and pruning sweeps.

MACs count matrix-product multiply-accumulates only (projections, attention
scores and mixing, MLP, patch projection, head convolutions).  Softmax,
normalization, activations and elementwise adds are not counted.
"""
from __future__ import annotations

import csv
import io
import math
import platform
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .config import ABLATION_ROWS, REPORTED_TABLE, VARIANTS, ModelConfig, variant_config
from .encoder import extract_template, forward_search
from .head import head_forward
from .sequence import synthetic_frames
from .tensor import MacCounter
from .weights import HEAD_BRANCHES, HEAD_STAGES, WeightStore, head_channels, init_weights, prune_weights

STAGES = ("patch_embed", "fe", "ai", "norm", "head", "template")
CSV_COLUMNS = ["variant", "total_layers", "fe", "ai", "params", "macs", "median_ms", "p90_ms"]


@dataclass
class LayerCost:
    index: int
    stage: str
    params: int
    macs: int


@dataclass
class CostReport:
    """Exact integer parameter and MAC counts per stage and per encoder layer.

    ``layers`` covers the search-path encoder layers; their sums equal the
    ``fe`` and ``ai`` stage entries.
    """

    variant: str
    include_template_pass: bool
    config: ModelConfig
    stage_params: dict = field(default_factory=dict)
    stage_macs: dict = field(default_factory=dict)
    layers: list = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(self.stage_params.values())

    @property
    def total_macs(self) -> int:
        return sum(self.stage_macs.values())

    def table(self) -> str:
        c = self.config
        lines = [
            f"variant {self.variant}: FE={c.fe_layers} AI={c.ai_layers} C={c.embed_dim} "
            f"heads={c.num_heads} template={c.template_size[0]}x{c.template_size[1]} "
            f"search={c.search_size[0]}x{c.search_size[1]} template_pass={'yes' if self.include_template_pass else 'no'}",
            f"{'stage':<12}{'params':>16}{'macs':>18}",
        ]
        for stage in STAGES:
            if stage in self.stage_params or stage in self.stage_macs:
                lines.append(f"{stage:<12}{self.stage_params.get(stage, 0):>16,}{self.stage_macs.get(stage, 0):>18,}")
        lines.append(f"{'total':<12}{self.total_params:>16,}{self.total_macs:>18,}")
        lines.append(f"{'':<12}{self.total_params / 1e6:>15.2f}M{self.total_macs / 1e9:>17.2f}G")
        return "\n".join(lines)


def layer_params(config: ModelConfig) -> int:
    c, hid = config.embed_dim, config.hidden_dim
    attn = 4 * (c * c + c)
    mlp = c * hid + hid + hid * c + c
    norms = 4 * c
    return attn + mlp + norms


def self_layer_macs(config: ModelConfig, n: int) -> int:
    """One self-attention block on ``n`` tokens."""
    c, hid = config.embed_dim, config.hidden_dim
    return 3 * n * c * c + 2 * n * n * c + n * c * c + 2 * n * c * hid


def asym_layer_macs(config: ModelConfig, nx: int, nz: int) -> int:
    """One interaction block: ``nx`` queries over ``nx + nz`` keys / values."""
    c, hid = config.embed_dim, config.hidden_dim
    return nx * c * c + 2 * (nx + nz) * c * c + 2 * nx * (nx + nz) * c + nx * c * c + 2 * nx * c * hid


def head_costs(config: ModelConfig) -> tuple[int, int]:
    s2 = config.num_search_tokens
    params = macs = 0
    for _, out in HEAD_BRANCHES:
        widths = head_channels(config, out)
        for j in range(HEAD_STAGES):
            cin, cout = widths[j], widths[j + 1]
            params += cout * cin * 9 + cout
            if j < HEAD_STAGES - 1:
                params += 2 * cout
            macs += s2 * 9 * cin * cout
    return params, macs


def _report(config: ModelConfig, include_template_pass: bool, include_head: bool, variant: str) -> CostReport:
    c, nx, nz = config.embed_dim, config.num_search_tokens, config.num_template_tokens
    rep = CostReport(variant=variant, include_template_pass=include_template_pass, config=config)
    rep.stage_params["patch_embed"] = config.patch_dim * c + c + nz * c + nx * c
    rep.stage_macs["patch_embed"] = nx * config.patch_dim * c
    per_layer = layer_params(config)
    for i in range(config.depth):
        stage = "fe" if i < config.fe_layers else "ai"
        macs = self_layer_macs(config, nx) if stage == "fe" else asym_layer_macs(config, nx, nz)
        rep.layers.append(LayerCost(i, stage, per_layer, macs))
    for stage in ("fe", "ai"):
        rep.stage_params[stage] = sum(l.params for l in rep.layers if l.stage == stage)
        rep.stage_macs[stage] = sum(l.macs for l in rep.layers if l.stage == stage)
    rep.stage_params["norm"] = 2 * c
    rep.stage_macs["norm"] = 0
    if include_head:
        rep.stage_params["head"], rep.stage_macs["head"] = head_costs(config)
    if include_template_pass:
        rep.stage_params["template"] = 0
        rep.stage_macs["template"] = nz * config.patch_dim * c + config.depth * self_layer_macs(config, nz)
    return rep


def count_params(config: ModelConfig, include_head: bool = True, variant: str = "custom") -> CostReport:
    """Closed-form parameter count (the report also carries per-frame MACs)."""
    return _report(config, False, include_head, variant)


def count_macs(config: ModelConfig, include_template_pass: bool = False, include_head: bool = True,
               variant: str = "custom") -> CostReport:
    """Closed-form MACs of one tracked frame, optionally plus the one-off template pass."""
    return _report(config, include_template_pass, include_head, variant)


def measure_macs(config: ModelConfig, weights: WeightStore | None = None, include_template_pass: bool = False,
                 seed: int = 0) -> MacCounter:
    """Run one instrumented forward pass and return its counter."""
    if weights is None:
        weights = init_weights(config, seed=seed, include_head=True)
    rng = np.random.default_rng(seed)
    template = rng.random((3, *config.template_size), dtype=np.float32)
    search = rng.random((3, *config.search_size), dtype=np.float32)
    features = extract_template(template, config, weights)
    counter = MacCounter()
    if include_template_pass:
        features = extract_template(template, config, weights, counter)
    tokens = forward_search(search, features, config, weights, counter)
    if weights.include_head:
        head_forward(tokens, weights, counter)
    return counter


def reported_comparison(toy: bool = False) -> list[dict]:
    """Analytic counts at ViT-B dims next to the reported table (report only)."""
    rows = []
    for name in VARIANTS:
        config = variant_config(name, toy=toy)
        per_frame = count_macs(config, False, variant=name)
        with_template = count_macs(config, True, variant=name)
        ref = REPORTED_TABLE[name]
        macs_g = per_frame.total_macs / 1e9
        params_m = per_frame.total_params / 1e6
        rows.append({
            "variant": name, "fe": config.fe_layers, "ai": config.ai_layers,
            "macs_g": macs_g, "macs_with_template_g": with_template.total_macs / 1e9,
            "reported_macs_g": ref["macs_g"], "macs_rel_diff": (macs_g - ref["macs_g"]) / ref["macs_g"],
            "params_m": params_m, "reported_params_m": ref["params_m"],
            "params_rel_diff": (params_m - ref["params_m"]) / ref["params_m"],
        })
    return rows


def format_reported_comparison(rows: list[dict]) -> str:
    head = (f"{'variant':<8}{'FE':>4}{'AI':>4}{'MACs(G)':>10}{'+tmpl(G)':>10}{'reported':>10}{'rel':>9}"
            f"{'Params(M)':>11}{'reported':>10}{'rel':>9}")
    lines = [head]
    for r in rows:
        lines.append(
            f"{r['variant']:<8}{r['fe']:>4}{r['ai']:>4}{r['macs_g']:>10.2f}{r['macs_with_template_g']:>10.2f}"
            f"{r['reported_macs_g']:>10.2f}{r['macs_rel_diff']:>+9.1%}{r['params_m']:>11.2f}"
            f"{r['reported_params_m']:>10.2f}{r['params_rel_diff']:>+9.1%}"
        )
    return "\n".join(lines)


@dataclass
class BenchResult:
    variant: str
    median_ms: float
    p90_ms: float
    runs: int
    warmup: int
    threads: int
    profile: str
    samples_ms: list = field(default_factory=list, repr=False)


def build_profile() -> str:
    return f"python {platform.python_version()} numpy {np.__version__} {platform.machine()}"


def bench_latency(config: ModelConfig, weights: WeightStore, frames=None, runs: int = 30, warmup: int = 3,
                  threads: int = 1, timer=time.perf_counter, variant: str = "custom", seed: int = 0) -> BenchResult:
    """Time ``track_frame`` over ``warmup + runs`` calls; warmup calls are discarded."""
    from .tracker import init_track, track_frame

    if runs < 30:
        raise ValueError(f"need at least 30 measured runs, got {runs}")
    if frames is None:
        side = max(config.search_size) * 2
        frames, box = synthetic_frames(8, size=side, box_side=max(side // 8, 2), seed=seed)
    else:
        frames, box = frames
    samples = []
    with threadpool_limits(limits=threads):
        state = init_track(frames[0], box, config, weights)
        for i in range(warmup + runs):
            frame = frames[1 + i % (len(frames) - 1)] if len(frames) > 1 else frames[0]
            t0 = timer()
            _, _, state = track_frame(state, frame)
            t1 = timer()
            if i >= warmup:
                samples.append((t1 - t0) * 1e3)
    return BenchResult(
        variant=variant, median_ms=statistics.median(samples),
        p90_ms=float(np.percentile(samples, 90)), runs=runs, warmup=warmup,
        threads=threads, profile=build_profile(), samples_ms=samples,
    )


@dataclass
class SweepRow:
    variant: str
    total_layers: int
    fe: int
    ai: int
    params: int
    macs: int
    median_ms: float = math.nan
    p90_ms: float = math.nan
    metric: float | None = None
    status: str = "ok"

    def csv_row(self) -> list:
        return [self.variant, self.total_layers, self.fe, self.ai, self.params, self.macs,
                _fmt_ms(self.median_ms), _fmt_ms(self.p90_ms)]


def _fmt_ms(v: float) -> str:
    return "" if math.isnan(v) else f"{v:.3f}"


def pruning_sweep(base_config: ModelConfig, weights: WeightStore | None = None, eval_callback=None,
                  rows=None, runs: int = 0, warmup: int = 3, include_template_pass: bool = False) -> list[SweepRow]:
    """Evaluate FE/AI splits obtained by dropping the top layers of ``weights``.

    ``rows`` are ``(total, fe, ai)`` triples, defaulting to the FE/AI ratio
    ablation.  Latency is measured only when ``runs > 0``.  A failing callback
    marks its row failed and the sweep moves on.
    """
    rows = ABLATION_ROWS if rows is None else rows
    out = []
    for total, fe, ai in rows:
        if fe + ai != total:
            raise ValueError(f"row ({total}, {fe}, {ai}) does not add up")
        config = base_config.with_layers(fe, ai)
        include_head = weights.include_head if weights is not None else True
        rep = count_macs(config, include_template_pass, include_head)
        row = SweepRow(f"L{total}-{fe}+{ai}", total, fe, ai, rep.total_params, rep.total_macs)
        if runs > 0:
            if weights is None:
                raise ValueError("latency measurement needs base weights")
            pruned = prune_weights(weights, config)
            res = bench_latency(config, pruned, runs=runs, warmup=warmup, variant=row.variant)
            row.median_ms, row.p90_ms = res.median_ms, res.p90_ms
        if eval_callback is not None:
            try:
                row.metric = float(eval_callback(config))
            except Exception as exc:  # noqa: BLE001 - a bad row must not stop the sweep
                row.status = f"failed: {type(exc).__name__}: {exc}"
        out.append(row)
    return out


def to_csv(rows: list) -> str:
    """CSV text for sweep rows or ``(report, bench)`` pairs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        if isinstance(r, SweepRow):
            w.writerow(r.csv_row())
        else:
            rep, bench = r
            c = rep.config
            w.writerow([rep.variant, c.depth, c.fe_layers, c.ai_layers, rep.total_params, rep.total_macs,
                        _fmt_ms(bench.median_ms) if bench else "", _fmt_ms(bench.p90_ms) if bench else ""])
    return buf.getvalue()


def format_sweep(rows: list[SweepRow]) -> str:
    lines = [f"{'variant':<12}{'total':>6}{'FE':>4}{'AI':>4}{'params':>14}{'macs':>16}{'median_ms':>11}"
             f"{'p90_ms':>10}{'metric':>12}  status"]
    for r in rows:
        metric = "" if r.metric is None else f"{r.metric:.6g}"
        lines.append(f"{r.variant:<12}{r.total_layers:>6}{r.fe:>4}{r.ai:>4}{r.params:>14,}{r.macs:>16,}"
                     f"{_fmt_ms(r.median_ms):>11}{_fmt_ms(r.p90_ms):>10}{metric:>12}  {r.status}")
    return "\n".join(lines)
