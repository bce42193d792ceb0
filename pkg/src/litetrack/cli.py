"""Command-line entry point: ``litetrack <subcommand> [options]``.

Exit codes: 0 success, 1 bad input or usage, 2 internal invariant failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ABLATION_ROWS, VARIANTS, load_config, variant_config
from .cost import (bench_latency, count_macs, format_reported_comparison, format_sweep, reported_comparison,
                   pruning_sweep, to_csv)
from .encoder import attention_probe
from .exceptions import InvariantError, LiteTrackError
from .sequence import list_frames, read_frame, read_gt, write_results
from .tracker import SEARCH_FACTOR, init_track, make_crop, track_frame
from .weights import init_weights, load_weights, save_weights



class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--variant", default="B6", choices=[*VARIANTS, "custom"],
                        help="layer preset; 'custom' needs --config")
    common.add_argument("--config", help="key=value model config file")
    common.add_argument("--weights", help="weight file (overrides --variant/--config)")
    common.add_argument("--seed", type=int, default=0, help="seed for generated weights and inputs")
    common.add_argument("--toy", action="store_true", help="small test dimensions instead of ViT-B")

    p = _Parser(prog="litetrack", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("track", parents=[common], help="track an image sequence")
    t.add_argument("--seq", required=True, help="directory of numbered frames")
    t.add_argument("--gt", help="first-frame box file (x,y,w,h); default <seq>/groundtruth.txt")
    t.add_argument("--out", required=True, help="results file, one line per frame")

    b = sub.add_parser("bench", parents=[common], help="per-frame latency of the variants")
    b.add_argument("--runs", type=int, default=30)
    b.add_argument("--warmup", type=int, default=3)
    b.add_argument("--frames", type=int, default=8, help="synthetic frames cycled during the run")
    b.add_argument("--all", action="store_true", help="bench B4, B6, B8 and B9")
    b.add_argument("--out", help="CSV output path")

    c = sub.add_parser("count", parents=[common], help="analytic parameter / MAC table")
    c.add_argument("--include-template-macs", action="store_true")
    c.add_argument("--out", help="CSV output path")

    s = sub.add_parser("sweep", parents=[common], help="FE/AI layer split sweep")
    s.add_argument("--runs", type=int, default=0, help="latency runs per row (0 skips timing, else >= 30)")
    s.add_argument("--warmup", type=int, default=3)
    s.add_argument("--include-template-macs", action="store_true")
    s.add_argument("--out", help="CSV output path")

    # --toy is accepted for symmetry; the suite always runs at toy dims
    sub.add_parser("verify", parents=[common], help="run the invariant self-checks")

    a = sub.add_parser("attn-dump", parents=[common], help="template-attention map of one AI layer")
    a.add_argument("--seq", required=True)
    a.add_argument("--gt")
    a.add_argument("--frame", type=int, default=1, help="frame index to probe (0-based)")
    a.add_argument("--layer", type=int, required=True, help="global 0-based layer index (must be AI)")
    a.add_argument("--out", required=True, help="output prefix; writes <out>.pgm and <out>.csv")

    g = sub.add_parser("gen-weights", parents=[common], help="write seeded random weights")
    g.add_argument("--out", required=True)
    return p


def _config(args):
    if args.variant == "custom":
        if not args.config:
            raise UsageError("--variant custom requires --config")
        return load_config(args.config)
    if args.config:
        return load_config(args.config)
    return variant_config(args.variant, toy=args.toy)


def _weights(args):
    if args.weights:
        return load_weights(args.weights)
    return init_weights(_config(args), seed=args.seed)


def _sequence(args):
    frames = list_frames(args.seq)
    gt = read_gt(args.gt or Path(args.seq) / "groundtruth.txt")
    return frames, gt


def cmd_track(args, out) -> int:
    weights = _weights(args)
    paths, gt = _sequence(args)
    state = init_track(read_frame(paths[0]), gt, weights.config, weights)
    rows = [(0, gt, 1.0)]
    for path in paths[1:]:
        box, score, state = track_frame(state, read_frame(path))
        rows.append((state.frame_index, box, score))
    write_results(args.out, rows)
    out(f"tracked {len(rows)} frames -> {args.out}")
    return 0


def cmd_gen_weights(args, out) -> int:
    weights = init_weights(_config(args), seed=args.seed)
    save_weights(weights, args.out)
    out(f"wrote {weights.num_elements():,} parameters -> {args.out}")
    return 0


def cmd_count(args, out) -> int:
    if args.weights:
        configs = [("custom", load_weights(args.weights).config)]
    elif args.variant == "custom" or args.config:
        configs = [("custom", _config(args))]
    else:
        configs = [(args.variant, variant_config(args.variant, toy=args.toy))]
    reports = [count_macs(cfg, args.include_template_macs, variant=name) for name, cfg in configs]
    for rep in reports:
        out(rep.table())
        _check_totals(rep)
    if not args.toy:
        out("")
        out("reported table comparison (report only):")
        out(format_reported_comparison(reported_comparison()))
    if args.out:
        Path(args.out).write_text(to_csv([(rep, None) for rep in reports]))
    return 0


def _check_totals(rep) -> None:
    if rep.stage_macs["fe"] + rep.stage_macs["ai"] != sum(l.macs for l in rep.layers):
        raise InvariantError("per-layer MACs do not add up to the stage totals")


def cmd_bench(args, out) -> int:
    from .sequence import synthetic_frames

    names = list(VARIANTS) if args.all else [args.variant]
    pairs = []
    for name in names:
        if name == "custom" or args.weights:
            weights = _weights(args)
            config = weights.config
        else:
            config = variant_config(name, toy=args.toy)
            weights = init_weights(config, seed=args.seed)
        side = max(config.search_size) * 2
        clip = synthetic_frames(max(args.frames, 2), size=side, box_side=max(side // 8, 2), seed=args.seed)
        res = bench_latency(config, weights, frames=clip, runs=args.runs, warmup=args.warmup, variant=name)
        out(f"{name:<8} median {res.median_ms:9.2f} ms  p90 {res.p90_ms:9.2f} ms  "
            f"runs={res.runs} warmup={res.warmup} threads={res.threads}  [{res.profile}]")
        pairs.append((count_macs(config, variant=name), res))
    if args.out:
        Path(args.out).write_text(to_csv(pairs))
    return 0


def cmd_sweep(args, out) -> int:
    max_total = max(r[0] for r in ABLATION_ROWS)
    base = _config(args).with_layers(max_total, 0)
    weights = init_weights(base, seed=args.seed) if args.runs else None
    rows = pruning_sweep(base, weights, runs=args.runs, warmup=args.warmup,
                         include_template_pass=args.include_template_macs)
    out(format_sweep(rows))
    if args.out:
        Path(args.out).write_text(to_csv(rows))
    return 0


def cmd_verify(args, out) -> int:
    from .verify import run_all

    if not run_all(seed=args.seed, out=out):
        raise InvariantError("verification suite failed")
    return 0


def write_pgm(path, probe: np.ndarray) -> None:
    """Binary graymap scaled so the map maximum becomes 255."""
    peak = float(probe.max())
    scaled = np.zeros(probe.shape) if peak <= 0 else probe.astype(np.float64) / peak * 255.0
    pix = np.clip(np.round(scaled), 0, 255).astype(np.uint8)
    h, w = pix.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + pix.tobytes())


def cmd_attn_dump(args, out) -> int:
    weights = _weights(args)
    config = weights.config
    valid = list(range(config.fe_layers, config.depth))
    if args.layer not in valid:
        raise UsageError(f"layer {args.layer} is not an interaction layer; valid layers: {valid}")
    paths, gt = _sequence(args)
    if not 0 <= args.frame < len(paths):
        raise UsageError(f"frame {args.frame} outside 0..{len(paths) - 1}")
    state = init_track(read_frame(paths[0]), gt, config, weights)
    for path in paths[1:args.frame]:
        _, _, state = track_frame(state, read_frame(path))
    search, _ = make_crop(read_frame(paths[args.frame]), state.prev_box, SEARCH_FACTOR, config.search_size)
    probe = attention_probe(search, state.template_cache.features, config, weights, args.layer)
    prefix = Path(args.out)
    write_pgm(prefix.with_suffix(".pgm"), probe)
    np.savetxt(prefix.with_suffix(".csv"), probe.astype(np.float64), delimiter=",", fmt="%.9g")
    out(f"layer {args.layer} attention map {probe.shape[0]}x{probe.shape[1]} -> {prefix}.pgm / {prefix}.csv")
    return 0


COMMANDS = {
    "track": cmd_track, "bench": cmd_bench, "count": cmd_count, "sweep": cmd_sweep,
    "verify": cmd_verify, "attn-dump": cmd_attn_dump, "gen-weights": cmd_gen_weights,
}


def run_cli(argv=None, out=print, err=None) -> int:
    err = err or (lambda msg: print(msg, file=sys.stderr))
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        err(str(exc))
        return 1
    except InvariantError as exc:
        err(f"invariant failure: {exc}")
        return 2
    except (LiteTrackError, OSError, IndexError, ValueError) as exc:
        err(f"error: {exc}")
        return 1
    except Exception as exc:  # noqa: BLE001 - anything else is a bug
        err(f"internal error: {type(exc).__name__}: {exc}")
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
