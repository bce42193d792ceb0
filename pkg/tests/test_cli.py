import numpy as np
import pytest

from litetrack.cli import run_cli
from litetrack.config import format_config, variant_config
from litetrack.sequence import read_results, write_synthetic_sequence
from litetrack.weights import init_weights, replace_weights, save_weights


def run(argv):
    out, err = [], []
    code = run_cli(argv, out=out.append, err=err.append)
    return code, "\n".join(out), "\n".join(err)


@pytest.fixture(scope="module")
def seq(tmp_path_factory):
    return write_synthetic_sequence(tmp_path_factory.mktemp("seq"), 6, size=96, seed=3)


def test_count_reports_layer_split():
    code, out, _ = run(["count", "--variant", "B9"])
    assert code == 0
    assert "FE=6" in out and "AI=3" in out
    assert "report only" in out


def test_count_writes_csv(tmp_path):
    path = tmp_path / "c.csv"
    code, _, _ = run(["count", "--variant", "B4", "--toy", "--out", str(path)])
    assert code == 0 and path.read_text().startswith("variant,total_layers")


def test_custom_variant_needs_config():
    code, _, err = run(["count", "--variant", "custom"])
    assert code == 1 and "--config" in err


def test_custom_config_file(tmp_path):
    cfg = tmp_path / "m.cfg"
    cfg.write_text(format_config(variant_config("B4", toy=True, fe_layers=1, ai_layers=1)))
    code, out, _ = run(["count", "--variant", "custom", "--config", str(cfg)])
    assert code == 0 and "FE=1" in out


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(["count", "--bogus"])
    assert code == 1 and "unrecognized" in err
    assert "usage" in capsys.readouterr().err


def test_gen_weights_reproducible(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    for p in (a, b):
        assert run(["gen-weights", "--toy", "--variant", "B6", "--seed", "4", "--out", str(p)])[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_verify_passes():
    code, out, _ = run(["verify", "--toy"])
    assert code == 0
    assert out.count("PASS") == 7 and "FAIL" not in out


def test_track_writes_one_line_per_frame(seq, tmp_path):
    out_path = tmp_path / "r.txt"
    code, _, _ = run(["track", "--toy", "--variant", "B4", "--seq", str(seq), "--out", str(out_path)])
    rows = read_results(out_path)
    assert code == 0 and len(rows) == 6
    assert [r[0] for r in rows] == list(range(6))


def test_track_missing_sequence(tmp_path):
    code, _, err = run(["track", "--toy", "--seq", str(tmp_path / "nope"), "--out", str(tmp_path / "r")])
    assert code == 1 and "does not exist" in err


def test_attn_dump_outputs(seq, tmp_path):
    prefix = tmp_path / "attn"
    code, _, _ = run(["attn-dump", "--toy", "--variant", "B4", "--seq", str(seq), "--layer", "2",
                      "--out", str(prefix)])
    assert code == 0
    grid = np.loadtxt(prefix.with_suffix(".csv"), delimiter=",")
    assert grid.shape == (4, 4) and np.all(grid >= 0) and np.all(grid <= 1)
    raw = prefix.with_suffix(".pgm").read_bytes()
    assert raw.startswith(b"P5\n4 4\n255\n") and max(raw[-16:]) == 255


def test_attn_dump_rejects_fe_layer(seq, tmp_path):
    code, _, err = run(["attn-dump", "--toy", "--variant", "B4", "--seq", str(seq), "--layer", "0",
                        "--out", str(tmp_path / "a")])
    assert code == 1 and "valid layers: [2, 3]" in err


def test_attn_dump_uniform_attention(seq, tmp_path):
    config = variant_config("B4", toy=True)
    w = init_weights(config, seed=0)
    # zero queries give equal logits, so every row spreads evenly over all keys
    zeros = {f"blocks__{i}__attn__q__{p}": np.zeros_like(w[f"blocks.{i}.attn.q.{p}"])
             for i in range(config.depth) for p in ("weight", "bias")}
    wpath = tmp_path / "w.bin"
    save_weights(replace_weights(w, **zeros), wpath)
    prefix = tmp_path / "u"
    code, _, _ = run(["attn-dump", "--weights", str(wpath), "--seq", str(seq), "--layer", "3",
                      "--out", str(prefix)])
    grid = np.loadtxt(prefix.with_suffix(".csv"), delimiter=",")
    assert code == 0
    np.testing.assert_allclose(grid, 1 / 20, atol=1e-6)


def test_sweep_prints_all_rows():
    code, out, _ = run(["sweep", "--toy"])
    assert code == 0 and out.count("L8-") == 3 and out.count("L4-") == 2


def test_bench_rejects_short_runs():
    code, _, err = run(["bench", "--toy", "--runs", "5"])
    assert code == 1 and "30" in err
