import json

import numpy as np
import pytest

from bitdiff.cli import main
from bitdiff.diffusion import load_samples


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


def test_analyze_bundled_totals(capsys):
    code, r, _ = run(capsys, "analyze")
    assert code == 0
    assert abs(r["totals"]["ops"] - 1.82e9) <= 0.01e9
    assert abs(r["savings"]["ops_ratio"] - 52.7) <= 0.1
    assert abs(r["savings"]["size_ratio"] - 28.0) <= 0.1


def test_analyze_toy_preset_matches_hand_count(capsys):
    code, r, _ = run(capsys, "analyze", "--preset", "toy", "--size", "8")
    assert code == 0
    assert r["totals"]["bops"] == 107008 and r["totals"]["flops"] == 26952
    assert r["baseline"]["totals"]["ops"] == 123424
    assert r["savings"]["ops_ratio"] == pytest.approx(123424 / 28624)


def test_bench_zero_reps_is_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        main(["bench", "--reps", "0"])
    assert e.value.code == 2
    err = capsys.readouterr().err.strip()
    assert json.loads(err)["error"] == "UsageError" and "\n" not in err


def test_bench_small_shape(capsys):
    code, r, _ = run(capsys, "bench", "--shape", "64,8,8,32,3", "--reps", "3")
    assert code == 0 and r["speedup"] > 0


def test_gen_data_and_eval(capsys, tmp_path):
    out = str(tmp_path / "ref.bin")
    code, r, _ = run(capsys, "gen-data", "--n", "300", "--seed", "9", "--out", out)
    assert code == 0 and r["shape"] == [300, 1, 16, 16]
    code, r, _ = run(capsys, "eval", out)
    assert code == 0 and abs(r["mmd"]) < 0.02 and r["n"] == 300


def test_eval_wrong_resolution(capsys, tmp_path):
    out = str(tmp_path / "pts.bin")
    run(capsys, "gen-data", "--dataset", "points2d", "--n", "10", "--out", out)
    code, _, err = run(capsys, "eval", out)
    assert code == 1 and json.loads(err)["error"] == "ValueError"


def test_train_error_names_key(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("train.iters = many\n")
    code, _, err = run(capsys, "train", "-c", str(cfg))
    rec = json.loads(err)
    assert code == 1 and rec["key"] == "train.iters"


def test_train_without_teacher(capsys, tmp_path):
    code, _, err = run(capsys, "train", "-s", "preset=points2d", "-s", "spd.enabled=true",
                       "-s", f"out_dir={tmp_path}")
    assert code == 1 and "teacher" in json.loads(err)["message"]


def test_train_sample_roundtrip(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("BITDIFF_SEED", "3")
    sets = ["-s", "preset=toy", "-s", "train.iters=2", "-s", "train.batch_size=4", "-s", "train.log_every=1",
            "-s", "train.ckpt_every=2", "-s", "train.val_size=4", "-s", "sample.steps=2", "-s", f"out_dir={tmp_path}"]
    code, r, _ = run(capsys, "train", *sets)
    assert code == 0 and r["iterations"] == 2
    cfg = json.loads(open(r["metrics"]).readline())
    assert set(cfg) >= {"iter", "dm_loss", "spd_loss", "total_loss", "wall_s"}
    outs = []
    for name in ("a", "b"):
        path = str(tmp_path / f"{name}.bin")
        code, s, _ = run(capsys, "sample", r["checkpoint"], "--n", "3", "--out", path, *sets)
        assert code == 0 and s["finite"] and s["shape"] == [3, 1, 16, 16] and len(s["batches"]) == 1
        outs.append(open(path, "rb").read())
    assert outs[0] == outs[1]
    assert load_samples(str(tmp_path / "a.bin")).dtype == np.float32
