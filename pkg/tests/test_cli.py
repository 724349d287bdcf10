import csv
import io
import json
import math

import numpy as np
import pytest

from confaware import cli, inference, metrics, synthdata, trainer

FAST = {"train": {"epochs": 2, "hidden": [8], "feature_dim": 4, "activation": "tanh"}}


def run(argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "fast.json"
    cfg.write_text(json.dumps(FAST))
    assert run(["generate", "--config", cfg, "--out", root / "data"]) == 0
    assert run(["train", "--config", cfg, "--data", root / "data", "--out", root / "model"]) == 0
    return root


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_generate_default_writes_five_files(workspace):
    files = sorted(p.name for p in (workspace / "data").iterdir())
    assert files == ["test_mixed.csv", "test_seen.csv", "test_shifted_known.csv", "test_unknown_attack.csv", "train.csv"]


def test_generate_creates_nested_dir(tmp_path):
    out = tmp_path / "a" / "b"
    assert run(["generate", "--out", out, "--seed", "3"]) == 0
    assert (out / "train.csv").exists()


def test_invalid_quantile_in_config(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("eval:\n  quantiles: [0.0, 1.5]\n")
    assert run(["generate", "--config", cfg, "--out", tmp_path / "x"]) == 2
    assert "eval.quantiles" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("train:\n  learning_rat: 0.1\n")
    assert run(["generate", "--config", cfg, "--out", tmp_path / "x"]) == 2
    assert "train.learning_rat" in capsys.readouterr().err


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        run(["train", "--out", "x"])
    assert exc.value.code == 2


def test_missing_config_file_is_io_error(tmp_path):
    assert run(["generate", "--config", tmp_path / "nope.yaml", "--out", tmp_path]) == 3


def test_train_log_finite(workspace):
    rows = read_rows(workspace / "model" / "train_log.csv")
    assert [int(r["epoch"]) for r in rows] == [1, 2]
    assert all(math.isfinite(float(r[k])) for r in rows for k in ("L_CE", "L_MDTrip", "L_total"))


def test_train_rerun_identical(workspace, tmp_path):
    cfg = workspace / "fast.json"
    assert run(["train", "--config", cfg, "--data", workspace / "data", "--out", tmp_path]) == 0
    assert (tmp_path / "checkpoint.json").read_bytes() == (workspace / "model" / "checkpoint.json").read_bytes()


def test_train_zero_epochs(workspace, tmp_path):
    cfg = workspace / "fast.json"
    assert run(["train", "--config", cfg, "--data", workspace / "data", "--out", tmp_path, "--epochs", "0"]) == 0
    cp = trainer.load_checkpoint(tmp_path / "checkpoint.json")
    train = synthdata.read_csv(workspace / "data" / "train.csv")
    init, _ = trainer.initialize(train, cp.config)
    assert trainer.checkpoint_to_dict(cp) == trainer.checkpoint_to_dict(init)


def test_train_missing_data_is_io_error(tmp_path):
    assert run(["train", "--data", tmp_path, "--out", tmp_path / "m"]) == 3


def test_train_nonfinite_exit_4(workspace, tmp_path):
    cfg = tmp_path / "wild.json"
    cfg.write_text(json.dumps({"train": {"epochs": 3, "hidden": [8], "feature_dim": 4, "learning_rate": 1e12}}))
    with np.errstate(all="ignore"):
        code = run(["train", "--config", cfg, "--data", workspace / "data", "--out", tmp_path / "m"])
    assert code == 4


def test_eval_default_quantiles(workspace, tmp_path, capsys):
    tests = sorted((workspace / "data").glob("test_*.csv"))
    assert run(["eval", "--checkpoint", workspace / "model" / "checkpoint.json", "--test", *tests, "--out", tmp_path]) == 0
    out = capsys.readouterr().out
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 4 * 4
    for name in ("mixed", "seen", "shifted_known", "unknown_attack"):
        assert [r["p"] for r in rows if r["scenario"] == name] == ["0", "0.3", "0.5", "0.7"]
        d = tmp_path / name
        assert len(read_rows(d / "eval_rows.csv")) == 4
        assert (d / "groups.csv").exists() and (d / "cdf.svg").exists() and (d / "cdf_live.csv").exists()
    assert (tmp_path / "summary.csv").read_text() == out


def test_eval_empty_quantiles_and_p1(workspace, tmp_path, capsys):
    ck = workspace / "model" / "checkpoint.json"
    test = workspace / "data" / "test_mixed.csv"
    assert run(["eval", "--checkpoint", ck, "--test", test, "--out", tmp_path / "a", "--quantiles", ""]) == 0
    rows = read_rows(tmp_path / "a" / "mixed" / "eval_rows.csv")
    assert [r["p"] for r in rows] == ["0.0"]
    capsys.readouterr()
    assert run(["eval", "--checkpoint", ck, "--test", test, "--out", tmp_path / "b", "--quantiles", "0,1.0"]) == 0
    rows = read_rows(tmp_path / "b" / "mixed" / "eval_rows.csv")
    assert rows[1]["hter"] == "NA" and rows[1]["auc"] == "NA"
    assert "NA,NA" in capsys.readouterr().out


def test_eval_corrupt_checkpoint(workspace, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text((workspace / "model" / "checkpoint.json").read_text().replace('"epochs_completed": 2', '"epochs_completed": 3'))
    assert run(["eval", "--checkpoint", bad, "--test", workspace / "data" / "test_mixed.csv", "--out", tmp_path]) == 3


def predict(workspace, tmp_path, spec):
    ck = workspace / "model" / "checkpoint.json"
    inp = workspace / "data" / "test_mixed.csv"
    assert run(["predict", "--checkpoint", ck, "--input", inp, "--threshold", spec, "--out", tmp_path]) == 0
    return read_rows(tmp_path / "decisions.csv")


def test_predict_fixed_accepts_all(workspace, tmp_path):
    rows = predict(workspace, tmp_path, "fixed:-1e18")
    assert len(rows) == 800 and all(r["decision"] == "accept" for r in rows)
    assert [int(r["index"]) for r in rows] == list(range(800))
    assert all(0.0 <= float(r["live_prob"]) <= 1.0 for r in rows)


def test_predict_quantile_one_rejects_all(workspace, tmp_path):
    calib = workspace / "data" / "test_mixed.csv"
    rows = predict(workspace, tmp_path, f"quantile:1.0:{calib}")
    assert all(r["decision"] == "reject" and r["alert"] for r in rows)


def test_predict_quantile_on_calibration_itself(workspace, tmp_path):
    calib = workspace / "data" / "test_mixed.csv"
    rows = predict(workspace, tmp_path, f"quantile:0.3:{calib}")
    confs = sorted(float(r["confidence"]) for r in rows)
    k = math.floor(0.3 * len(rows))
    rejected = sum(r["decision"] == "reject" for r in rows)
    assert rejected == sum(c < confs[k] for c in confs)
    assert len(set(confs)) == len(confs)  # tanh features: no ties, so the count is exact
    assert rejected == k


def test_predict_bad_threshold(workspace, tmp_path):
    ck = workspace / "model" / "checkpoint.json"
    inp = workspace / "data" / "test_mixed.csv"
    for spec in ("bogus", "fixed:abc", "quantile:2:x.csv", "quantile:0.5"):
        assert run(["predict", "--checkpoint", ck, "--input", inp, "--threshold", spec, "--out", tmp_path]) == 2


def sweep(workspace, tmp_path, grid):
    ck = workspace / "model" / "checkpoint.json"
    test = workspace / "data" / "test_mixed.csv"
    argv = ["sweep", "--checkpoint", ck, "--test", test, "--out", tmp_path]
    if grid is not None:
        argv += ["--grid", grid]
    assert run(argv) == 0
    return read_rows(tmp_path / "sweep.csv")


def test_sweep_single_point_matches_eval(workspace, tmp_path, capsys):
    rows = sweep(workspace, tmp_path / "s", "0")
    ck = workspace / "model" / "checkpoint.json"
    assert run(["eval", "--checkpoint", ck, "--test", workspace / "data" / "test_mixed.csv", "--out", tmp_path / "e", "--quantiles", "0"]) == 0
    ev = read_rows(tmp_path / "e" / "mixed" / "eval_rows.csv")
    assert len(rows) == 1
    assert (rows[0]["retained"], rows[0]["hter"], rows[0]["auc"]) == (ev[0]["retained"], ev[0]["hter"], ev[0]["auc"])


def test_sweep_dense_grid(workspace, tmp_path):
    rows = sweep(workspace, tmp_path, None)
    assert len(rows) == 10
    retained = [int(r["retained"]) for r in rows]
    assert retained == sorted(retained, reverse=True)


def test_sweep_half_matches_independent_pipeline(workspace, tmp_path):
    rows = {r["p"]: r for r in sweep(workspace, tmp_path, "0,0.5")}
    cp = trainer.load_checkpoint(workspace / "model" / "checkpoint.json")
    ds = synthdata.read_csv(workspace / "data" / "test_mixed.csv")
    # filter first, then score only the survivors one by one
    th = inference.quantile_threshold(inference.score(cp.model, cp.prototypes, ds.X)[1], 0.5)
    kept = [(lab, d) for lab, x in zip(ds.labels, ds.X) if isinstance(d := inference.decide(cp.model, cp.prototypes, x, th), inference.Accept)]
    y = np.array([lab == "live" for lab, _ in kept])
    s = np.array([d.live_probability for _, d in kept])
    row = rows["0.5"]
    assert int(row["retained"]) == len(kept)
    assert float(row["hter"]) == pytest.approx(metrics.hter(y, s), abs=1e-12)
    assert float(row["auc"]) == pytest.approx(metrics.auc(y, s), abs=1e-12)


def test_grouping_flag(workspace, tmp_path):
    cfg = workspace / "fast.json"
    assert run(["train", "--config", cfg, "--data", workspace / "data", "--out", tmp_path, "--grouping", "binary"]) == 0
    cp = trainer.load_checkpoint(tmp_path / "checkpoint.json")
    assert [c.name for c in cp.prototypes.categories] == ["live", "spoof"]


def test_config_yaml_sections(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("synth:\n  train_count: 5\n  test_count: 3\ntrain:\n  loss:\n    margin: 2.0\n  grouping: binary\neval:\n  hter_mode: fixed0.5\n")
    rc = cli.load_config(cfg)
    assert rc.synth.train_count == 5 and rc.train.loss.margin == 2.0
    assert rc.train.grouping is trainer.GroupingMode.BINARY and rc.eval.hter_mode == "fixed0.5"
