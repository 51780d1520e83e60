import json

import pytest

from cskd.cli import main
from cskd.data import load_csv

from .conftest import tiny_config


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(tiny_config().to_dict(include_output=False)))
    return path


def test_train_writes_outputs(config_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(config_file), "--seed", "9", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 9
    assert "top1_error" in json.loads(capsys.readouterr().out)


def test_train_repeat_is_byte_identical(config_file, tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--config", str(config_file), "--out", str(tmp_path / name)]) == 0
    for f in ("manifest.json", "metrics.csv", "reliability_bins.csv", "logprob_misclassified.csv", "features.csv", "checkpoint.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_unknown_key_exit_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"epochs": 2, "learning_rate": 0.1}))
    assert main(["train", "--config", str(path)]) == 2


def test_missing_config_exit_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "absent.json")]) == 2


def test_numeric_abort_exit_3(tmp_path):
    (tmp_path / "d.csv").write_text("label,f0\n0,1.0\n1,nan\n0,2.0\n1,3.0\n")
    cfg = tiny_config().to_dict(include_output=False)
    cfg["data"] = {"kind": "csv", "train_path": str(tmp_path / "d.csv"), "test_path": str(tmp_path / "d.csv")}
    cfg["loss"] = {"kind": "ce"}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "c.json")]) == 3


def test_gen_data_then_eval(config_file, tmp_path):
    spec = json.dumps({"classes": 4, "per_class": 6, "dim": 2, "spread": 0.5, "seed": 1})
    assert main(["gen-data", "--spec", spec, "--out", str(tmp_path / "g.csv")]) == 0
    assert len(load_csv(tmp_path / "g.csv")) == 24
    assert main(["train", "--config", str(config_file), "--out", str(tmp_path / "run")]) == 0
    ev = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(tmp_path / "run" / "checkpoint.bin"), "--data", str(tmp_path / "g.csv"), "--out", str(ev)]) == 0
    assert (ev / "metrics.csv").read_text().splitlines()[1].startswith("top1_error,test,")


def test_gen_data_split(tmp_path):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"classes": 8, "n_samples": 1250, "test_fraction": 0.2}))
    assert main(["gen-data", "--spec", str(spec), "--out", str(tmp_path / "syn.csv")]) == 0
    assert len(load_csv(tmp_path / "syn_train.csv")) == 1000
    assert len(load_csv(tmp_path / "syn_test.csv")) == 250


def test_gen_data_bad_key(tmp_path):
    assert main(["gen-data", "--spec", '{"classes": 3, "sigma": 1}', "--out", str(tmp_path / "x.csv")]) == 2


def test_eval_class_mismatch_exit_2(config_file, tmp_path):
    main(["train", "--config", str(config_file), "--out", str(tmp_path / "run")])
    main(["gen-data", "--spec", '{"classes": 9, "per_class": 2}', "--out", str(tmp_path / "g.csv")])
    assert main(["eval", "--checkpoint", str(tmp_path / "run" / "checkpoint.bin"), "--data", str(tmp_path / "g.csv")]) == 2


def test_sweep(config_file, tmp_path, capsys):
    assert main(["sweep", "--config", str(config_file), "--T", "1,4", "--lcls", "1", "--out", str(tmp_path / "sw")]) == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [(r["T"], r["lambda_cls"]) for r in rows] == [(1.0, 1.0), (4.0, 1.0)]
    assert (tmp_path / "sw" / "T4_lcls1" / "manifest.json").is_file()


def test_bad_argument_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["sweep", "--config", "x", "--T", "a,b", "--lcls", "1"])
    assert info.value.code == 2
