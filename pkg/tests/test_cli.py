import json
import math

import numpy as np
import pytest
import yaml

from factormi import cli
from factormi.config import resolve_config, schema
from factormi.data import load_dataset
from factormi.errors import ConfigError, NumericalError
from factormi.report import compare_runs, render_table

SMALL_DESK = {"profile": "desk", "dataset": {"synthetic": {"trials_per_class": 20}}, "train": {"max_epochs": 30}}


def _write_config(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def _run(argv):
    return cli.main([str(a) for a in argv])


# ---------------------------------------------------------------- synth


def test_synth_full_scale(tmp_path, capsys):
    out = tmp_path / "d.eegf"
    assert _run(["synth", "--classes", 4, "--trials", 50, "--channels", 22, "--samples", 1001, "--seed", 7,
                 "--out", out]) == 0
    ds = load_dataset(out, n_classes=4)
    assert len(ds) == 200 and ds.X.shape == (200, 22, 1001)
    text = capsys.readouterr().out
    assert "class0=50" in text and "power active/inactive" in text


def test_synth_zero_trials_writes_nothing(tmp_path):
    out = tmp_path / "d.eegf"
    assert _run(["synth", "--trials", 0, "--out", out]) == cli.EXIT_CONFIG
    assert not out.exists()


def test_synth_byte_identical(tmp_path):
    args = ["synth", "--trials", 5, "--channels", 4, "--samples", 100, "--sfreq", 100, "--seed", 3]
    _run(args + ["--out", tmp_path / "a.eegf"])
    _run(args + ["--out", tmp_path / "b.eegf"])
    assert (tmp_path / "a.eegf").read_bytes() == (tmp_path / "b.eegf").read_bytes()


def test_synth_unwritable(tmp_path):
    assert _run(["synth", "--trials", 2, "--out", tmp_path / "missing" / "d.eegf"]) == cli.EXIT_DATA


# ---------------------------------------------------------------- cv


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("smoke")
    cfg = _write_config(tmp, SMALL_DESK)
    assert _run(["cv", "--config", cfg, "--out", tmp / "run"]) == 0
    return tmp, cfg, json.loads((tmp / "run" / "run.json").read_text())


def test_cv_desk_smoke(smoke_run):
    _, _, record = smoke_run
    folds = record["summary"]["folds"]
    assert len(folds) == 10
    assert all(f["stopped_epoch"] <= 30 for f in folds)
    assert record["seed"] == 0 and record["config"]["train"]["max_epochs"] == 30
    assert record["config"]["dataset"]["synthetic"]["n_channels"] == 8
    accs = [f["test_accuracy"] for f in folds]
    assert abs(record["summary"]["mean"] - np.mean(accs)) <= 1e-12


def test_cv_k_override(tmp_path, capsys):
    cfg = _write_config(tmp_path, {**SMALL_DESK, "train": {"max_epochs": 2, "patience": 2}})
    assert _run(["cv", "--config", cfg, "--k", 2, "--out", tmp_path / "r"]) == 0
    record = json.loads((tmp_path / "r" / "run.json").read_text())
    assert len(record["summary"]["folds"]) == 2
    assert capsys.readouterr().out.strip().startswith("proposed  ")


def test_cv_rerun_identical(tmp_path):
    cfg = _write_config(tmp_path, {**SMALL_DESK, "k": 2, "train": {"max_epochs": 3, "patience": 2}})
    _run(["cv", "--config", cfg, "--out", tmp_path / "a"])
    _run(["cv", "--config", cfg, "--out", tmp_path / "b"])
    a = json.loads((tmp_path / "a" / "run.json").read_text())
    b = json.loads((tmp_path / "b" / "run.json").read_text())
    a["config"].pop("out"), b["config"].pop("out")
    assert a == b


# ---------------------------------------------------------------- baselines


def _baseline_accuracy(tmp_path, which, amplitude):
    cfg = _write_config(tmp_path, {"profile": "desk", "k": 5, "dataset": {"synthetic": {"amplitude": amplitude}}},
                        f"{which}{amplitude}.yaml")
    out = tmp_path / f"{which}{amplitude}"
    assert _run(["baseline", "--which", which, "--config", cfg, "--out", out]) == 0
    return json.loads((out / "run.json").read_text())


def test_csp_high_snr(tmp_path):
    assert _baseline_accuracy(tmp_path, "csp", 5.0)["summary"]["mean"] > 0.8


def test_csp_pure_noise(tmp_path):
    record = _baseline_accuracy(tmp_path, "csp", 0.0)
    n_test = record["summary"]["folds"][0]["n_test"]
    assert abs(record["summary"]["mean"] - 0.25) <= 3 * math.sqrt(0.25 * 0.75 / n_test)


def test_fbcsp_reports_bands(tmp_path, capsys):
    record = _baseline_accuracy(tmp_path, "fbcsp", 5.0)
    assert "selected bands per fold" in capsys.readouterr().out
    for f in record["summary"]["folds"]:
        assert f["extra"]["selected_bands"] and all(0 <= b < 9 for b in f["extra"]["selected_bands"])


# ---------------------------------------------------------------- report


def test_render_examples():
    assert "54.29 (3.40)" in render_table([("proposed", 54.293, 3.401)])
    one = render_table([("proposed", 54.293, 3.401)]).splitlines()
    assert one[-1].endswith(" *")
    two = render_table([("CSP+LDA", 40.0, 2.0), ("proposed", 54.293, 3.401)]).splitlines()
    assert len(two) == 4
    assert two[-1].endswith(" *") and not two[-2].endswith(" *")
    assert two[0].startswith("Model")


def test_report_command(smoke_run, tmp_path, capsys):
    tmp, cfg, _ = smoke_run
    assert _run(["baseline", "--which", "csp", "--config", cfg, "--out", tmp / "csp"]) == 0
    capsys.readouterr()
    assert _run(["report", tmp / "run", tmp / "csp"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4 and sum(line.endswith(" *") for line in lines) == 1
    payload = json.loads((tmp / "run" / "report.json").read_text())
    assert {r["name"] for r in payload["rows"]} == {"proposed", "CSP+LDA"}


def test_report_refuses_mixed_provenance():
    runs = [{"provenance_hash": "a", "summary": {"name": "x", "mean": 0.5, "std": 0.1}, "_path": "1"},
            {"provenance_hash": "b", "summary": {"name": "y", "mean": 0.6, "std": 0.1}, "_path": "2"}]
    with pytest.raises(ConfigError, match="provenance"):
        compare_runs(runs)


def test_report_empty_dir(tmp_path):
    assert _run(["report", tmp_path]) == cli.EXIT_DATA


# ---------------------------------------------------------------- train / eval


def test_train_then_eval(tmp_path, capsys):
    cfg = _write_config(tmp_path, {"profile": "desk", "k": 5, "train": {"max_epochs": 3, "patience": 2}})
    assert _run(["train", "--config", cfg, "--out", tmp_path / "m"]) == 0
    assert (tmp_path / "m" / "model.fmck").exists()
    trained = json.loads((tmp_path / "m" / "train.json").read_text())["report"]["test_accuracy"]
    assert _run(["eval", "--config", cfg, "--checkpoint", tmp_path / "m" / "model.fmck", "--out", tmp_path / "m"]) == 0
    assert json.loads((tmp_path / "m" / "eval.json").read_text())["test_accuracy"] == trained


# ---------------------------------------------------------------- config and exit codes


def test_precedence_flags_over_file_over_profile(tmp_path):
    cfg = resolve_config({"profile": "desk", "k": 4, "train": {"max_epochs": 9, "patience": 2}}, {"k": 3})
    assert cfg.k == 3
    assert cfg.train.max_epochs == 9
    assert cfg.train.learning_rate == 1e-3
    assert cfg.dataset.synthetic.n_channels == 8


def test_schema_lists_sections():
    s = schema()
    assert {"top_level", "dataset", "model", "train", "baseline"} <= set(s)
    assert "learning_rate" in s["train"]


def test_unknown_field_is_named(tmp_path, capsys):
    cfg = _write_config(tmp_path, {"train": {"learning_rat": 0.1}})
    assert _run(["cv", "--config", cfg, "--out", tmp_path / "x"]) == cli.EXIT_CONFIG
    assert "train.learning_rat" in capsys.readouterr().err


def test_missing_dataset_path(tmp_path, capsys):
    cfg = _write_config(tmp_path, {"dataset": {"path": str(tmp_path / "nope.eegf")}})
    assert _run(["cv", "--config", cfg]) == cli.EXIT_CONFIG
    assert "dataset.path" in capsys.readouterr().err


def test_corrupt_dataset_is_data_error(tmp_path):
    bad = tmp_path / "bad.eegf"
    bad.write_bytes(b"EEGF\x01\x00")
    cfg = _write_config(tmp_path, {"dataset": {"path": str(bad)}})
    assert _run(["cv", "--config", cfg, "--out", tmp_path / "x"]) == cli.EXIT_DATA


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("non-finite loss")

    monkeypatch.setattr(cli, "cross_validate", boom)
    cfg = _write_config(tmp_path, SMALL_DESK)
    assert _run(["cv", "--config", cfg, "--out", tmp_path / "x"]) == cli.EXIT_NUMERIC
