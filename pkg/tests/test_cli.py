import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from mjbackstep.cli import main
from mjbackstep.params import GridSpec, save_config


@pytest.fixture(scope="module")
def short_config(tmp_path_factory, cfg):
    path = tmp_path_factory.mktemp("cfg") / "short.json"
    path.write_text(save_config(replace(cfg, grid=GridSpec(nx=20, cfl=0.5, t_end=3.0, max_snapshots=40))))
    return path


@pytest.fixture(scope="module")
def trained_files(tmp_path_factory, short_config):
    d = tmp_path_factory.mktemp("no")
    assert main(["dataset", "--config", str(short_config), "--count", "6", "--n", "8", "--seed", "1",
                 "--out", str(d / "ds.json")]) == 0
    assert main(["train", "--dataset", str(d / "ds.json"), "--epochs", "5", "--batch", "2", "--p", "4",
                 "--hidden", "8", "8", "--history", str(d / "hist.csv"), "--out", str(d / "m.json")]) == 0
    return d


def test_solve_reports_residuals(tmp_path, capsys):
    assert main(["solve", "--n", "40", "--out", str(tmp_path / "k.json")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["passed"] and doc["residuals"]["bc_diag"] <= 1e-12
    assert json.loads((tmp_path / "k.json").read_text())["n"] == 40


def test_solve_small_mesh_is_usage_error(capsys):
    assert main(["solve", "--n", "3"]) == 2
    assert "n ≥ 4 required" in capsys.readouterr().err


def test_missing_config_is_usage_error(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "absent.json")]) == 2
    assert "not found" in capsys.readouterr().err


def test_bundled_name_resolves():
    assert main(["solve", "--config", "paper_s61.json", "--n", "8"]) == 0


def test_invalid_config_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"ode": ')
    assert main(["solve", "--config", str(bad)]) == 2


def test_nonconvergence_is_runtime_error():
    assert main(["solve", "--n", "20", "--max-sweeps", "2"]) == 1


def test_unknown_flag_exits_with_usage():
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--bogus"])
    assert exc.value.code == 2


def test_dataset_train_outputs(trained_files):
    ds = json.loads((trained_files / "ds.json").read_text())
    assert len(ds["samples"]) == 6 and ds["n"] == 8
    with open(trained_files / "hist.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "train_mse", "val_mse"] and len(rows) == 6


def test_bad_range(tmp_path):
    assert main(["dataset", "--range", "1.8:0.8", "--count", "2", "--n", "6", "--out", str(tmp_path / "d.json")]) == 2


def test_eval_rows(trained_files, short_config, capsys):
    assert main(["eval", "--model", str(trained_files / "m.json"), "--config", str(short_config),
                 "--holdout", "1.05,1.5", "--n", "8"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [r["value"] for r in doc["rows"]] == [1.05, 1.5]
    assert all(r["sup_error"] >= r["l2_error"] >= 0 for r in doc["rows"])


def test_truncated_model_is_schema_error(tmp_path, trained_files):
    text = (trained_files / "m.json").read_text()
    (tmp_path / "cut.json").write_text(text[:100])
    assert main(["eval", "--model", str(tmp_path / "cut.json")]) == 2


@pytest.mark.parametrize("controller", ["none", "solver-kernels", "no-model"])
def test_ensemble_outputs(tmp_path, trained_files, short_config, controller):
    out = tmp_path / "ens"
    args = ["ensemble", "--config", str(short_config), "--controller", controller, "--paths", "2", "--seed", "3",
            "--window", "0.5,3", "--states", "20", "--out", str(out)]
    if controller == "no-model":
        args += ["--model", str(trained_files / "m.json")]
    assert main(args) == 0
    fit = json.loads((out / "fit.json").read_text())
    assert {"zeta", "sigma", "r2", "window"} <= set(fit)
    data = np.genfromtxt(out / "decay.csv", delimiter=",", names=True)
    assert data.dtype.names == ("t", "Ep", "V_mean") and data["t"][0] == 0.0
    assert (out / "traj_1.csv").exists()
    assert (out / "states_0").is_dir() == (controller != "none")


def test_no_model_controller_requires_model(tmp_path, short_config):
    assert main(["ensemble", "--config", str(short_config), "--controller", "no-model", "--paths", "1",
                 "--out", str(tmp_path)]) == 2


def test_bench_table(tmp_path, trained_files, capsys):
    assert main(["bench", "--model", str(trained_files / "m.json"), "--grids", "0.1,0.05", "--repeats", "1",
                 "--out", str(tmp_path / "bench")]) == 0
    doc = json.loads((tmp_path / "bench.json").read_text())
    assert [r["n"] for r in doc["rows"]] == [10, 20] and "machine" in doc
    with open(tmp_path / "bench.csv") as fh:
        assert next(csv.reader(fh))[:4] == ["h", "n", "solver_seconds", "no_seconds"]
    assert main(["bench", "--grids", "0.1"]) == 2
