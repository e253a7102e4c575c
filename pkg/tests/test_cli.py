import json

import numpy as np
import pytest

from ceqln.cli import main
from ceqln.assembly import (
    ConstraintSet,
    EqualityRow,
    InequalityRow,
    TrajectoryDataset,
    save_constraint_sets,
)


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def letter_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("letter")
    assert run(["generate", "--task", "letter2d", "--points", "120", "--out", out]) == 0
    return out


@pytest.fixture(scope="module")
def toy_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "config.json"
    path.write_text(json.dumps({
        "n_basis": 4,
        "hidden_layers": [{"activations": ["identity", "sine", "cosine", "sigmoid", "sech"]}],
        "beta": 3,
        "epochs": 8,
        "learning_rate": 0.005,
        "lambda_w": 0.01,
        "init_ranges": [[[-3, 3], [-1, 1]], [[-1, 1], [-1, 1]]],
        "seed": 5,
    }))
    return path


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, letter_dir, toy_config):
    out = tmp_path_factory.mktemp("trained")
    code = run([
        "train", "--config", toy_config,
        "--dataset", letter_dir / "dataset.csv",
        "--constraints", letter_dir / "constraints.json",
        "--out", out,
    ])
    assert code == 0
    return out


def test_generate_writes_artifacts(letter_dir):
    assert (letter_dir / "dataset.csv").exists()
    sets = json.loads((letter_dir / "constraints.json").read_text())
    assert [cs["r"] for cs in sets] == [1, 2, 3, 4]


def test_train_writes_artifacts(trained_dir):
    for name in ("model.json", "loss.csv", "metrics.json", "metrics.csv"):
        assert (trained_dir / name).exists(), name
    for r in (1, 2, 3, 4):
        assert (trained_dir / f"trajectory_r{r}.csv").exists()
    metrics = json.loads((trained_dir / "metrics.json").read_text())
    for r in (1, 2, 3, 4):
        assert metrics[f"mse_const_r{r}"] <= 1e-12


def test_train_determinism(tmp_path, letter_dir, toy_config):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert run([
            "train", "--config", toy_config,
            "--dataset", letter_dir / "dataset.csv",
            "--constraints", letter_dir / "constraints.json",
            "--out", out,
        ]) == 0
    assert (out1 / "loss.csv").read_bytes() == (out2 / "loss.csv").read_bytes()


def test_adapt_reproduces_training_output(tmp_path, letter_dir, trained_dir):
    out = tmp_path / "adapted"
    code = run([
        "adapt", "--model", trained_dir / "model.json",
        "--dataset", letter_dir / "dataset.csv",
        "--constraints", letter_dir / "constraints.json",
        "--out", out,
    ])
    assert code == 0
    report = json.loads((out / "residuals.json").read_text())
    assert all(entry["passed"] for entry in report["sets"])
    for r in (1, 2, 3, 4):
        assert (
            (out / f"adapted_r{r}.csv").read_bytes()
            == (trained_dir / f"trajectory_r{r}.csv").read_bytes()
        )


def test_malformed_json_exit_2_names_offset(tmp_path, letter_dir, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n_basis": 4, oops}')
    code = run([
        "train", "--config", bad,
        "--dataset", letter_dir / "dataset.csv",
        "--constraints", letter_dir / "constraints.json",
        "--out", tmp_path / "out",
    ])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert "byte_offset" in err
    assert err["byte_offset"] == 15


def test_infeasible_initialization_exit_3(tmp_path, toy_config, capsys):
    times = np.linspace(0, 1, 30)
    dataset = TrajectoryDataset(times=times, targets=np.sin(times)[None, :])
    ds_path = tmp_path / "data.csv"
    dataset.write_csv(ds_path)
    bad_cs = ConstraintSet(
        index=1,
        equalities=[EqualityRow(0.5, 0, 0.0)],
        inequalities=[InequalityRow(0.5, 0, lower=1.0)],
    )
    cs_path = tmp_path / "cs.json"
    save_constraint_sets(cs_path, [bad_cs])
    code = run([
        "train", "--config", toy_config,
        "--dataset", ds_path, "--constraints", cs_path,
        "--out", tmp_path / "out",
    ])
    assert code == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "InitializationError"


def test_sweep_cli(tmp_path):
    data_dir = tmp_path / "toy"
    assert run(["generate", "--task", "toy1d", "--points", "600", "--out", data_dir]) == 0
    out = tmp_path / "sweep.csv"
    code = run([
        "sweep", "--family", "fourier",
        "--dataset", data_dir / "dataset.csv",
        "--constraints", data_dir / "constraints.json",
        "--out", out,
    ])
    assert code == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 101


def test_export_equations_cli(tmp_path, trained_dir, capsys):
    code = run(["export-equations", "--model", trained_dir / "model.json"])
    assert code == 0
    text = capsys.readouterr().out
    assert text.startswith("f0 = ")
    assert "phi0 = " in text


def test_verify_reference_cli(capsys):
    code = run(["verify-reference"])
    out = capsys.readouterr().out
    rows = [ln for ln in out.splitlines() if ln.startswith("t=")]
    assert len(rows) == 4
    # two rows verify, two do not; the command reports rather than hides it
    assert code == 1
    assert "FAIL" in out


def test_metrics_cli_generic(tmp_path, letter_dir, trained_dir, capsys):
    code = run([
        "metrics", "--dataset", letter_dir / "dataset.csv",
        "--trajectory", trained_dir / "trajectory_r1.csv",
        "--constraints", letter_dir / "constraints.json", "--r", "1",
    ])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert set(doc) == {"mse_shape", "mse_const"}


def test_metrics_cli_pickplace(tmp_path):
    data_dir = tmp_path / "pp"
    assert run(["generate", "--task", "pickplace3d", "--points", "80", "--out", data_dir]) == 0
    # use the (noiseless) data itself as every set's "trajectory"
    from ceqln.assembly import TrajectoryDataset as TD

    ds = TD.read_csv(data_dir / "dataset.csv")
    traj_dir = tmp_path / "trajs"
    traj_dir.mkdir()
    for r in (1, 2, 3, 4):
        ds.write_csv(traj_dir / f"trajectory_r{r}.csv")
    out = tmp_path / "metrics.json"
    code = run([
        "metrics", "--task", "pickplace",
        "--dataset", data_dir / "dataset.csv",
        "--trajectories", traj_dir,
        "--constraints", data_dir / "constraints.json",
        "--out", out,
    ])
    assert code == 0
    doc = json.loads(out.read_text())
    assert {"mse_shape", "mse1", "mse2", "mse3", "mse4"} <= set(doc)
    assert doc["mse2"] == 0.0 and doc["mse3"] == 0.0
    assert out.with_suffix(".csv").exists()
