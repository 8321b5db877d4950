import json
import subprocess
import sys

import pytest
import torch
import yaml

from qefpinn.cli import EXIT_NUMERIC, EXIT_OK, EXIT_TOLERANCE, EXIT_USAGE, main, relative_errors

SMALL_TRAIN = {
    "epochs": 2,
    "n_res": 6,
    "n_test": 300,
    "eval_every": 1,
    "trial": {"p": 4, "width": 8, "depth": 2},
    "fraclap": {"m_near": 8, "m_far_in": 8, "m_far_out": 8},
    "benchmark": {"name": "fpe/composite", "dim": 2, "alpha": 1.2},
}


@pytest.fixture(autouse=True)
def restore_threads():
    n = torch.get_num_threads()
    yield
    torch.set_num_threads(n)


def write_cfg(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_list_benchmarks(capsys):
    assert main(["list-benchmarks"]) == EXIT_OK
    out = capsys.readouterr().out.split()
    assert "fpe/ball-row2" in out and "tfde/singular" in out


def test_operator_check_ball_row1(tmp_path):
    cfg = write_cfg(
        tmp_path,
        {"n_seeds": 16, "n_points": 30, "benchmark": {"name": "fpe/ball-row1", "dim": 3, "alpha": 1.0}},
    )
    code = main(["operator-check", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"])
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert code == (EXIT_OK if summary["passed"] else EXIT_TOLERANCE)
    lines = (tmp_path / "o" / "points.csv").read_text().splitlines()
    assert lines[0] == "point,estimate,exact,relative_error"
    assert len(lines) == 31
    assert (tmp_path / "o" / "config.yaml").exists()
    for key in ("mean_relative_error", "max_relative_error", "seed_std_rms"):
        assert summary[key] >= 0


def test_operator_check_zero_field(tmp_path):
    cfg = write_cfg(tmp_path, {"n_seeds": 2, "benchmark": {"name": "fpe/zero", "dim": 3, "alpha": 1.0}})
    assert main(["operator-check", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_OK
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["max_relative_error"] == 0.0


def test_operator_check_tolerance_failure(tmp_path):
    cfg = write_cfg(
        tmp_path,
        {"n_seeds": 1, "tolerance": 1e-12, "benchmark": {"name": "fpe/ball-row2", "dim": 3, "alpha": 1.0}},
    )
    assert main(["operator-check", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_TOLERANCE


def test_unknown_key_is_a_usage_error(tmp_path, caplog):
    cfg = write_cfg(tmp_path, {"benchmark": {"nmae": "fpe/zero"}})
    assert main(["operator-check", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "benchmark.nmae" in caplog.text


def test_malformed_yaml_and_missing_file(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("method: [unclosed\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert main(["train", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_bad_subcommand_and_threads(tmp_path):
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["list-benchmarks", "--threads", "0"]) == EXIT_USAGE


def test_unknown_benchmark(tmp_path):
    cfg = write_cfg(tmp_path, {"epochs": 0, "benchmark": {"name": "fpe/nope"}})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_USAGE


def test_train_zero_epochs(tmp_path):
    cfg = write_cfg(tmp_path, dict(SMALL_TRAIN, epochs=0))
    out = tmp_path / "o"
    assert main(["train", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_OK
    assert (out / "history.csv").read_text().startswith("epoch,loss,e_test\n0,,")
    resolved = yaml.safe_load((out / "config.yaml").read_text())
    assert resolved["optim"]["lr"] == 1e-3
    assert resolved["epochs"] == 0


def test_resume_without_checkpoint(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_TRAIN)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o"), "--resume", "--quiet"]) == EXIT_USAGE


def test_resume_extends_run(tmp_path):
    out = tmp_path / "o"
    first = write_cfg(tmp_path, SMALL_TRAIN, "a.yaml")
    assert main(["train", "--config", first, "--out", str(out), "--quiet"]) == EXIT_OK
    longer = write_cfg(tmp_path, dict(SMALL_TRAIN, epochs=3), "b.yaml")
    assert main(["train", "--config", longer, "--out", str(out), "--resume", "--quiet"]) == EXIT_OK
    rows = (out / "history.csv").read_text().splitlines()
    assert rows[-1].startswith("3,")
    straight = tmp_path / "s"
    assert main(["train", "--config", longer, "--out", str(straight), "--quiet"]) == EXIT_OK
    assert (straight / "history.csv").read_text() == (out / "history.csv").read_text()


def test_numerical_abort_exit_code(tmp_path, monkeypatch):
    from qefpinn import trainer
    from qefpinn.trialspace import NonFiniteError

    def explode(*args, **kwargs):
        raise NonFiniteError("synthetic blow-up")

    monkeypatch.setattr(trainer, "residual_loss", explode)
    cfg = write_cfg(tmp_path, SMALL_TRAIN)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_NUMERIC
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["status"] == "aborted"


def test_compare_writes_table(tmp_path, capsys):
    cfg = write_cfg(tmp_path, dict(SMALL_TRAIN, epochs=1, methods=["qe", "mc"]))
    out = tmp_path / "o"
    assert main(["compare", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert "QE" in capsys.readouterr().out
    assert (out / "comparison.csv").read_text().splitlines()[0] == "method,status,final_e_test"
    assert (out / "qe" / "history.csv").exists() and (out / "mc" / "history.csv").exists()


def test_compare_rejects_unknown_method(tmp_path):
    cfg = write_cfg(tmp_path, dict(SMALL_TRAIN, methods=["qe", "fd"]))
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_USAGE


def test_seed_override_changes_run(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_TRAIN)
    main(["train", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1", "--quiet"])
    main(["train", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2", "--quiet"])
    assert (tmp_path / "a" / "history.csv").read_text() != (tmp_path / "b" / "history.csv").read_text()
    assert yaml.safe_load((tmp_path / "a" / "config.yaml").read_text())["seed"] == 1


def test_outputs_byte_identical_across_threads(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_TRAIN)
    for threads in ("1", "2", "4"):
        assert main(["train", "--config", cfg, "--out", str(tmp_path / threads), "--threads", threads, "--quiet"]) == 0
    ref = (tmp_path / "1" / "history.csv").read_bytes()
    for threads in ("2", "4"):
        assert (tmp_path / threads / "history.csv").read_bytes() == ref
        assert (tmp_path / threads / "summary.json").read_bytes() == (tmp_path / "1" / "summary.json").read_bytes()


def test_relative_errors_handle_zero_exact():
    import numpy as np

    got = relative_errors(np.array([1.0, 0.0, 2.0]), np.array([2.0, 0.0, 0.0]))
    assert list(got) == [0.5, 0.0, 2.0]


def test_console_entry_point_runs():
    res = subprocess.run([sys.executable, "-m", "qefpinn.cli", "list-benchmarks"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "fpe/composite" in res.stdout
