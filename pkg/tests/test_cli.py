import json
import math
import subprocess
from datetime import date, timedelta

import numpy as np
import pytest

from bucketformer.cli import main
from bucketformer.runconfig import read_config

# smallest architecture the pipeline accepts, for fast end-to-end runs
TINY_FLAGS = [
    "--observations", "600",
    "--seq-len", "8",
    "--d-model", "4",
    "--num-heads", "2",
    "--head-size", "3",
    "--num-blocks", "1",
    "--ff-dim", "6",
    "--mlp-units", "6",
    "--epochs", "2",
    "--batch-size", "64",
    "--ou-seed", "4",
    "--train-seed", "0",
]


def run_cli(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_prices(path, n=60, seed=3):
    rng = np.random.default_rng(seed)
    closes = 100.0 * np.exp(np.cumsum(0.01 * rng.standard_normal(n)))
    start = date(2020, 1, 1)
    lines = ["date,close"]
    lines += [f"{start + timedelta(days=i)},{closes[i]:.6f}" for i in range(n)]
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    """One tiny training run shared by the checkpoint-consuming tests."""
    outdir = tmp_path_factory.mktemp("run")
    code = main(["train", "--outdir", str(outdir)] + TINY_FLAGS)
    assert code == 0
    return outdir


def test_no_arguments_is_usage_error(capsys):
    code, _, err = run_cli([], capsys)
    assert code == 1
    assert "error:" in err


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run_cli(["simulate", "--bogus", "1"], capsys)
    assert code == 1
    assert "error:" in err


def test_help_exits_zero():
    with pytest.raises(SystemExit) as excinfo:
        main(["--help"])
    assert excinfo.value.code == 0


def test_bad_flag_value_is_usage_error(capsys):
    code, _, err = run_cli(["train", "--epochs", "soon"], capsys)
    assert code == 1
    assert "epochs" in err


def test_invalid_model_setting_is_usage_error(capsys):
    code, _, err = run_cli(["train", "--dropout", "1.5"], capsys)
    assert code == 1


def test_simulate_writes_trajectory(tmp_path, capsys):
    out = tmp_path / "traj.csv"
    code, stdout, _ = run_cli(
        ["simulate", "--out", str(out), "--observations", "50", "--ou-seed", "4"], capsys
    )
    assert code == 0
    assert "wrote 50 observations (51 states)" in stdout
    lines = out.read_text().splitlines()
    assert lines[0] == "hidden,observed"
    assert len(lines) == 52
    assert lines[1].endswith(",")  # the starting state has no increment


def test_simulate_seed_determinism(tmp_path, capsys):
    paths = [tmp_path / f"t{i}.csv" for i in range(3)]
    for path, seed in zip(paths, ["7", "7", "8"]):
        code, _, _ = run_cli(
            ["simulate", "--out", str(path), "--observations", "40", "--seed", seed], capsys
        )
        assert code == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert paths[0].read_bytes() != paths[2].read_bytes()


def test_negative_seed_rejected(capsys):
    code, _, err = run_cli(["simulate", "--seed", "-1"], capsys)
    assert code == 1
    assert "--seed" in err


def test_master_seed_covers_simulation_stream(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run_cli(["simulate", "--out", str(a), "--observations", "40", "--seed", "9"], capsys)
    run_cli(["simulate", "--out", str(b), "--observations", "40", "--ou-seed", "9"], capsys)
    assert a.read_bytes() == b.read_bytes()


def test_config_file_flag_and_seed_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\nobservations = 40\n\n[ou]\nseed = 5\n")
    from_file = tmp_path / "file.csv"
    flagged = tmp_path / "flag.csv"
    plain = tmp_path / "plain.csv"

    code, _, _ = run_cli(["simulate", "--config", str(cfg), "--out", str(from_file)], capsys)
    assert code == 0
    assert len(from_file.read_text().splitlines()) == 42  # header + 41 states

    code, _, _ = run_cli(
        ["simulate", "--config", str(cfg), "--observations", "30", "--out", str(flagged)], capsys
    )
    assert code == 0
    assert len(flagged.read_text().splitlines()) == 32

    run_cli(["simulate", "--ou-seed", "5", "--observations", "40", "--out", str(plain)], capsys)
    assert from_file.read_bytes() == plain.read_bytes()

    seeded_a = tmp_path / "sa.csv"
    seeded_b = tmp_path / "sb.csv"
    run_cli(["simulate", "--config", str(cfg), "--seed", "6", "--out", str(seeded_a)], capsys)
    run_cli(["simulate", "--observations", "40", "--seed", "6", "--out", str(seeded_b)], capsys)
    assert seeded_a.read_bytes() == seeded_b.read_bytes()


def test_bad_config_file_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\nmystery = 1\n")
    code, _, err = run_cli(["simulate", "--config", str(cfg)], capsys)
    assert code == 1
    assert "unknown setting" in err


def test_train_writes_artifacts(artifacts):
    for name in ("checkpoint.bkt", "history.csv", "eval.json", "config.ini"):
        assert (artifacts / name).exists(), name
    history = (artifacts / "history.csv").read_text().splitlines()
    assert len(history) == 3  # header + one row per epoch
    report = json.loads((artifacts / "eval.json").read_text())
    assert set(report) == {"train", "validation", "test"}
    for split, panel in report.items():
        assert panel["split"] == split
        assert 0.0 <= panel["accuracy"] <= 1.0
        assert panel["mean_hpq"] > 0.0
        assert panel["mean_htt"] <= panel["mean_htq"]  # oracle is the entropy floor
        assert panel["baseline_uniform"] == pytest.approx(1 / 7)


def test_train_config_artifact_roundtrips(artifacts):
    cfg = read_config(artifacts / "config.ini")
    assert cfg.observations == 600
    assert cfg.model.seq_len == 8
    assert cfg.model.d_model == 4
    assert cfg.model.mlp_units == (6,)
    assert cfg.train.epochs == 2
    assert cfg.train.seed == 0
    assert cfg.ou.seed == 4
    assert cfg.outdir == str(artifacts)


def test_evaluate_checkpoint(artifacts, tmp_path, capsys):
    out = tmp_path / "report.json"
    code, stdout, _ = run_cli(
        [
            "evaluate",
            "--checkpoint", str(artifacts / "checkpoint.bkt"),
            "--config", str(artifacts / "config.ini"),
            "--out", str(out),
        ],
        capsys,
    )
    assert code == 0
    report = json.loads(stdout)
    assert set(report) == {"test"}  # default split
    assert out.read_text() == stdout
    full = json.loads((artifacts / "eval.json").read_text())
    assert report["test"] == full["test"]  # same model, same data, same numbers


def test_evaluate_all_splits(artifacts, capsys):
    code, stdout, _ = run_cli(
        [
            "evaluate",
            "--checkpoint", str(artifacts / "checkpoint.bkt"),
            "--config", str(artifacts / "config.ini"),
            "--split", "all",
        ],
        capsys,
    )
    assert code == 0
    assert set(json.loads(stdout)) == {"train", "validation", "test"}


def test_evaluate_architecture_mismatch(artifacts, capsys):
    code, _, err = run_cli(
        [
            "evaluate",
            "--checkpoint", str(artifacts / "checkpoint.bkt"),
            "--config", str(artifacts / "config.ini"),
            "--d-model", "6",
        ],
        capsys,
    )
    assert code == 2
    assert "error:" in err


def test_evaluate_missing_checkpoint(artifacts, tmp_path, capsys):
    code, _, err = run_cli(
        [
            "evaluate",
            "--checkpoint", str(tmp_path / "nope.bkt"),
            "--config", str(artifacts / "config.ini"),
        ],
        capsys,
    )
    assert code == 2


def test_plotdata_writes_pointwise_table(artifacts, tmp_path, capsys):
    out = tmp_path / "points.csv"
    code, stdout, _ = run_cli(
        [
            "plotdata",
            "--checkpoint", str(artifacts / "checkpoint.bkt"),
            "--config", str(artifacts / "config.ini"),
            "--split", "test",
            "--out", str(out),
        ],
        capsys,
    )
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "instance_index,bucket,h,q,t"
    n_rows = len(lines) - 1
    assert n_rows % 7 == 0 and n_rows > 0
    assert f"wrote {n_rows} rows" in stdout


def test_plotdata_needs_hidden_states(artifacts, tmp_path, capsys):
    prices = tmp_path / "prices.csv"
    write_prices(prices)
    code, _, err = run_cli(
        [
            "plotdata",
            "--checkpoint", str(artifacts / "checkpoint.bkt"),
            "--config", str(artifacts / "config.ini"),
            "--source", "csv",
            "--csv-path", str(prices),
            "--out", str(tmp_path / "points.csv"),
        ],
        capsys,
    )
    assert code == 1
    assert "hidden states" in err


def test_ingest_golden(tmp_path, capsys):
    src = tmp_path / "prices.csv"
    src.write_text("date,close\n2020-01-02,100.0\n2020-01-03,200.0\n2020-01-06,100.0\n")
    out = tmp_path / "returns.csv"
    code, stdout, _ = run_cli(["ingest", "--csv", str(src), "--out", str(out)], capsys)
    assert code == 0
    assert "wrote 2 returns" in stdout
    r = math.log(200.0) - math.log(100.0)
    lines = out.read_text().splitlines()
    assert lines[0] == "date,log_return,squared_return"
    assert lines[1] == f"2020-01-03,{r!r},{r * r!r}"
    assert lines[2] == f"2020-01-06,{-r!r},{-r * -r!r}"


def test_ingest_missing_input(tmp_path, capsys):
    code, _, err = run_cli(
        ["ingest", "--csv", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o.csv")], capsys
    )
    assert code == 2
    assert "error:" in err


def test_console_script_installed():
    proc = subprocess.run(["bucketformer"], capture_output=True, text=True)
    assert proc.returncode == 1
    assert "error:" in proc.stderr
