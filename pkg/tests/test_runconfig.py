import dataclasses

import pytest

from bucketformer.model import ModelConfig
from bucketformer.ou import OUConfig
from bucketformer.runconfig import (
    ConfigFileError,
    RunConfig,
    default_config,
    read_config,
    write_config,
)
from bucketformer.training import TrainConfig


def test_default_config_values():
    cfg = default_config()
    assert cfg.task == "next-value"
    assert cfg.source == "simulate"
    assert cfg.observations == 24131
    assert cfg.method == 2
    assert cfg.use_positional is False
    assert cfg.model == ModelConfig()
    assert cfg.train == TrainConfig()
    assert cfg.ou == OUConfig()


def _nondefault_config() -> RunConfig:
    # values chosen to exercise every formatter: floats with full precision,
    # optional ints, tuples, booleans
    return RunConfig(
        task="next-square",
        source="simulate",
        outdir="runs/alt",
        observations=4321,
        method=1,
        use_positional=True,
        model=ModelConfig(
            seq_len=16,
            d_model=8,
            num_heads=2,
            head_size=5,
            num_blocks=2,
            ff_dim=12,
            mlp_units=(10, 4),
            dropout=0.125,
            mlp_dropout=0.3,
            layernorm_epsilon=1e-5,
            norm_placement="post",
        ),
        train=TrainConfig(
            epochs=3,
            batch_size=17,
            learning_rate=0.0012345678901234567,
            beta1=0.85,
            beta2=0.995,
            epsilon=1e-7,
            seed=11,
            early_stop_patience=5,
        ),
        ou=OUConfig(theta=0.5, mu=-1.25, sigma=2.0, dt=0.1, h0=3.0, seed=99),
    )


def test_write_read_roundtrip_exact(tmp_path):
    cfg = _nondefault_config()
    path = tmp_path / "run.ini"
    write_config(cfg, path)
    assert read_config(path) == cfg


def test_roundtrip_preserves_none_patience(tmp_path):
    cfg = dataclasses.replace(
        default_config(), train=TrainConfig(early_stop_patience=None)
    )
    path = tmp_path / "run.ini"
    write_config(cfg, path)
    assert read_config(path).train.early_stop_patience is None


def test_partial_file_keeps_defaults(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nobservations = 500\n\n[train]\nepochs = 2\n")
    cfg = read_config(path)
    assert cfg.observations == 500
    assert cfg.train.epochs == 2
    assert cfg.model == ModelConfig()
    assert cfg.task == "next-value"


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nbogus = 1\n")
    with pytest.raises(ConfigFileError, match=r"unknown setting \[run\] bogus"):
        read_config(path)


def test_unknown_section_rejected(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[nonsense]\nx = 1\n")
    with pytest.raises(ConfigFileError, match="unknown setting"):
        read_config(path)


def test_bad_value_names_key(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nobservations = soon\n")
    with pytest.raises(ConfigFileError, match=r"bad value for \[run\] observations"):
        read_config(path)


def test_bad_boolean_rejected(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[embedding]\nuse_positional = maybe\n")
    with pytest.raises(ConfigFileError, match="use_positional"):
        read_config(path)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigFileError, match="cannot read config"):
        read_config(tmp_path / "absent.ini")


def test_malformed_ini_rejected(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("observations = 5\n")  # key before any section header
    with pytest.raises(ConfigFileError, match="invalid config"):
        read_config(path)


def test_invalid_field_combination_rejected(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nsource = csv\n")  # csv source without a path
    with pytest.raises(ConfigFileError, match="csv_path"):
        read_config(path)


def test_units_formats(tmp_path):
    for text, expected in [("6", (6,)), ("10,4", (10, 4))]:
        path = tmp_path / "cfg.ini"
        path.write_text(f"[model]\nmlp_units = {text}\n")
        assert read_config(path).model.mlp_units == expected


def test_task_validated():
    with pytest.raises(ConfigFileError, match="task"):
        RunConfig(task="forecast")


def test_method_validated():
    with pytest.raises(ConfigFileError, match="method"):
        RunConfig(method=3)


def test_observations_validated():
    with pytest.raises(ConfigFileError, match="observations"):
        RunConfig(observations=1)


def test_with_seed_overrides_both_streams():
    cfg = _nondefault_config()
    seeded = cfg.with_seed(7)
    assert seeded.train.seed == 7
    assert seeded.ou.seed == 7
    assert seeded.train.epochs == cfg.train.epochs
    assert seeded.model == cfg.model
    # original untouched
    assert cfg.train.seed == 11
