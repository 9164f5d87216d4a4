"""Aggregate run configuration with INI file round-trip.

One RunConfig carries everything a command needs: task and data source,
architecture, optimisation, simulation, split, and embedding settings.
Files use flat ``key = value`` pairs under one section per component;
serialising and re-reading a config reproduces it exactly.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace

from .data import TARGET_KINDS, SplitConfig
from .model import ModelConfig
from .ou import OUConfig
from .training import TrainConfig

__all__ = ["RunConfig", "ConfigFileError", "read_config", "write_config", "default_config"]


class ConfigFileError(ValueError):
    """Unreadable or invalid configuration file."""


@dataclass(frozen=True)
class RunConfig:
    """Settings for a full run.  ``observations`` is the simulated series
    length; ``csv_path`` supplies prices when the source is 'csv'."""

    task: str = "next-value"
    source: str = "simulate"
    csv_path: str | None = None
    outdir: str = "runs/latest"
    observations: int = 24131
    method: int = 2
    use_positional: bool = False
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    ou: OUConfig = OUConfig()
    split: SplitConfig = SplitConfig()

    def __post_init__(self):
        if self.task not in TARGET_KINDS:
            raise ConfigFileError(f"task must be one of {TARGET_KINDS}, got {self.task!r}")
        if self.source not in ("simulate", "csv"):
            raise ConfigFileError(f"source must be 'simulate' or 'csv', got {self.source!r}")
        if self.source == "csv" and not self.csv_path:
            raise ConfigFileError("source 'csv' requires csv_path")
        if self.method not in (1, 2):
            raise ConfigFileError(f"method must be 1 or 2, got {self.method}")
        if self.observations < 2:
            raise ConfigFileError(f"observations must be >= 2, got {self.observations}")

    def with_seed(self, seed: int) -> "RunConfig":
        """Override every stochastic stream with one master seed."""
        return replace(
            self,
            train=replace(self.train, seed=seed),
            ou=replace(self.ou, seed=seed),
        )


def _fmt_float(v) -> str:
    return repr(float(v))


def _parse_bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_units(s: str) -> tuple[int, ...]:
    return tuple(int(part) for part in s.split(",") if part.strip())


def _fmt_units(units) -> str:
    return ",".join(str(u) for u in units)


def _parse_opt_int(s: str):
    return None if s.strip().lower() in ("", "none") else int(s)


def _fmt_opt_int(v) -> str:
    return "none" if v is None else str(v)


def _parse_opt_str(s: str):
    return s or None


def _fmt_opt_str(v) -> str:
    return v or ""


# (section, key, attribute path, parse, format)
SCHEMA = [
    ("run", "task", ("task",), str, str),
    ("run", "source", ("source",), str, str),
    ("run", "csv_path", ("csv_path",), _parse_opt_str, _fmt_opt_str),
    ("run", "outdir", ("outdir",), str, str),
    ("run", "observations", ("observations",), int, str),
    ("run", "method", ("method",), int, str),
    ("embedding", "use_positional", ("use_positional",), _parse_bool, lambda v: "true" if v else "false"),
    ("model", "seq_len", ("model", "seq_len"), int, str),
    ("model", "d_model", ("model", "d_model"), int, str),
    ("model", "n_classes", ("model", "n_classes"), int, str),
    ("model", "num_heads", ("model", "num_heads"), int, str),
    ("model", "head_size", ("model", "head_size"), int, str),
    ("model", "num_blocks", ("model", "num_blocks"), int, str),
    ("model", "ff_dim", ("model", "ff_dim"), int, str),
    ("model", "mlp_units", ("model", "mlp_units"), _parse_units, _fmt_units),
    ("model", "dropout", ("model", "dropout"), float, _fmt_float),
    ("model", "mlp_dropout", ("model", "mlp_dropout"), float, _fmt_float),
    ("model", "layernorm_epsilon", ("model", "layernorm_epsilon"), float, _fmt_float),
    ("model", "norm_placement", ("model", "norm_placement"), str, str),
    ("train", "epochs", ("train", "epochs"), int, str),
    ("train", "batch_size", ("train", "batch_size"), int, str),
    ("train", "learning_rate", ("train", "learning_rate"), float, _fmt_float),
    ("train", "beta1", ("train", "beta1"), float, _fmt_float),
    ("train", "beta2", ("train", "beta2"), float, _fmt_float),
    ("train", "epsilon", ("train", "epsilon"), float, _fmt_float),
    ("train", "seed", ("train", "seed"), int, str),
    ("train", "early_stop_patience", ("train", "early_stop_patience"), _parse_opt_int, _fmt_opt_int),
    ("ou", "theta", ("ou", "theta"), float, _fmt_float),
    ("ou", "mu", ("ou", "mu"), float, _fmt_float),
    ("ou", "sigma", ("ou", "sigma"), float, _fmt_float),
    ("ou", "dt", ("ou", "dt"), float, _fmt_float),
    ("ou", "h0", ("ou", "h0"), float, _fmt_float),
    ("ou", "seed", ("ou", "seed"), int, str),
    ("split", "train_fraction", ("split", "train_fraction"), float, _fmt_float),
    ("split", "validation_fraction", ("split", "validation_fraction"), float, _fmt_float),
]

_SUBCONFIGS = {"model": ModelConfig, "train": TrainConfig, "ou": OUConfig, "split": SplitConfig}


def default_config() -> RunConfig:
    return RunConfig()


def _assemble(flat: dict[tuple[str, str], object]) -> RunConfig:
    top: dict[str, object] = {}
    nested: dict[str, dict[str, object]] = {name: {} for name in _SUBCONFIGS}
    for section, key, path, _, _ in SCHEMA:
        if (section, key) not in flat:
            continue
        value = flat[(section, key)]
        if len(path) == 1:
            top[path[0]] = value
        else:
            nested[path[0]][path[1]] = value
    try:
        for name, cls in _SUBCONFIGS.items():
            top[name] = cls(**nested[name])
        return RunConfig(**top)
    except (ValueError, TypeError) as exc:
        raise ConfigFileError(str(exc)) from exc


def read_config(path) -> RunConfig:
    """Parse an INI file; unknown sections or keys are rejected."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigFileError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigFileError(f"invalid config {path}: {exc}") from exc
    known = {(s, k): parse for s, k, _, parse, _ in SCHEMA}
    flat: dict[tuple[str, str], object] = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if (section, key) not in known:
                raise ConfigFileError(f"{path}: unknown setting [{section}] {key}")
            try:
                flat[(section, key)] = known[(section, key)](raw)
            except ValueError as exc:
                raise ConfigFileError(f"{path}: bad value for [{section}] {key}: {exc}") from exc
    return _assemble(flat)


def write_config(cfg: RunConfig, path) -> None:
    """Serialise every field; read_config(write_config(cfg)) == cfg."""
    parser = configparser.ConfigParser()
    for section, key, path_, _, fmt in SCHEMA:
        obj = cfg
        for attr in path_:
            obj = getattr(obj, attr)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, fmt(obj))
    with open(path, "w") as fh:
        parser.write(fh)
