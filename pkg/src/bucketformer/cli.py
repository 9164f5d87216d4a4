"""Command-line entry points.

Subcommands: ``simulate`` writes a trajectory CSV, ``train`` runs the
full pipeline and saves checkpoint/history/evaluation artifacts,
``evaluate`` scores a saved checkpoint, ``ingest`` converts a price CSV
to returns, and ``plotdata`` dumps the model-vs-oracle table.  Exit
codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import evaluation, market, ou, runconfig
from .data import SequenceDataset, Splits, prepare_splits
from .embedding import EmbeddingConfig
from .model import (
    CheckpointError,
    ConfigError,
    init,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
)
from .ou import target_distributions
from .runconfig import ConfigFileError, RunConfig, SCHEMA, default_config, read_config, write_config
from .training import TrainingDiverged, train

__all__ = ["main"]


class UsageError(Exception):
    """Bad flags or configuration; mapped to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# flag spelling for schema entries whose bare key would collide or confuse
_FLAG_OVERRIDES = {
    ("train", "seed"): "train-seed",
    ("train", "epsilon"): "adam-epsilon",
    ("ou", "theta"): "ou-theta",
    ("ou", "mu"): "ou-mu",
    ("ou", "sigma"): "ou-sigma",
    ("ou", "dt"): "ou-dt",
    ("ou", "h0"): "ou-h0",
    ("ou", "seed"): "ou-seed",
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="INI file with run settings")
    parser.add_argument("--seed", type=int, help="master seed overriding all seeded streams")
    for section, key, _, parse, _ in SCHEMA:
        flag = _FLAG_OVERRIDES.get((section, key), key.replace("_", "-"))
        parser.add_argument(
            f"--{flag}",
            dest=f"{section}__{key}",
            type=str,
            default=None,
            help=f"override [{section}] {key}",
            metavar="V",
        )


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults < config file < explicit flags < --seed."""
    cfg = read_config(args.config) if args.config else default_config()
    flat = {}
    for section, key, path, parse, fmt in SCHEMA:
        raw = getattr(args, f"{section}__{key}", None)
        if raw is None:
            obj = cfg
            for attr in path:
                obj = getattr(obj, attr)
            flat[(section, key)] = obj
        else:
            try:
                flat[(section, key)] = parse(raw)
            except ValueError as exc:
                raise UsageError(f"bad value for --{key.replace('_', '-')}: {exc}") from exc
    cfg = runconfig._assemble(flat)
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be >= 0")
        cfg = cfg.with_seed(args.seed)
    return cfg


def _build_series(cfg: RunConfig):
    if cfg.source == "simulate":
        return ou.simulate(cfg.ou, cfg.observations).to_time_series()
    return market.log_returns(market.load_prices(cfg.csv_path)).to_time_series()


def _build_splits(cfg: RunConfig) -> Splits:
    series = _build_series(cfg)
    embedding = EmbeddingConfig(d=cfg.model.d_model, use_positional=cfg.use_positional)
    return prepare_splits(
        series,
        l=cfg.model.seq_len,
        k=cfg.model.n_classes,
        target=cfg.task,
        embedding=embedding,
        split_cfg=cfg.split,
        method=cfg.method,
    )


def _split_report(
    cfg: RunConfig, splits: Splits, name: str, ds: SequenceDataset, model
) -> evaluation.EvalReport:
    preds = predict_proba(model, ds.windows)
    oracle = None
    if ds.oracle_h is not None:
        oracle = target_distributions(ds.oracle_h, cfg.ou, splits.buckets)
    report = evaluation.entropy_panel(preds, ds.targets, oracle, split=name)
    uniform, naive = evaluation.baseline_report(ds, splits.buckets)
    return dataclasses.replace(report, baseline_uniform=uniform, baseline_naive=naive)


def _reports_json(cfg: RunConfig, splits: Splits, model, names=("train", "validation", "test")) -> str:
    table = {
        "train": splits.train,
        "validation": splits.validation,
        "test": splits.test,
    }
    out = {name: _split_report(cfg, splits, name, table[name], model).to_json_dict() for name in names}
    return json.dumps(out, sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out) if args.out else Path(cfg.outdir) / "trajectory.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    traj = ou.simulate(cfg.ou, cfg.observations)
    ou.write_trajectory(traj, out)
    print(f"wrote {cfg.observations} observations ({cfg.observations + 1} states) to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    splits = _build_splits(cfg)
    model = init(cfg.model, seed=cfg.train.seed)
    print(
        f"training on {len(splits.train)} windows "
        f"(val {len(splits.validation)}, test {len(splits.test)}), "
        f"{model.param_count()} parameters"
    )

    def log(stats):
        print(
            f"epoch {stats.epoch:3d}  train loss {stats.train_loss:.4f} "
            f"acc {stats.train_accuracy:.4f}  val loss {stats.val_loss:.4f} "
            f"acc {stats.val_accuracy:.4f}"
        )

    history = train(model, splits.train, splits.validation, cfg.train, log=log)
    save_checkpoint(model, outdir / "checkpoint.bkt")
    history.write_csv(outdir / "history.csv")
    report = _reports_json(cfg, splits, model)
    (outdir / "eval.json").write_text(report + "\n")
    write_config(cfg, outdir / "config.ini")
    print(report)
    print(f"artifacts in {outdir}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    model = load_checkpoint(args.checkpoint, expected_config=cfg.model)
    splits = _build_splits(cfg)
    names = ("train", "validation", "test") if args.split == "all" else (args.split,)
    report = _reports_json(cfg, splits, model, names)
    if args.out:
        Path(args.out).write_text(report + "\n")
    print(report)
    return 0


def _cmd_ingest(args) -> int:
    prices = market.load_prices(args.csv)
    market.write_returns(prices, args.out)
    print(f"wrote {len(prices) - 1} returns to {args.out}")
    return 0


def _cmd_plotdata(args) -> int:
    cfg = _resolve_config(args)
    model = load_checkpoint(args.checkpoint, expected_config=cfg.model)
    splits = _build_splits(cfg)
    ds = {"train": splits.train, "validation": splits.validation, "test": splits.test}[args.split]
    if ds.oracle_h is None:
        raise UsageError("plotdata requires simulated data with hidden states")
    preds = predict_proba(model, ds.windows)
    oracle = target_distributions(ds.oracle_h, cfg.ou, splits.buckets)
    evaluation.write_pointwise_csv(args.out, ds.oracle_h, preds, oracle)
    print(f"wrote {len(ds) * ds.k} rows to {args.out}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="bucketformer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_sim = sub.add_parser("simulate", help="write a simulated trajectory CSV")
    p_sim.add_argument("--out", help="output CSV path (default <outdir>/trajectory.csv)")
    _add_config_flags(p_sim)
    p_sim.set_defaults(func=_cmd_simulate)

    p_train = sub.add_parser("train", help="train a classifier end to end")
    _add_config_flags(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a saved checkpoint")
    p_eval.add_argument("--checkpoint", required=True, help="path to a saved model")
    p_eval.add_argument(
        "--split", choices=["train", "validation", "test", "all"], default="test"
    )
    p_eval.add_argument("--out", help="also write the JSON report here")
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=_cmd_evaluate)

    p_ingest = sub.add_parser("ingest", help="convert a price CSV to returns")
    p_ingest.add_argument("--csv", required=True, help="input date,close CSV")
    p_ingest.add_argument("--out", required=True, help="output returns CSV")
    p_ingest.set_defaults(func=_cmd_ingest)

    p_plot = sub.add_parser("plotdata", help="dump the model-vs-oracle probability table")
    p_plot.add_argument("--checkpoint", required=True, help="path to a saved model")
    p_plot.add_argument("--split", choices=["train", "validation", "test"], default="test")
    p_plot.add_argument("--out", required=True, help="output CSV path")
    _add_config_flags(p_plot)
    p_plot.set_defaults(func=_cmd_plotdata)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigFileError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, CheckpointError, TrainingDiverged, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
