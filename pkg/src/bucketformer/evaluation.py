"""Scoring panels: accuracy, entropy comparisons, and baselines.

For simulated data the exact conditional bucket law T is available per
window, so reports can show how far the model's mean cross entropy
H(T, Q) sits above the irreducible noise floor H(T, T).  Baselines are
the uniform guess (1/k) and, for squared targets, the window-mean
persistence rule.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .data import BucketSpec, SequenceDataset, bucket_of_many
from .training import mean_cross_entropy

__all__ = [
    "EvalReport",
    "categorical_accuracy",
    "entropy_panel",
    "pointwise_table",
    "write_pointwise_csv",
    "baseline_report",
]

_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class EvalReport:
    """One split's metrics.  Oracle and baseline fields stay None when
    unavailable and are omitted from the JSON form."""

    split: str
    mean_hpq: float
    accuracy: float
    n: int
    mean_htq: float | None = None
    mean_htt: float | None = None
    baseline_uniform: float | None = None
    baseline_naive: float | None = None

    def to_json_dict(self) -> dict:
        out = {"split": self.split, "mean_hpq": self.mean_hpq, "accuracy": self.accuracy}
        for key in ("mean_htq", "mean_htt", "baseline_uniform", "baseline_naive"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        out["n"] = self.n
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


def categorical_accuracy(preds: np.ndarray, targets: np.ndarray) -> float:
    """Fraction of rows whose argmax matches; ties break to the lowest index."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.ndim != 2:
        raise ValueError(f"need matching (n, k) arrays, got {preds.shape} and {targets.shape}")
    if preds.shape[0] == 0:
        raise ValueError("cannot score an empty prediction set")
    return float((preds.argmax(axis=1) == targets.argmax(axis=1)).mean())


def _row_entropies(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return -(p * np.log(np.clip(q, _PROB_FLOOR, 1.0))).sum(axis=-1)


def entropy_panel(
    preds: np.ndarray,
    targets: np.ndarray,
    oracle: np.ndarray | None = None,
    split: str = "",
) -> EvalReport:
    """Mean H(P, Q) and accuracy; with oracle rows T also mean H(T, Q)
    against the noise floor mean H(T, T)."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.ndim != 2:
        raise ValueError(f"need matching (n, k) arrays, got {preds.shape} and {targets.shape}")
    mean_htq = mean_htt = None
    if oracle is not None:
        oracle = np.asarray(oracle, dtype=np.float64)
        if oracle.shape != preds.shape:
            raise ValueError(f"oracle shape {oracle.shape} does not match {preds.shape}")
        mean_htq = float(_row_entropies(oracle, preds).mean())
        mean_htt = float(_row_entropies(oracle, oracle).mean())
    return EvalReport(
        split=split,
        mean_hpq=mean_cross_entropy(targets, preds),
        accuracy=categorical_accuracy(preds, targets),
        n=preds.shape[0],
        mean_htq=mean_htq,
        mean_htt=mean_htt,
        baseline_uniform=1.0 / preds.shape[1],
    )


def pointwise_table(
    h_values: np.ndarray,
    preds: np.ndarray,
    oracle: np.ndarray,
) -> list[tuple[int, int, float, float, float]]:
    """Long-form rows (instance_index, bucket, h, q, t), k rows per instance.

    Sorted by hidden state within each bucket series when written out,
    this is the model-vs-oracle comparison table used for plotting.
    """
    h_values = np.asarray(h_values, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    if oracle is None:
        raise ValueError("pointwise table requires oracle rows")
    oracle = np.asarray(oracle, dtype=np.float64)
    if preds.shape != oracle.shape or preds.ndim != 2:
        raise ValueError(f"need matching (n, k) arrays, got {preds.shape} and {oracle.shape}")
    if h_values.shape[0] != preds.shape[0]:
        raise ValueError("hidden values do not align with predictions")
    rows = []
    for i in range(preds.shape[0]):
        for j in range(preds.shape[1]):
            rows.append((i, j + 1, float(h_values[i]), float(preds[i, j]), float(oracle[i, j])))
    return rows


def write_pointwise_csv(path, h_values, preds, oracle) -> None:
    rows = pointwise_table(h_values, preds, oracle)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance_index", "bucket", "h", "q", "t"])
        for i, bucket, h, q, t in rows:
            writer.writerow([i, bucket, repr(h), repr(q), repr(t)])


def baseline_report(
    dataset: SequenceDataset,
    spec: BucketSpec,
    naive: bool | None = None,
) -> tuple[float, float | None]:
    """(uniform accuracy, naive accuracy or None).

    The uniform guess scores 1/k by construction.  The naive rule
    assigns each window the bucket of its mean raw value; it is only
    meaningful for squared targets, so requesting it elsewhere is an
    error and by default it is reported for squared targets only.
    """
    if naive is None:
        naive = dataset.target_kind == "next-square"
    if naive and dataset.target_kind != "next-square":
        raise ValueError("naive baseline is defined for next-square targets only")
    uniform = 1.0 / dataset.k
    if not naive:
        return uniform, None
    guesses = bucket_of_many(dataset.raw_windows.mean(axis=1), spec)
    actual = dataset.targets.argmax(axis=1) + 1
    return uniform, float((guesses == actual).mean())
