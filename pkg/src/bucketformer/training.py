"""Minibatch training with Adam on the batch-mean cross entropy.

Runs are reproducible end to end: the shuffle order of each epoch and
the dropout stream both derive from the configured seed through fixed
stream tags, so equal configs give bitwise-equal histories and weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import SequenceDataset, batches
from .model import EncoderClassifier, class_logits

__all__ = [
    "TrainConfig",
    "EpochStats",
    "History",
    "TrainingDiverged",
    "cross_entropy",
    "mean_cross_entropy",
    "adam_step",
    "train",
]

_INIT_STREAM = 0
_SHUFFLE_STREAM = 1
_DROPOUT_STREAM = 2
_PROB_FLOOR = 1e-12


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries epoch, batch, and parameter norms."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings.  ``early_stop_patience`` of None disables
    early stopping; n stops after n epochs without validation-loss
    improvement."""

    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    early_stop_patience: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {v}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.early_stop_patience}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class History:
    """Per-epoch log.  Train metrics average the minibatch statistics as
    seen during optimisation (dropout active); validation metrics come
    from a full inference pass at epoch end."""

    epochs: list[EpochStats]

    HEADER = ["epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy"]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.HEADER)
            for e in self.epochs:
                writer.writerow(
                    [e.epoch, repr(e.train_loss), repr(e.train_accuracy),
                     repr(e.val_loss), repr(e.val_accuracy)]
                )

    @classmethod
    def read_csv(cls, path) -> "History":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            if next(reader) != cls.HEADER:
                raise ValueError("unexpected history header")
            rows = [
                EpochStats(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]))
                for r in reader
            ]
        return cls(epochs=rows)


def _validate_distribution(p: np.ndarray, label: str) -> None:
    if p.ndim != 1:
        raise ValueError(f"{label} must be a 1-D distribution, got shape {p.shape}")
    if np.any(p < 0):
        raise ValueError(f"{label} has negative entries")
    if abs(p.sum() - 1.0) > 1e-8:
        raise ValueError(f"{label} sums to {p.sum()!r}, not 1")


def cross_entropy(p, q) -> float:
    """H(P, Q) = -sum_j p_j ln q_j with q clamped to [1e-12, 1].

    Both arguments must be probability vectors of equal length; the
    clamp keeps one-hot targets against confident wrong predictions
    finite.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"distribution shapes {p.shape} and {q.shape} differ")
    _validate_distribution(p, "p")
    _validate_distribution(q, "q")
    return float(-(p * np.log(np.clip(q, _PROB_FLOOR, 1.0))).sum())


def mean_cross_entropy(targets: np.ndarray, preds: np.ndarray) -> float:
    """Row-mean of H(target_i, pred_i) with the same clamp as cross_entropy."""
    targets = np.asarray(targets, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    if targets.shape != preds.shape:
        raise ValueError(f"shapes {targets.shape} and {preds.shape} differ")
    per_row = -(targets * np.log(np.clip(preds, _PROB_FLOOR, 1.0))).sum(axis=-1)
    return float(per_row.mean())


def adam_step(params, cfg: TrainConfig, t: int) -> None:
    """One Adam update in place.  ``t`` is the global step count starting
    at 1 and shared across epochs; parameters with no gradient are left
    untouched."""
    if t < 1:
        raise ValueError(f"step count must be >= 1, got {t}")
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for p in params:
        g = p.grad
        if g is None:
            continue
        p.m *= cfg.beta1
        p.m += (1.0 - cfg.beta1) * g
        p.v *= cfg.beta2
        p.v += (1.0 - cfg.beta2) * (g * g)
        p.value -= cfg.learning_rate * (p.m / bc1) / (np.sqrt(p.v / bc2) + cfg.epsilon)


def _eval_pass(model: EncoderClassifier, ds: SequenceDataset, batch_size: int = 256) -> tuple[float, float]:
    """Inference loss and accuracy over a dataset, in chronological order."""
    loss_sum = 0.0
    correct = 0
    for lo in range(0, len(ds), batch_size):
        xb = np.ascontiguousarray(ds.windows[lo : lo + batch_size])
        tb = ds.targets[lo : lo + batch_size]
        logits = class_logits(model, ad.constant(xb), "infer", None)
        probs = ad.softmax(logits).value
        loss_sum += mean_cross_entropy(tb, probs) * xb.shape[0]
        correct += int((probs.argmax(axis=1) == tb.argmax(axis=1)).sum())
    n = len(ds)
    return loss_sum / n, correct / n


def _param_norms(model: EncoderClassifier) -> dict[str, float]:
    return {p.name: float(np.linalg.norm(p.value)) for p in model.parameters()}


def train(
    model: EncoderClassifier,
    train_ds: SequenceDataset,
    val_ds: SequenceDataset,
    cfg: TrainConfig,
    log=None,
) -> History:
    """Optimise ``model`` in place and return the per-epoch history.

    Training windows are reshuffled every epoch from a seeded stream;
    the short final batch is kept.  A non-finite loss aborts immediately
    with diagnostics rather than continuing from poisoned state.
    """
    if len(train_ds) < 1 or len(val_ds) < 1:
        raise ValueError("train and validation sets must be nonempty")
    dropout_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _DROPOUT_STREAM)))
    params = model.parameters()
    history: list[EpochStats] = []
    best_val = np.inf
    stale = 0
    t = 0
    for epoch in range(1, cfg.epochs + 1):
        loss_sum = 0.0
        correct = 0
        seen = 0
        epoch_seed = np.random.SeedSequence((cfg.seed, _SHUFFLE_STREAM, epoch))
        for batch_idx, (xb, tb) in enumerate(batches(train_ds, cfg.batch_size, epoch_seed)):
            logits = class_logits(model, ad.constant(xb), "train", dropout_rng)
            loss = ad.mean_all(ad.softmax_cross_entropy(logits, ad.constant(tb)), "batch_loss")
            loss_value = float(loss.value)
            if not np.isfinite(loss_value):
                raise TrainingDiverged(
                    f"non-finite loss {loss_value} at epoch {epoch}, batch {batch_idx}; "
                    f"parameter norms: {_param_norms(model)}"
                )
            ad.backward(loss)
            t += 1
            adam_step(params, cfg, t)
            probs = ad.softmax(logits).value
            correct += int((probs.argmax(axis=1) == tb.argmax(axis=1)).sum())
            loss_sum += loss_value * xb.shape[0]
            seen += xb.shape[0]
        val_loss, val_acc = _eval_pass(model, val_ds)
        stats = EpochStats(
            epoch=epoch,
            train_loss=loss_sum / seen,
            train_accuracy=correct / seen,
            val_loss=val_loss,
            val_accuracy=val_acc,
        )
        history.append(stats)
        if log is not None:
            log(stats)
        if cfg.early_stop_patience is not None:
            if val_loss < best_val - 1e-12:
                best_val = val_loss
                stale = 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break
    return History(epochs=history)
