"""Windowed classification datasets from scalar series.

A series becomes fixed-length windows of embedded observations; the
value one step past each window (or its square) is mapped to one of k
equal-mass buckets whose boundaries are empirical quantiles fit on the
training portion only.  Splits are chronological throughout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .embedding import EmbeddingConfig, PositionalMatrix, embed_series, positional_matrix

__all__ = [
    "TimeSeries",
    "BucketSpec",
    "SequenceDataset",
    "SplitConfig",
    "Splits",
    "fit_buckets",
    "bucket_of",
    "bucket_of_many",
    "one_hot",
    "make_windows",
    "split",
    "batches",
    "prepare_splits",
    "write_snapshot",
    "read_snapshot",
]

TARGET_KINDS = ("next-value", "next-square")


@dataclass(frozen=True)
class TimeSeries:
    """Ordered scalar observations, optionally with aligned hidden states.

    For simulated data ``hidden`` has one extra leading entry (the state
    before the first observation), so ``hidden[n] - hidden[n-1] ==
    values[n-1]``.  Market series carry no hidden states.
    """

    values: np.ndarray
    hidden: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise ValueError(f"series must be 1-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("series contains non-finite values")
        if self.hidden is not None:
            hidden = np.asarray(self.hidden, dtype=np.float64)
            object.__setattr__(self, "hidden", hidden)
            if hidden.shape != (values.shape[0] + 1,):
                raise ValueError(
                    f"hidden states must have length {values.shape[0] + 1}, got {hidden.shape}"
                )

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class BucketSpec:
    """k-1 strictly increasing boundaries defining k right-closed buckets.

    Bucket j (1-based) is ]boundaries[j-2], boundaries[j-1]]; values at
    or below the first boundary fall in bucket 1, values above the last
    in bucket k.
    """

    boundaries: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64)
        object.__setattr__(self, "boundaries", b)
        if b.ndim != 1 or b.shape[0] < 1:
            raise ValueError(f"need at least one boundary, got shape {b.shape}")
        if not np.all(np.isfinite(b)):
            raise ValueError("boundaries must be finite")
        if not np.all(np.diff(b) > 0):
            raise ValueError("boundaries must be strictly increasing")

    @property
    def k(self) -> int:
        return self.boundaries.shape[0] + 1


def fit_buckets(values: np.ndarray, k: int) -> BucketSpec:
    """Boundaries at the j/k empirical quantiles, j=1..k-1.

    Quantiles interpolate linearly between order statistics at fractional
    rank (n-1) * j / k (the numpy default estimator).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError(f"values must be 1-D, got shape {values.shape}")
    if k < 2:
        raise ValueError(f"need at least 2 buckets, got k={k}")
    if values.shape[0] < k:
        raise ValueError(f"need at least k={k} values, got {values.shape[0]}")
    if np.unique(values).shape[0] < k:
        raise ValueError(f"need at least k={k} distinct values to fit k buckets")
    probs = np.arange(1, k) / k
    boundaries = np.quantile(values, probs, method="linear")
    return BucketSpec(boundaries=boundaries)


def bucket_of(value: float, spec: BucketSpec) -> int:
    """1-based bucket index of a scalar; boundary values go to the lower bucket."""
    return int(np.searchsorted(spec.boundaries, value, side="left")) + 1


def bucket_of_many(values: np.ndarray, spec: BucketSpec) -> np.ndarray:
    """Vectorised :func:`bucket_of`: (n,) -> (n,) of 1-based indices."""
    values = np.asarray(values, dtype=np.float64)
    return np.searchsorted(spec.boundaries, values, side="left") + 1


def one_hot(bucket_indices: np.ndarray, k: int) -> np.ndarray:
    """1-based bucket indices -> (n, k) one-hot rows."""
    idx = np.asarray(bucket_indices, dtype=np.int64) - 1
    if np.any(idx < 0) or np.any(idx >= k):
        raise ValueError("bucket index outside 1..k")
    out = np.zeros((idx.shape[0], k), dtype=np.float64)
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out


@dataclass(frozen=True)
class SequenceDataset:
    """Aligned window inputs and bucket targets.

    windows        (N, l, d) embedded inputs
    targets        (N, k) one-hot bucket rows
    target_scalars (N,) raw value being bucketed
    raw_windows    (N, l) the scalars the naive baseline averages
                   (observations for next-value, their squares for next-square)
    oracle_h       (N,) hidden state governing each target, or None
    start_indices  (N,) 0-based position of each window in the series
    """

    windows: np.ndarray
    targets: np.ndarray
    target_scalars: np.ndarray
    raw_windows: np.ndarray
    start_indices: np.ndarray
    target_kind: str
    oracle_h: np.ndarray | None = None

    def __post_init__(self):
        n = self.windows.shape[0]
        if self.target_kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.target_kind!r}")
        for name in ("targets", "target_scalars", "raw_windows", "start_indices"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} length does not match {n} windows")
        if self.oracle_h is not None and self.oracle_h.shape[0] != n:
            raise ValueError(f"oracle_h length does not match {n} windows")

    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def k(self) -> int:
        return self.targets.shape[1]

    def take(self, indices: np.ndarray) -> "SequenceDataset":
        """Row subset (copying) in the given order."""
        indices = np.asarray(indices)
        return SequenceDataset(
            windows=self.windows[indices],
            targets=self.targets[indices],
            target_scalars=self.target_scalars[indices],
            raw_windows=self.raw_windows[indices],
            start_indices=self.start_indices[indices],
            target_kind=self.target_kind,
            oracle_h=None if self.oracle_h is None else self.oracle_h[indices],
        )


def _window_starts(n_windows: int, l: int, method: int) -> np.ndarray:
    if method == 1:
        return np.arange(0, n_windows, l)
    if method == 2:
        return np.arange(n_windows)
    raise ValueError(f"unknown windowing method {method}")


def _target_scalars(values: np.ndarray, l: int, target: str) -> np.ndarray:
    nexts = values[l:]
    return nexts * nexts if target == "next-square" else nexts.copy()


def _build(
    series: TimeSeries,
    l: int,
    starts: np.ndarray,
    target: str,
    embedding: EmbeddingConfig,
    buckets: BucketSpec,
    positional: PositionalMatrix | None,
) -> SequenceDataset:
    values = series.values
    embedded = embed_series(values, embedding.d)
    # sliding_window_view puts the window axis last: (m-l+1, d, l)
    all_windows = np.lib.stride_tricks.sliding_window_view(embedded, l, axis=0)
    windows = np.ascontiguousarray(all_windows[starts].transpose(0, 2, 1))
    if embedding.use_positional:
        if positional is None:
            positional = positional_matrix(l, embedding.d)
        windows = windows + positional.table
    raw = values * values if target == "next-square" else values
    raw_windows = np.lib.stride_tricks.sliding_window_view(raw, l)[starts].copy()
    scalars = _target_scalars(values, l, target)[starts]
    oracle_h = None if series.hidden is None else series.hidden[starts + l].copy()
    return SequenceDataset(
        windows=windows,
        targets=one_hot(bucket_of_many(scalars, buckets), buckets.k),
        target_scalars=scalars,
        raw_windows=raw_windows,
        start_indices=starts.copy(),
        target_kind=target,
        oracle_h=oracle_h,
    )


def make_windows(
    series: TimeSeries,
    l: int,
    method: int = 2,
    target: str = "next-value",
    embedding: EmbeddingConfig | None = None,
    buckets: BucketSpec | None = None,
    positional: PositionalMatrix | None = None,
    n_bootstrap: int = 10,
    seed: int = 0,
) -> SequenceDataset | list[SequenceDataset]:
    """Window a series into model inputs and bucket targets.

    Methods: 1 non-overlapping windows, 2 every window (default),
    3 a list of l phase-shifted non-overlapping datasets, 4 a list of
    ``n_bootstrap`` with-replacement resamples of the method-2 windows.
    A series of m observations yields m - l windows under method 2; the
    window starting at position s predicts the bucket of observation
    s + l (or its square).
    """
    if target not in TARGET_KINDS:
        raise ValueError(f"unknown target kind {target!r}")
    if embedding is None:
        raise ValueError("an EmbeddingConfig is required")
    if buckets is None:
        raise ValueError("a fitted BucketSpec is required")
    if l < 1:
        raise ValueError(f"window length must be >= 1, got {l}")
    m = len(series)
    if m <= l:
        raise ValueError(f"series of length {m} too short for windows of length {l}")
    n_windows = m - l

    if method in (1, 2):
        starts = _window_starts(n_windows, l, method)
        return _build(series, l, starts, target, embedding, buckets, positional)
    if method == 3:
        out = []
        for phase in range(l):
            starts = np.arange(phase, n_windows, l)
            if starts.size == 0:
                raise ValueError(f"series too short for phase {phase} of method 3")
            out.append(_build(series, l, starts, target, embedding, buckets, positional))
        return out
    if method == 4:
        if n_bootstrap < 1:
            raise ValueError(f"need at least one bootstrap resample, got {n_bootstrap}")
        base = _build(series, l, np.arange(n_windows), target, embedding, buckets, positional)
        rng = np.random.default_rng(seed)
        return [base.take(rng.integers(0, n_windows, n_windows)) for _ in range(n_bootstrap)]
    raise ValueError(f"unknown windowing method {method}")


@dataclass(frozen=True)
class SplitConfig:
    """Chronological split fractions.

    The first ``train_fraction`` of the windows form train+validation;
    the chronologically last ``validation_fraction`` of those are the
    validation set and everything after the train block is the test set.
    """

    train_fraction: float = 0.8
    validation_fraction: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError(
                f"validation_fraction must be in [0, 1), got {self.validation_fraction}"
            )


@dataclass(frozen=True)
class Splits:
    train: SequenceDataset
    validation: SequenceDataset
    test: SequenceDataset
    buckets: BucketSpec


def split(
    dataset: SequenceDataset, cfg: SplitConfig
) -> tuple[SequenceDataset, SequenceDataset, SequenceDataset]:
    """Chronological (train, validation, test) partition of a dataset."""
    n = len(dataset)
    n_fit = int(n * cfg.train_fraction)
    n_val = int(n_fit * cfg.validation_fraction)
    n_train = n_fit - n_val
    if n_train < 1 or n_fit >= n:
        raise ValueError(
            f"split of {n} windows leaves an empty partition "
            f"(train {n_train}, validation {n_val}, test {n - n_fit})"
        )
    if cfg.validation_fraction > 0.0 and n_val < 1:
        raise ValueError(f"split of {n} windows leaves an empty validation set")
    idx = np.arange(n)
    return (
        dataset.take(idx[:n_train]),
        dataset.take(idx[n_train:n_fit]),
        dataset.take(idx[n_fit:]),
    )


def batches(
    train: SequenceDataset,
    batch_size: int,
    epoch_seed=None,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (windows, targets) minibatches covering the set exactly once.

    With ``epoch_seed`` (int, tuple of ints, or SeedSequence) the order
    is a seeded permutation; None keeps chronological order.  The final
    batch may be short.
    """
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    n = len(train)
    if epoch_seed is None:
        order = np.arange(n)
    else:
        seq = epoch_seed if isinstance(epoch_seed, np.random.SeedSequence) else np.random.SeedSequence(epoch_seed)
        order = np.random.default_rng(seq).permutation(n)
    for lo in range(0, n, batch_size):
        sel = order[lo : lo + batch_size]
        yield np.ascontiguousarray(train.windows[sel]), train.targets[sel]


def prepare_splits(
    series: TimeSeries,
    l: int,
    k: int,
    target: str = "next-value",
    embedding: EmbeddingConfig | None = None,
    split_cfg: SplitConfig | None = None,
    method: int = 2,
) -> Splits:
    """Full pipeline: window, fit buckets on the training portion, split.

    Bucket boundaries are fit on the target scalars of the first
    ``train_fraction`` of windows only, so nothing past the training
    block can influence them.
    """
    if method not in (1, 2):
        raise ValueError("prepare_splits supports sequential methods 1 and 2 only")
    if embedding is None:
        raise ValueError("an EmbeddingConfig is required")
    split_cfg = split_cfg or SplitConfig()
    m = len(series)
    if m <= l:
        raise ValueError(f"series of length {m} too short for windows of length {l}")
    starts = _window_starts(m - l, l, method)
    scalars = _target_scalars(series.values, l, target)[starts]
    n_fit = int(starts.shape[0] * split_cfg.train_fraction)
    buckets = fit_buckets(scalars[:n_fit], k)
    dataset = make_windows(series, l, method, target, embedding, buckets)
    train, validation, test = split(dataset, split_cfg)
    return Splits(train=train, validation=validation, test=test, buckets=buckets)


# ---------------------------------------------------------------------------
# snapshot export

_SNAPSHOT_HEADER = ["window_start_index", "target_scalar", "target_bucket", "oracle_h"]


def write_snapshot(dataset: SequenceDataset, path) -> None:
    """Write the per-window summary CSV (windows are recomputable from the series)."""
    bucket_idx = np.argmax(dataset.targets, axis=1) + 1
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_SNAPSHOT_HEADER)
        for i in range(len(dataset)):
            oracle = "" if dataset.oracle_h is None else repr(float(dataset.oracle_h[i]))
            writer.writerow(
                [
                    int(dataset.start_indices[i]),
                    repr(float(dataset.target_scalars[i])),
                    int(bucket_idx[i]),
                    oracle,
                ]
            )


def read_snapshot(path) -> dict[str, np.ndarray | None]:
    """Read a snapshot CSV back into aligned arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _SNAPSHOT_HEADER:
            raise ValueError(f"unexpected snapshot header {header}")
        starts, scalars, bucket_idx, oracle = [], [], [], []
        for row in reader:
            starts.append(int(row[0]))
            scalars.append(float(row[1]))
            bucket_idx.append(int(row[2]))
            oracle.append(float(row[3]) if row[3] else np.nan)
    oracle_arr = np.array(oracle)
    return {
        "window_start_index": np.array(starts, dtype=np.int64),
        "target_scalar": np.array(scalars),
        "target_bucket": np.array(bucket_idx, dtype=np.int64),
        "oracle_h": None if np.all(np.isnan(oracle_arr)) else oracle_arr,
    }
