"""Discrete mean-reverting state simulator with exact target laws.

The hidden state follows h[n+1] = h[n] + theta*(mu - h[n])*dt +
sigma*sqrt(dt)*eps[n+1] with iid standard normal eps; the observation
is the increment y[n+1] = h[n+1] - h[n].  Conditional on the current
state, the next increment is exactly Gaussian, so the true bucket
distribution of the next observation is a difference of normal CDFs.
That closed form is the benchmark every trained classifier is scored
against.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .data import BucketSpec, TimeSeries

__all__ = [
    "OUConfig",
    "OUTrajectory",
    "NormalLaw",
    "simulate",
    "conditional_law",
    "target_distribution",
    "target_distributions",
    "normal_cdf",
    "write_trajectory",
    "read_trajectory",
]


@dataclass(frozen=True)
class OUConfig:
    """Dynamics parameters: reversion rate, long-run mean, noise scale,
    time step, initial state, and the simulation seed."""

    theta: float = 1.0
    mu: float = 0.0
    sigma: float = 1.0
    dt: float = 1.0
    h0: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("theta", "mu", "sigma", "dt", "h0"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite, got {getattr(self, name)}")
        if self.theta <= 0:
            raise ValueError(f"theta must be > 0, got {self.theta}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")


@dataclass(frozen=True)
class OUTrajectory:
    """m+1 hidden states and the m observed increments between them."""

    hidden: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        if self.hidden.shape[0] != self.observed.shape[0] + 1:
            raise ValueError(
                f"hidden length {self.hidden.shape[0]} must exceed "
                f"observed length {self.observed.shape[0]} by one"
            )

    def to_time_series(self) -> TimeSeries:
        return TimeSeries(values=self.observed, hidden=self.hidden)


@dataclass(frozen=True)
class NormalLaw:
    """Mean and standard deviation of a Gaussian conditional law."""

    mean: float
    std: float


def simulate(config: OUConfig, m: int) -> OUTrajectory:
    """Generate m observations (m+1 hidden states) from a seeded stream.

    Observations are computed as exact differences of the stored hidden
    path, so observed[n] == hidden[n+1] - hidden[n] bitwise.
    """
    if m < 1:
        raise ValueError(f"need at least one observation, got m={m}")
    rng = np.random.default_rng(config.seed)
    eps = rng.standard_normal(m)
    decay = 1.0 - config.theta * config.dt
    drift = config.theta * config.mu * config.dt
    shock = config.sigma * np.sqrt(config.dt)
    hidden = np.empty(m + 1, dtype=np.float64)
    h = float(config.h0)
    hidden[0] = h
    for n in range(m):
        h = decay * h + drift + shock * eps[n]
        hidden[n + 1] = h
    if not np.all(np.isfinite(hidden)):
        raise FloatingPointError("simulation produced non-finite states")
    return OUTrajectory(hidden=hidden, observed=np.diff(hidden))


def conditional_law(h_prev: float, config: OUConfig) -> NormalLaw:
    """Exact law of the next increment given the current state."""
    return NormalLaw(
        mean=config.theta * (config.mu - h_prev) * config.dt,
        std=config.sigma * np.sqrt(config.dt),
    )


def normal_cdf(x) -> np.ndarray:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) / np.sqrt(2.0))


def target_distribution(h_prev: float, config: OUConfig, buckets: BucketSpec) -> np.ndarray:
    """Exact bucket probabilities of the next increment given the state.

    Entry j is the probability mass between consecutive boundaries under
    the conditional Gaussian law; the row sums to one by construction.
    """
    return target_distributions(np.array([h_prev]), config, buckets)[0]


def target_distributions(
    h_prev: np.ndarray, config: OUConfig, buckets: BucketSpec
) -> np.ndarray:
    """Vectorised :func:`target_distribution`: (n,) states -> (n, k) rows."""
    h_prev = np.asarray(h_prev, dtype=np.float64)
    law_mean = config.theta * (config.mu - h_prev) * config.dt
    law_std = config.sigma * np.sqrt(config.dt)
    z = (buckets.boundaries[None, :] - law_mean[:, None]) / law_std
    cdf = normal_cdf(z)
    out = np.empty((h_prev.shape[0], buckets.k), dtype=np.float64)
    out[:, 0] = cdf[:, 0]
    out[:, 1:-1] = np.diff(cdf, axis=1)
    out[:, -1] = 1.0 - cdf[:, -1]
    return out


# ---------------------------------------------------------------------------
# trajectory persistence

_TRAJECTORY_HEADER = ["hidden", "observed"]


def write_trajectory(traj: OUTrajectory, path) -> None:
    """CSV with one hidden state per row; the first row has no increment."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_TRAJECTORY_HEADER)
        writer.writerow([repr(float(traj.hidden[0])), ""])
        for h, y in zip(traj.hidden[1:], traj.observed):
            writer.writerow([repr(float(h)), repr(float(y))])


def read_trajectory(path) -> OUTrajectory:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _TRAJECTORY_HEADER:
            raise ValueError(f"unexpected trajectory header {header}")
        hidden, observed = [], []
        for row in reader:
            hidden.append(float(row[0]))
            if row[1]:
                observed.append(float(row[1]))
    return OUTrajectory(hidden=np.array(hidden), observed=np.array(observed))
