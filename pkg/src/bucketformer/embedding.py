"""Scalar-to-vector embedding and sinusoidal positional features.

A scalar observation ``y`` becomes the first ``d`` exponential-series
terms ``(y, y^2/2!, ..., y^d/d!)``.  Optional positional rows use the
standard sine/cosine interleaving whose pairwise structure is a block
rotation: advancing every position by ``k`` steps multiplies the rows
by one fixed orthonormal operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EmbeddingConfig",
    "PositionalMatrix",
    "embed",
    "embed_series",
    "positional_matrix",
    "rotation_operator",
    "build_sequence",
]


@dataclass(frozen=True)
class EmbeddingConfig:
    """Width of the feature map and whether positional rows are added."""

    d: int
    use_positional: bool = False

    def __post_init__(self):
        if self.d < 2 or self.d % 2 != 0:
            raise ValueError(f"embedding width must be even and >= 2, got {self.d}")


def embed(y: float, d: int) -> np.ndarray:
    """Feature map of a single scalar: entry j-1 is y^j / j! for j=1..d.

    Computed by the recurrence c_j = c_{j-1} * y / j, which stays exact
    to float64 rounding and never forms an explicit factorial.
    """
    if d < 1:
        raise ValueError(f"embedding width must be >= 1, got {d}")
    y = float(y)
    if not np.isfinite(y):
        raise ValueError(f"cannot embed non-finite value {y}")
    out = np.empty(d, dtype=np.float64)
    c = 1.0
    for j in range(1, d + 1):
        c = c * y / j
        out[j - 1] = c
    return out


def embed_series(values: np.ndarray, d: int) -> np.ndarray:
    """Vectorised :func:`embed` over a series: (m,) -> (m, d)."""
    if d < 1:
        raise ValueError(f"embedding width must be >= 1, got {d}")
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError(f"expected a 1-D series, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("cannot embed non-finite values")
    out = np.empty((values.shape[0], d), dtype=np.float64)
    col = np.ones(values.shape[0], dtype=np.float64)
    for j in range(1, d + 1):
        col = col * values / j
        out[:, j - 1] = col
    return out


@dataclass(frozen=True)
class PositionalMatrix:
    """Positional rows (l, d) plus the per-pair frequencies (d/2,)."""

    table: np.ndarray
    frequencies: np.ndarray

    @property
    def length(self) -> int:
        return self.table.shape[0]

    @property
    def width(self) -> int:
        return self.table.shape[1]


def _frequencies(d: int) -> np.ndarray:
    j = np.arange(d // 2, dtype=np.float64)
    return 10000.0 ** (-2.0 * j / d)


def positional_matrix(l: int, d: int) -> PositionalMatrix:
    """Rows t=0..l-1 with entries sin(t*w_j), cos(t*w_j) interleaved.

    w_j = 10000^(-2j/d) for pair index j, so column 2j is the sine and
    column 2j+1 the cosine of the same angle.
    """
    if l < 1:
        raise ValueError(f"sequence length must be >= 1, got {l}")
    if d < 2 or d % 2 != 0:
        raise ValueError(f"positional width must be even and >= 2, got {d}")
    w = _frequencies(d)
    angles = np.arange(l, dtype=np.float64)[:, None] * w[None, :]
    table = np.empty((l, d), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return PositionalMatrix(table=table, frequencies=w)


def rotation_operator(k: int, d: int) -> np.ndarray:
    """Block-diagonal operator advancing positional rows by k steps.

    Each 2x2 block rotates the (sin, cos) pair of one frequency by the
    angle k*w_j; the composition rule T_{k+t} = T_k T_t and orthonormality
    follow from the rotation structure.
    """
    if d < 2 or d % 2 != 0:
        raise ValueError(f"positional width must be even and >= 2, got {d}")
    w = _frequencies(d)
    op = np.zeros((d, d), dtype=np.float64)
    c = np.cos(k * w)
    s = np.sin(k * w)
    for j in range(d // 2):
        a, b = 2 * j, 2 * j + 1
        # (sin(t w), cos(t w)) -> (sin((t+k) w), cos((t+k) w))
        op[a, a] = c[j]
        op[a, b] = s[j]
        op[b, a] = -s[j]
        op[b, b] = c[j]
    return op


def build_sequence(
    window: np.ndarray,
    config: EmbeddingConfig,
    positional: PositionalMatrix | None = None,
) -> np.ndarray:
    """Embed one window of scalars into an (l, d) input block.

    Row t is embed(window[t]) plus, when configured, positional row t.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 1:
        raise ValueError(f"expected a 1-D window, got shape {window.shape}")
    block = embed_series(window, config.d)
    if config.use_positional:
        if positional is None:
            positional = positional_matrix(window.shape[0], config.d)
        if positional.table.shape != block.shape:
            raise ValueError(
                f"positional table {positional.table.shape} does not match window {block.shape}"
            )
        block = block + positional.table
    return block
