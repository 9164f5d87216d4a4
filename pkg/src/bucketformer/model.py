"""Transformer-encoder bucket classifier built on the autodiff engine.

Input blocks of shape (l, d) pass through N identical encoder blocks
(multi-head self-attention plus a position-wise two-layer map, each
with a residual connection and row normalisation), are pooled over the
feature axis to a length-l vector, and finish in a small dense head
with a k-way softmax.  Normalisation defaults to the pre-residual
placement; the post-residual variant is kept as an option.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Param, Var

__all__ = [
    "ModelConfig",
    "BlockParams",
    "EncoderClassifier",
    "ConfigError",
    "CheckpointError",
    "init",
    "attention_head",
    "multi_head",
    "feed_forward",
    "encoder_block",
    "class_logits",
    "forward",
    "predict_proba",
    "save_checkpoint",
    "load_checkpoint",
]


class ConfigError(ValueError):
    """Invalid model configuration."""


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``d_model`` defaults to half the window length and ``ff_dim`` to
    four times the model width, matching the reference configuration
    (seq_len 32 -> width 16, feed-forward 64).
    """

    seq_len: int = 32
    d_model: int | None = None
    n_classes: int = 7
    num_heads: int = 8
    head_size: int = 64
    num_blocks: int = 6
    ff_dim: int | None = None
    mlp_units: tuple[int, ...] = (10,)
    dropout: float = 0.25
    mlp_dropout: float = 0.25
    layernorm_epsilon: float = 1e-6
    norm_placement: str = "pre"

    def __post_init__(self):
        if self.d_model is None:
            object.__setattr__(self, "d_model", self.seq_len // 2)
        if self.ff_dim is None:
            object.__setattr__(self, "ff_dim", 4 * self.d_model)
        object.__setattr__(self, "mlp_units", tuple(int(u) for u in self.mlp_units))
        for name in ("seq_len", "d_model", "n_classes", "num_heads", "head_size", "num_blocks", "ff_dim"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if any(u < 1 for u in self.mlp_units):
            raise ConfigError(f"mlp_units must be positive, got {self.mlp_units}")
        for name in ("dropout", "mlp_dropout"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {v}")
        if self.layernorm_epsilon <= 0:
            raise ConfigError(f"layernorm_epsilon must be > 0, got {self.layernorm_epsilon}")
        if self.norm_placement not in ("pre", "post"):
            raise ConfigError(f"norm_placement must be 'pre' or 'post', got {self.norm_placement!r}")


@dataclass
class BlockParams:
    """Parameters of one encoder block."""

    wq: Param
    bq: Param
    wk: Param
    bk: Param
    wv: Param
    bv: Param
    wo: Param
    bo: Param
    ln1_gamma: Param
    ln1_beta: Param
    ln2_gamma: Param
    ln2_beta: Param
    f1_w: Param
    f1_b: Param
    f2_w: Param
    f2_b: Param

    def all(self) -> list[Param]:
        return [
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
            self.ln1_gamma, self.ln1_beta, self.ln2_gamma, self.ln2_beta,
            self.f1_w, self.f1_b, self.f2_w, self.f2_b,
        ]


class EncoderClassifier:
    """Parameter container; the forward pass lives in module functions."""

    def __init__(self, config: ModelConfig, blocks: list[BlockParams], head: list[Param]):
        self.config = config
        self.blocks = blocks
        self.head = head

    def parameters(self) -> list[Param]:
        out: list[Param] = []
        for b in self.blocks:
            out.extend(b.all())
        out.extend(self.head)
        return out

    def param_count(self) -> int:
        return sum(p.value.size for p in self.parameters())


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape, name: str) -> Param:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Param(rng.uniform(-limit, limit, size=shape), name)


def init(config: ModelConfig, seed: int = 0) -> EncoderClassifier:
    """Deterministic initialisation: uniform Glorot weights, zero biases,
    unit normalisation gains.  Draw order is fixed, so equal seeds give
    bitwise-equal models."""
    rng = np.random.default_rng(seed)
    d = config.d_model
    width = config.num_heads * config.head_size
    blocks = []
    for i in range(config.num_blocks):
        p = f"block{i}."
        blocks.append(
            BlockParams(
                wq=_glorot(rng, d, width, (d, width), p + "wq"),
                bq=Param(np.zeros(width), p + "bq"),
                wk=_glorot(rng, d, width, (d, width), p + "wk"),
                bk=Param(np.zeros(width), p + "bk"),
                wv=_glorot(rng, d, width, (d, width), p + "wv"),
                bv=Param(np.zeros(width), p + "bv"),
                wo=_glorot(rng, width, d, (width, d), p + "wo"),
                bo=Param(np.zeros(d), p + "bo"),
                ln1_gamma=Param(np.ones(d), p + "ln1_gamma"),
                ln1_beta=Param(np.zeros(d), p + "ln1_beta"),
                ln2_gamma=Param(np.ones(d), p + "ln2_gamma"),
                ln2_beta=Param(np.zeros(d), p + "ln2_beta"),
                f1_w=_glorot(rng, d, config.ff_dim, (d, config.ff_dim), p + "f1_w"),
                f1_b=Param(np.zeros(config.ff_dim), p + "f1_b"),
                f2_w=_glorot(rng, config.ff_dim, d, (config.ff_dim, d), p + "f2_w"),
                f2_b=Param(np.zeros(d), p + "f2_b"),
            )
        )
    head: list[Param] = []
    fan = config.seq_len
    for j, units in enumerate(config.mlp_units):
        head.append(_glorot(rng, fan, units, (fan, units), f"head.dense{j}_w"))
        head.append(Param(np.zeros(units), f"head.dense{j}_b"))
        fan = units
    head.append(_glorot(rng, fan, config.n_classes, (fan, config.n_classes), "head.out_w"))
    head.append(Param(np.zeros(config.n_classes), "head.out_b"))
    return EncoderClassifier(config, blocks, head)


# ---------------------------------------------------------------------------
# forward pieces


def attention_head(
    X: np.ndarray, w_q: np.ndarray, w_k: np.ndarray, w_v: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reference single head without biases, on plain arrays.

    Returns the (l, l) attention weights A = row_softmax(Q K^T / sqrt(k))
    and the (l, d_v) combination A V, where k is the projection width.
    Kept independent of the graph ops so the two can cross-check.
    """
    X = np.asarray(X, dtype=np.float64)
    q = X @ w_q
    k = X @ w_k
    v = X @ w_v
    if q.shape != k.shape:
        raise ad.ShapeError(f"query/key widths differ: {q.shape} vs {k.shape}")
    logits = q @ k.T / np.sqrt(q.shape[-1])
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    a = z / z.sum(axis=-1, keepdims=True)
    return a, a @ v


def multi_head(x: Var, params: BlockParams, num_heads: int, head_size: int) -> Var:
    """Batched multi-head self-attention subgraph: (..., l, d) -> (..., l, d)."""
    q = ad.affine(x, params.wq, params.bq, "q_proj")
    k = ad.affine(x, params.wk, params.bk, "k_proj")
    v = ad.affine(x, params.wv, params.bv, "v_proj")
    qh = ad.split_heads(q, num_heads)
    kh = ad.split_heads(k, num_heads)
    vh = ad.split_heads(v, num_heads)
    scores = ad.matmul(qh, ad.transpose_last2(kh), "scores")
    weights = ad.softmax(scores, "attention", prescale=1.0 / np.sqrt(head_size))
    merged = ad.merge_heads(ad.matmul(weights, vh, "combine"))
    return ad.affine(merged, params.wo, params.bo, "out_proj")


def feed_forward(
    x: Var,
    params: BlockParams,
    rate: float = 0.0,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
) -> Var:
    """Position-wise two-layer map with shared weights across positions."""
    h = ad.relu(ad.affine(x, params.f1_w, params.f1_b, "ff1"))
    if mode == "train" and rate > 0.0:
        h = ad.dropout(h, rate, rng, "ff_dropout")
    return ad.affine(h, params.f2_w, params.f2_b, "ff2")


def encoder_block(
    x: Var,
    params: BlockParams,
    config: ModelConfig,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
) -> Var:
    """One residual attention + feed-forward block, (..., l, d) preserved."""

    def drop(node: Var) -> Var:
        if mode == "train" and config.dropout > 0.0:
            return ad.dropout(node, config.dropout, rng, "block_dropout")
        return node

    eps = config.layernorm_epsilon
    if config.norm_placement == "pre":
        u = ad.layer_norm(x, params.ln1_gamma, params.ln1_beta, eps, "norm1")
        r1 = ad.add(drop(multi_head(u, params, config.num_heads, config.head_size)), x, "residual1")
        v = ad.layer_norm(r1, params.ln2_gamma, params.ln2_beta, eps, "norm2")
        f = feed_forward(v, params, config.dropout, mode, rng)
        return ad.add(f, r1, "residual2")
    r1 = ad.add(drop(multi_head(x, params, config.num_heads, config.head_size)), x, "residual1")
    v = ad.layer_norm(r1, params.ln1_gamma, params.ln1_beta, eps, "norm1")
    f = feed_forward(v, params, config.dropout, mode, rng)
    return ad.layer_norm(ad.add(f, v, "residual2"), params.ln2_gamma, params.ln2_beta, eps, "norm2")


def class_logits(
    model: EncoderClassifier,
    x: Var,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
) -> Var:
    """Window block(s) (..., l, d) -> class logits (..., k).

    After the encoder stack, each position is reduced to the mean of its
    d features (pooling over the feature axis), giving a length-l
    vector per window for the dense head.
    """
    cfg = model.config
    if x.shape[-2:] != (cfg.seq_len, cfg.d_model):
        raise ad.ShapeError(
            f"input {x.shape} does not end in (seq_len, d_model) = "
            f"({cfg.seq_len}, {cfg.d_model})"
        )
    h = x
    for params in model.blocks:
        h = encoder_block(h, params, cfg, mode, rng)
    pooled = ad.mean_last(h, "feature_pool")
    i = 0
    for _ in cfg.mlp_units:
        pooled = ad.relu(ad.affine(pooled, model.head[i], model.head[i + 1], "head_dense"))
        if mode == "train" and cfg.mlp_dropout > 0.0:
            pooled = ad.dropout(pooled, cfg.mlp_dropout, rng, "head_dropout")
        i += 2
    return ad.affine(pooled, model.head[i], model.head[i + 1], "head_out")


def forward(
    model: EncoderClassifier,
    X: np.ndarray,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Probability rows for one window (l, d) or a batch (B, l, d)."""
    if mode == "train" and rng is None:
        raise ValueError("train mode requires a random generator")
    logits = class_logits(model, ad.constant(np.asarray(X, dtype=np.float64)), mode, rng)
    return ad.softmax(logits).value


def predict_proba(model: EncoderClassifier, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Inference over many windows in fixed-size chunks: (N, l, d) -> (N, k)."""
    windows = np.asarray(windows, dtype=np.float64)
    out = np.empty((windows.shape[0], model.config.n_classes), dtype=np.float64)
    for lo in range(0, windows.shape[0], batch_size):
        chunk = np.ascontiguousarray(windows[lo : lo + batch_size])
        out[lo : lo + chunk.shape[0]] = forward(model, chunk)
    return out


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"BKTF"
_VERSION = 1


def save_checkpoint(model: EncoderClassifier, path) -> None:
    """Versioned binary dump: magic, format version, config JSON, then
    each parameter as name, shape, and row-major float64 bytes."""
    params = model.parameters()
    cfg_json = json.dumps(asdict(model.config), sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<II", _VERSION, len(cfg_json)))
    buf.write(cfg_json)
    buf.write(struct.pack("<I", len(params)))
    for p in params:
        name = p.name.encode()
        buf.write(struct.pack("<H", len(name)))
        buf.write(name)
        buf.write(struct.pack("<B", p.value.ndim))
        buf.write(struct.pack(f"<{p.value.ndim}I", *p.value.shape))
        buf.write(np.ascontiguousarray(p.value).tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> EncoderClassifier:
    """Rebuild a model from disk.

    Rejects files with the wrong magic or version, tensors that do not
    match the declared config, and (when ``expected_config`` is given)
    any config that differs from the expected one.
    """
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != _MAGIC:
            raise CheckpointError(f"{path} is not a model checkpoint (bad magic)")
        version, cfg_len = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != _VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        try:
            raw = json.loads(_read_exact(fh, cfg_len, "config"))
            raw["mlp_units"] = tuple(raw["mlp_units"])
            config = ModelConfig(**raw)
        except (ValueError, TypeError, KeyError) as exc:
            raise CheckpointError(f"invalid checkpoint config: {exc}") from exc
        if expected_config is not None and config != expected_config:
            raise CheckpointError(
                f"checkpoint config {config} does not match expected {expected_config}"
            )
        model = init(config, seed=0)
        params = model.parameters()
        (n_params,) = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))
        if n_params != len(params):
            raise CheckpointError(
                f"checkpoint has {n_params} tensors, config implies {len(params)}"
            )
        for p in params:
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode()
            if name != p.name:
                raise CheckpointError(f"unexpected tensor {name!r}, wanted {p.name!r}")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "shape"))
            if shape != p.value.shape:
                raise CheckpointError(
                    f"tensor {name!r} has shape {shape}, config implies {p.value.shape}"
                )
            data = _read_exact(fh, 8 * int(np.prod(shape, dtype=np.int64)), name)
            p.value = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after final tensor")
    return model
