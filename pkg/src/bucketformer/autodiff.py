"""Reverse-mode automatic differentiation on dense float64 arrays.

A small tape-free engine: each operation returns a :class:`Var` holding
the forward value, references to its parent nodes, and a closure that
routes upstream gradients to those parents.  Calling :func:`backward`
on a node topologically sorts its ancestry and runs the closures in
reverse order, accumulating into ``.grad``.

Only the operations needed by the encoder classifier are provided, but
each supports arbitrary leading batch axes so a whole minibatch is one
graph.  Parameters (:class:`Param`) are 1-D or 2-D leaves and receive
gradients summed over every batch axis.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Var",
    "Param",
    "ShapeError",
    "GradientCheckError",
    "constant",
    "add",
    "add_bias",
    "affine",
    "scale",
    "matmul",
    "transpose_last2",
    "relu",
    "softmax",
    "layer_norm",
    "dropout",
    "mean_last",
    "mean_all",
    "split_heads",
    "merge_heads",
    "softmax_cross_entropy",
    "backward",
    "evaluate",
    "gradient",
    "finite_diff_check",
]


class ShapeError(ValueError):
    """An operation received arrays whose shapes do not line up."""


class GradientCheckError(RuntimeError):
    """A finite-difference probe produced a non-finite value."""


class Var:
    """Node in a computation graph.

    ``value`` is always a float64 ndarray.  ``grad`` is filled in by
    :func:`backward`; interior nodes are created fresh on every forward
    pass, so only :class:`Param` leaves persist between passes.
    """

    __slots__ = ("value", "grad", "parents", "_backward", "name", "const")

    def __init__(
        self,
        value,
        parents: tuple = (),
        backward_fn: Callable[[np.ndarray], None] | None = None,
        name: str = "",
        const: bool = False,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self._backward = backward_fn
        self.name = name
        self.const = const

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def accumulate(self, g) -> None:
        # First contribution keeps the reference (closures hand over fresh
        # or read-only arrays); later ones allocate a sum, never mutate.
        self.grad = g if self.grad is None else self.grad + g

    def __repr__(self) -> str:
        tag = self.name or type(self).__name__.lower()
        return f"<{tag} shape={self.value.shape}>"


class Param(Var):
    """Learnable leaf.  Carries first/second moment buffers for Adam."""

    __slots__ = ("m", "v")

    def __init__(self, value, name: str):
        super().__init__(value, name=name)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)


def constant(value, name: str = "input") -> Var:
    """Non-differentiable leaf (inputs, targets)."""
    return Var(value, name=name, const=True)


def _label(name: str, fallback: str) -> str:
    return name or fallback


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(x: Var, y: Var, name: str = "add") -> Var:
    if x.shape != y.shape:
        raise ShapeError(f"{name}: operand shapes {x.shape} and {y.shape} differ")
    out = Var(x.value + y.value, (x, y), name=name)

    def bw(g):
        if not x.const:
            x.accumulate(g)
        if not y.const:
            y.accumulate(g)

    out._backward = bw
    return out


def add_bias(x: Var, b: Var, name: str = "add_bias") -> Var:
    if b.value.ndim != 1 or x.value.shape[-1] != b.value.shape[0]:
        raise ShapeError(
            f"{name}: bias shape {b.shape} does not match last axis of {x.shape}"
        )
    out = Var(x.value + b.value, (x, b), name=name)

    def bw(g):
        if not x.const:
            x.accumulate(g)
        if not b.const:
            b.accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    out._backward = bw
    return out


def scale(x: Var, s: float, name: str = "scale") -> Var:
    s = float(s)
    out = Var(x.value * s, (x,), name=name)

    def bw(g):
        if not x.const:
            x.accumulate(g * s)

    out._backward = bw
    return out


def _flat2d(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a).reshape(-1, a.shape[-1])


def matmul(x: Var, y: Var, name: str = "matmul") -> Var:
    """Matrix product ``x @ y``.

    Supported layouts: ``(..., n) @ (n, m)``, ``(..., l, n) @ (n, m)``,
    and fully batched ``(B..., l, n) @ (B..., n, m)`` with identical
    leading axes.  No implicit broadcasting of batch axes.  When the
    right operand is 2-D the batch axes are folded into one large
    product instead of a stack of small ones.
    """
    xv, yv = x.value, y.value
    if yv.ndim < 2:
        raise ShapeError(f"{name}: right operand must be at least 2-D, got {y.shape}")
    if xv.shape[-1] != yv.shape[-2]:
        raise ShapeError(f"{name}: inner dimensions {x.shape} @ {y.shape} do not match")
    if yv.ndim > 2:
        if xv.ndim < 2 or xv.shape[:-2] != yv.shape[:-2]:
            raise ShapeError(
                f"{name}: batch axes {x.shape} @ {y.shape} do not match"
            )
        value = xv @ yv
    else:
        value = (_flat2d(xv) @ yv).reshape(*xv.shape[:-1], yv.shape[-1])
    out = Var(value, (x, y), name=name)

    def bw(g):
        if not x.const:
            if yv.ndim == 2:
                x.accumulate((_flat2d(g) @ yv.T).reshape(xv.shape))
            else:
                x.accumulate(g @ np.swapaxes(yv, -1, -2))
        if not y.const:
            if yv.ndim == 2:
                y.accumulate(_flat2d(xv).T @ _flat2d(g))
            else:
                y.accumulate(np.swapaxes(xv, -1, -2) @ g)

    out._backward = bw
    return out


def affine(x: Var, w: Var, b: Var, name: str = "affine") -> Var:
    """Fused ``x @ w + b`` for a 2-D weight and 1-D bias."""
    xv, wv, bv = x.value, w.value, b.value
    if wv.ndim != 2 or xv.shape[-1] != wv.shape[0]:
        raise ShapeError(f"{name}: inner dimensions {x.shape} @ {w.shape} do not match")
    if bv.ndim != 1 or bv.shape[0] != wv.shape[1]:
        raise ShapeError(f"{name}: bias shape {b.shape} does not match width {wv.shape[1]}")
    value = _flat2d(xv) @ wv
    value += bv
    out = Var(value.reshape(*xv.shape[:-1], wv.shape[1]), (x, w, b), name=name)

    def bw(g):
        gf = _flat2d(g)
        if not x.const:
            x.accumulate((gf @ wv.T).reshape(xv.shape))
        if not w.const:
            w.accumulate(_flat2d(xv).T @ gf)
        if not b.const:
            b.accumulate(gf.sum(axis=0))

    out._backward = bw
    return out


def transpose_last2(x: Var, name: str = "transpose") -> Var:
    if x.value.ndim < 2:
        raise ShapeError(f"{name}: need at least 2 axes, got {x.shape}")
    out = Var(np.swapaxes(x.value, -1, -2), (x,), name=name)

    def bw(g):
        if not x.const:
            x.accumulate(np.swapaxes(g, -1, -2))

    out._backward = bw
    return out


def relu(x: Var, name: str = "relu") -> Var:
    # np.maximum keeps NaN, so a poisoned forward pass stays visibly poisoned
    out = Var(np.maximum(x.value, 0.0), (x,), name=name)

    def bw(g):
        if not x.const:
            x.accumulate(g * (x.value > 0.0))

    out._backward = bw
    return out


def softmax(x: Var, name: str = "softmax", prescale: float = 1.0) -> Var:
    """Row softmax over the last axis, stabilised by max subtraction.

    ``prescale`` multiplies the logits first (fused so attention score
    scaling costs no extra node or pass over the array).
    """
    s = x.value * prescale
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    out = Var(s, (x,), name=name)

    def bw(g):
        if not x.const:
            inner = (g * s).sum(axis=-1, keepdims=True)
            x.accumulate(s * (g - inner) * prescale if prescale != 1.0 else s * (g - inner))

    out._backward = bw
    return out


def layer_norm(x: Var, gamma: Var, beta: Var, eps: float = 1e-6, name: str = "layer_norm") -> Var:
    """Standardise each row over the last axis, then apply gamma/beta.

    Uses the biased (1/d) variance; the offset ``eps`` is added to the
    standard deviation, not the variance.  Constant rows map to
    ``beta`` and are given zero gradient through the deviation term.
    """
    d = x.value.shape[-1]
    if gamma.value.shape != (d,) or beta.value.shape != (d,):
        raise ShapeError(
            f"{name}: gamma/beta shapes {gamma.shape}/{beta.shape} do not match width {d}"
        )
    mu = x.value.mean(axis=-1, keepdims=True)
    centered = x.value - mu
    sigma = np.sqrt((centered * centered).mean(axis=-1, keepdims=True))
    inv = 1.0 / (sigma + eps)
    xhat = centered * inv
    out = Var(xhat * gamma.value + beta.value, (x, gamma, beta), name=name)

    def bw(g):
        if not gamma.const:
            gamma.accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if not beta.const:
            beta.accumulate(g.reshape(-1, d).sum(axis=0))
        if not x.const:
            dxhat = g * gamma.value
            # d(sigma)/dx has a 1/sigma factor; centered is exactly zero
            # wherever sigma is, so the whole term vanishes there.
            inv_sigma = np.where(sigma > 0.0, 1.0 / np.where(sigma > 0.0, sigma, 1.0), 0.0)
            proj = (dxhat * centered).sum(axis=-1, keepdims=True)
            dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True))
            dx -= (inv * inv) * centered * proj * inv_sigma / d
            x.accumulate(dx)

    out._backward = bw
    return out


def dropout(x: Var, rate: float, rng: np.random.Generator, name: str = "dropout") -> Var:
    """Inverted dropout: zero entries with probability ``rate`` and scale
    the survivors by 1/(1-rate).  ``rate == 0`` returns ``x`` unchanged.
    The mask is drawn once and reused by the backward pass.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"{name}: rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    mask = (rng.random(x.value.shape) >= rate) / (1.0 - rate)
    out = Var(x.value * mask, (x,), name=name)

    def bw(g):
        if not x.const:
            x.accumulate(g * mask)

    out._backward = bw
    return out


def mean_last(x: Var, name: str = "mean_last") -> Var:
    """Mean over the last axis: (..., l, d) -> (..., l)."""
    d = x.value.shape[-1]
    out = Var(x.value.mean(axis=-1), (x,), name=name)

    def bw(g):
        if not x.const:
            x.accumulate(np.broadcast_to((g / d)[..., None], x.value.shape))

    out._backward = bw
    return out


def mean_all(x: Var, name: str = "mean_all") -> Var:
    """Mean over every element; returns a scalar node."""
    n = x.value.size
    out = Var(x.value.mean(), (x,), name=name)

    def bw(g):
        if not x.const:
            x.accumulate(np.broadcast_to(g / n, x.value.shape))

    out._backward = bw
    return out


def split_heads(x: Var, num_heads: int, name: str = "split_heads") -> Var:
    """(..., l, H*w) -> (..., H, l, w)."""
    *lead, l, hw = x.value.shape
    if hw % num_heads != 0:
        raise ShapeError(f"{name}: width {hw} not divisible by {num_heads} heads")
    w = hw // num_heads
    val = np.ascontiguousarray(x.value.reshape(*lead, l, num_heads, w).swapaxes(-3, -2))
    out = Var(val, (x,), name=name)

    def bw(g):
        if not x.const:
            x.accumulate(np.ascontiguousarray(g.swapaxes(-3, -2)).reshape(*lead, l, hw))

    out._backward = bw
    return out


def merge_heads(x: Var, name: str = "merge_heads") -> Var:
    """(..., H, l, w) -> (..., l, H*w).  Inverse of :func:`split_heads`."""
    *lead, h, l, w = x.value.shape
    val = np.ascontiguousarray(x.value.swapaxes(-3, -2)).reshape(*lead, l, h * w)
    out = Var(val, (x,), name=name)

    def bw(g):
        if not x.const:
            x.accumulate(g.reshape(*lead, l, h, w).swapaxes(-3, -2))

    out._backward = bw
    return out


def softmax_cross_entropy(logits: Var, targets: Var, name: str = "softmax_xent") -> Var:
    """Per-row cross entropy between target rows and softmax(logits).

    Fusing the two keeps the backward pass exact:
    d(loss)/d(logits) = softmax(logits) * sum(targets) - targets.
    Returns one loss per row: (..., k) -> (...,).
    """
    if logits.shape != targets.shape:
        raise ShapeError(
            f"{name}: logits {logits.shape} and targets {targets.shape} differ"
        )
    z = logits.value - logits.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    se = e.sum(axis=-1, keepdims=True)
    logq = z - np.log(se)
    q = e / se
    tsum = targets.value.sum(axis=-1)
    losses = -(targets.value * logq).sum(axis=-1)
    out = Var(losses, (logits, targets), name=name)

    def bw(g):
        if not logits.const:
            logits.accumulate((q * tsum[..., None] - targets.value) * g[..., None])

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# graph-level helpers


def _topo(root: Var) -> list[Var]:
    """Ancestors of ``root`` in topological order (parents before children)."""
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, int]] = [(root, 0)]
    while stack:
        node, idx = stack.pop()
        if idx == 0:
            if id(node) in seen:
                continue
            seen.add(id(node))
        if idx < len(node.parents):
            stack.append((node, idx + 1))
            stack.append((node.parents[idx], 0))
        else:
            order.append(node)
    return order


def backward(root: Var, upstream: np.ndarray | None = None) -> None:
    """Accumulate d(root)/d(node) into ``.grad`` for every ancestor.

    Grads of the whole ancestry are reset first, so repeated calls with
    the same upstream give identical results.
    """
    if upstream is None:
        upstream = np.ones_like(root.value)
    else:
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != root.value.shape:
            raise ShapeError(
                f"upstream shape {upstream.shape} does not match output {root.value.shape}"
            )
    order = _topo(root)
    for node in order:
        node.grad = None
    root.accumulate(upstream)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def evaluate(
    graph: Callable[[list[Var], str, np.random.Generator | None], Var],
    inputs: Sequence[np.ndarray],
    mode: str = "infer",
    seed: int = 0,
) -> tuple[np.ndarray, Var]:
    """Run ``graph`` on ``inputs`` and return (output array, output node).

    ``graph`` receives the inputs wrapped as constant leaves, the mode
    string, and a generator seeded from ``seed`` (None in infer mode,
    where no stochastic node may draw).  Two calls with equal arguments
    produce bitwise-equal outputs.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    rng = np.random.default_rng(seed) if mode == "train" else None
    leaves = [constant(np.asarray(a, dtype=np.float64)) for a in inputs]
    out = graph(leaves, mode, rng)
    return out.value.copy(), out


def gradient(cache: Var, upstream: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Backward pass from a cached output node; returns grads by Param name."""
    backward(cache, upstream)
    grads: dict[str, np.ndarray] = {}
    for node in _topo(cache):
        if isinstance(node, Param) and node.grad is not None:
            grads[node.name] = node.grad.copy()
    return grads


def finite_diff_check(
    graph: Callable[[list[Var], str, np.random.Generator | None], Var],
    inputs: Sequence[np.ndarray],
    params: Sequence[Param],
    epsilon: float = 1e-5,
    seed: int = 0,
    mode: str = "train",
) -> float:
    """Compare analytic parameter gradients against central differences.

    The graph must produce a scalar.  Stochastic nodes are frozen by the
    fixed ``seed``, so every probe sees identical masks.  Returns
    ``max |analytic - central| / max(1, |central|)`` over all parameter
    entries.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    value, cache = evaluate(graph, inputs, mode, seed)
    if value.size != 1:
        raise ShapeError(f"finite_diff_check needs a scalar output, got {value.shape}")
    backward(cache)
    analytic = {id(p): (p.grad.copy() if p.grad is not None else np.zeros_like(p.value)) for p in params}

    worst = 0.0
    for p in params:
        a = analytic[id(p)]
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up, _ = evaluate(graph, inputs, mode, seed)
            flat[i] = orig - epsilon
            down, _ = evaluate(graph, inputs, mode, seed)
            flat[i] = orig
            central = (float(up) - float(down)) / (2.0 * epsilon)
            if not np.isfinite(central):
                raise GradientCheckError(
                    f"non-finite finite-difference value for parameter {p.name!r} entry {i}"
                )
            err = abs(a.reshape(-1)[i] - central) / max(1.0, abs(central))
            if err > worst:
                worst = err
    return worst
