"""Dense tensors with reverse-mode automatic differentiation.

Everything is backed by row-major numpy arrays. Each op that sees a
tensor requiring gradients records its parents and a closure computing
the parent gradients; ``backward`` replays those records in reverse
topological order, accumulating additively when a tensor fans out to
several consumers. Forward math is done in whatever dtype the inputs
carry (float64 for verification, float32 for training runs).
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError

# Global multiply-add counter (2 FLOPs per multiply-add). Only matmul is
# counted: it dominates everything the cost model cares about.
_flop_count = 0
_count_flops = False


def reset_flop_counter(enable: bool = True) -> None:
    global _flop_count, _count_flops
    _flop_count = 0
    _count_flops = enable


def flop_count() -> int:
    return _flop_count


class Tensor:
    """N-dimensional array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._grad_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Convenience operators; all dispatch to the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _make(data, parents, grad_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_elementwise(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_elementwise(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_elementwise(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_reduce_to(g * b.data, a.shape),
                            _reduce_to(g * a.data, b.shape)))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def _check_elementwise(a: Tensor, b: Tensor, name: str) -> None:
    # Scalars always combine; otherwise shapes must be numpy-broadcastable.
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            f"{name}: shapes {a.shape} and {b.shape} are not compatible")


def silu(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * s

    def grad_fn(g):
        return (g * (s * (1.0 + x.data * (1.0 - s))),)

    return _make(out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# contractions and reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 1 or b.data.ndim < 2:
        raise DimensionError(
            f"matmul: operands must be at least 1-D/2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner dimensions disagree for {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(
            f"matmul: batch dimensions disagree for {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)
    if _count_flops:
        global _flop_count
        batch = int(np.prod(out.shape[:-2], dtype=np.int64)) if out.ndim > 2 else 1
        n, m = out.shape[-2], out.shape[-1]
        _flop_count += 2 * batch * n * m * a.shape[-1]

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_reduce_to(ga, a.shape), _reduce_to(gb, b.shape))

    return _make(out, (a, b), grad_fn)


def sum_all(x: Tensor) -> Tensor:
    return _make(np.asarray(x.data.sum()), (x,),
                 lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return _make(np.asarray(x.data.mean()), (x,),
                 lambda g: ((np.broadcast_to(g, x.shape) / n).astype(x.dtype),))


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _make(x.data.reshape(shape), (x,),
                 lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,),
                 lambda g: (g.transpose(inv),))


def roll(x: Tensor, shift: int, axis: int) -> Tensor:
    return _make(np.roll(x.data, shift, axis=axis), (x,),
                 lambda g: (np.roll(g, -shift, axis=axis),))


def concat(parts, axis: int) -> Tensor:
    parts = list(parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, parts, grad_fn)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def grad_fn(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[idx] = g
        return (gx,)

    return _make(x.data[idx].copy(), (x,), grad_fn)


def take(x: Tensor, indices, axis: int) -> Tensor:
    """Gather along ``axis``; gradient scatter-adds back (indices may repeat)."""
    indices = np.asarray(indices)

    def grad_fn(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        moved = np.moveaxis(gx, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (gx,)

    return _make(np.take(x.data, indices, axis=axis), (x,), grad_fn)


def rotate_pairs(x: Tensor) -> Tensor:
    """Map each consecutive pair (a, b) of the last axis to (-b, a)."""
    if x.shape[-1] % 2 != 0:
        raise DimensionError(f"rotate_pairs: last dimension must be even, got {x.shape}")
    out = np.empty_like(x.data)
    out[..., 0::2] = -x.data[..., 1::2]
    out[..., 1::2] = x.data[..., 0::2]

    def grad_fn(g):
        gx = np.empty_like(g)
        gx[..., 1::2] = -g[..., 0::2]
        gx[..., 0::2] = g[..., 1::2]
        return (gx,)

    return _make(out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# neural-net primitives


def softmax_lastdim(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis.

    Entries equal to -inf are treated as masked out and get probability
    zero. A row that is entirely -inf has no unmasked entries and is a
    contract violation.
    """
    m = np.max(x.data, axis=-1, keepdims=True)
    if np.isneginf(m).any():
        raise ContractError("softmax_lastdim: a row is fully masked (all -inf)")
    e = np.exp(x.data - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (x,), grad_fn)


def rms_norm(x: Tensor, weight: Tensor, eps: float = 1e-5) -> Tensor:
    """y_i = x_i / sqrt(mean(x^2) + eps) * w_i over the last axis."""
    d = x.shape[-1]
    if weight.shape != (d,):
        raise DimensionError(
            f"rms_norm: weight shape {weight.shape} does not match last dim {d}")
    ms = np.mean(x.data ** 2, axis=-1, keepdims=True)
    r = 1.0 / np.sqrt(ms + eps)
    y = x.data * r * weight.data

    def grad_fn(g):
        gw_full = g * x.data * r
        gw = gw_full.reshape(-1, d).sum(axis=0)
        gx = (g * weight.data * r
              - x.data * (r ** 3 / d) * (g * weight.data * x.data).sum(axis=-1, keepdims=True))
        return (gx, gw.astype(weight.dtype))

    return _make(y, (x, weight), grad_fn)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"embedding_lookup: token id out of range [0, {vocab})")
    out = table.data[ids]

    def grad_fn(g):
        gt = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(out, (table,), grad_fn)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood (nats) over all scored positions.

    ``logits`` has vocabulary on the last axis; ``targets`` holds integer
    token ids matching the leading shape.
    """
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(
            f"cross_entropy: targets shape {targets.shape} does not match "
            f"logits {logits.shape}")
    vocab = logits.shape[-1]
    flat = logits.data.reshape(-1, vocab)
    tf = targets.reshape(-1)
    if tf.size and (tf.min() < 0 or tf.max() >= vocab):
        raise IndexError(f"cross_entropy: target id out of range [0, {vocab})")
    m = flat.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(flat - m).sum(axis=-1))
    nll = lse - flat[np.arange(tf.size), tf]
    loss = nll.mean()

    def grad_fn(g):
        p = np.exp(flat - m)
        p /= p.sum(axis=-1, keepdims=True)
        p[np.arange(tf.size), tf] -= 1.0
        gl = (p * (g / tf.size)).reshape(logits.shape).astype(logits.dtype)
        return (gl,)

    return _make(np.asarray(loss), (logits,), grad_fn)


# ---------------------------------------------------------------------------
# backward


def backward(root: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from root.

    ``root`` must be scalar. Nodes are visited exactly once, in reverse
    topological order; fan-out accumulates additively.
    """
    if root.data.size != 1:
        raise ContractError(
            f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return

    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._grad_fn is None:
            continue
        grads = node._grad_fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = g.astype(parent.dtype, copy=True)
            else:
                parent.grad = parent.grad + g.astype(parent.dtype)
