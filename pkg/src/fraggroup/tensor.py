"""Minimal dense tensors with reverse-mode autodiff, backed by numpy.

Every differentiable op builds a node holding its parents and a closure that
maps the output gradient to parent gradients. ``Tensor.backward`` walks the
recorded graph in reverse topological order.

Gradients accumulate into ``.grad`` across calls to ``backward`` until
``zero_grad`` is called, mirroring the usual training-loop contract.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class BackwardError(RuntimeError):
    pass


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {op}")
    return arr


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = _check_finite(np.asarray(data, dtype=dtype), "tensor construction")
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op})"

    def __len__(self):
        return self.data.shape[0]

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def backward(self, grad=None):
        """Back-propagate from this tensor into every reachable leaf.

        Only scalars may start a backward pass unless an explicit seed
        gradient is supplied.
        """
        if grad is None:
            if self.data.size != 1:
                raise BackwardError(f"backward() needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise BackwardError("tensor does not require grad")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    if dtype is None and not isinstance(x, np.ndarray):
        dtype = DEFAULT_DTYPE
    return Tensor(x, dtype=dtype)


def _make(data, parents, backward, op):
    out = Tensor.__new__(Tensor)
    out.data = _check_finite(data, op)
    out.grad = None
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _lift(a, b):
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a), dtype=b.dtype)
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b), dtype=a.dtype)
    return a, b


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _lift(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _lift(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _lift(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def exp(x):
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return _make(out, (x,), backward, "exp")


def log(x):
    def backward(g):
        return (g / x.data,)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _make(out, (x,), backward, "log")


def relu(x):
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), backward, "relu")


# ------------------------------------------------------------------- shaping

def reshape(x, shape):
    def backward(g):
        return (g.reshape(x.shape),)

    return _make(x.data.reshape(shape), (x,), backward, "reshape")


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)

    def backward(g):
        return (g.transpose(inv),)

    return _make(x.data.transpose(axes), (x,), backward, "transpose")


def getitem(x, idx):
    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)  # repeated indices accumulate
        return (full,)

    return _make(x.data[idx], (x,), backward, "getitem")


def concat(tensors, axis=0):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, range(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def tsum(x, axis=None, keepdims=False):
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# -------------------------------------------------------------------- linear

def matmul(a, b):
    """Batched matrix product; the last two axes are multiplied."""
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def linear(x, weight, bias=None):
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# ------------------------------------------------------------- normalisation

def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


def log_softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward, "log_softmax")


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise over the last axis with population variance, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    d = x.shape[-1]

    def backward(g):
        gy = g * gamma.data
        gx = inv / d * (d * gy - gy.sum(axis=-1, keepdims=True) - y * (gy * y).sum(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * y).sum(axis=lead), g.sum(axis=lead)

    return _make(y * gamma.data + beta.data, (x, gamma, beta), backward, "layer_norm")


# ------------------------------------------------------------------- vision

def conv2d(x, weight, bias=None, stride=1):
    """Valid cross-correlation via im2col.

    ``x`` is ``C×H×W`` or ``N×C×H×W``; ``weight`` is ``O×C×kh×kw``.
    """
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or weight.ndim != 4 or xd.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d shapes incompatible: {x.shape} vs {weight.shape}")
    n, c, h, w = xd.shape
    o, _, kh, kw = weight.shape
    if h < kh or w < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than input {h}x{w}")
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    wmat = weight.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)

    def backward(g):
        if squeeze:
            g = g[None]
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, oh, ow, c, kh, kw)
            gx = np.zeros_like(xd)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride] += \
                        dcols[..., i, j].transpose(0, 3, 1, 2)
            if squeeze:
                gx = gx[0]
        grads = (gx, gw)
        if bias is not None:
            grads += (g2.sum(axis=0),)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(np.ascontiguousarray(out[0] if squeeze else out), parents, backward, "conv2d")


def global_avg_pool(x):
    """Mean over the two trailing spatial axes."""
    return mean(x, axis=(-2, -1))


# ---------------------------------------------------------------- lookups

def embedding_lookup(table, indices):
    """Gather rows of ``table``; row 0 is the padding row and never receives gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    vocab = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise IndexError(f"embedding index out of range [0, {vocab})")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        gt[0] = 0.0
        return (gt,)

    return _make(table.data[idx], (table,), backward, "embedding")


def dropout(x, p, training, rng):
    """Inverted dropout: scaled by 1/(1-p) in training, identity otherwise."""
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p must be in [0, 1), got {p}")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)

    def backward(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), backward, "dropout")


# -------------------------------------------------------------------- losses

def cross_entropy(logits, targets, class_weights=None):
    """Class-weighted mean of per-row negative log-likelihood.

    ``loss = sum_i w[t_i] * -log softmax(logits_i)[t_i] / sum_i w[t_i]``
    """
    t = np.asarray(targets, dtype=np.int64)
    n, k = logits.shape
    if t.shape != (n,):
        raise ShapeError(f"targets shape {t.shape} does not match logits {logits.shape}")
    if n and (t.min() < 0 or t.max() >= k):
        raise IndexError(f"target class out of range [0, {k})")
    w = np.ones(k, dtype=logits.dtype) if class_weights is None else np.asarray(
        class_weights.data if isinstance(class_weights, Tensor) else class_weights, dtype=logits.dtype)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    wi = w[t]
    denom = wi.sum()
    loss = -(wi * logp[rows, t]).sum() / denom

    def backward(g):
        grad = np.exp(logp)
        grad[rows, t] -= 1.0
        return (grad * (wi / denom)[:, None] * g,)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")


# ------------------------------------------------------------------ optimizer

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2_lambda: float = 0.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place on ``params``.

    ``params`` and ``grads`` map names to Tensors / arrays. L2 regularisation
    is added to the gradient (``g + lambda * p``) before the moment update.
    Missing gradients count as zero.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if state.l2_lambda:
            g = g + state.l2_lambda * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
