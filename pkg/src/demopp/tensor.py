"""Dense tensors with reverse-mode differentiation on numpy storage.

Tensors are eager: every operation computes its numpy result immediately and,
when gradients are enabled, records a node (parent references plus a
vector-Jacobian closure). ``backward`` replays the recorded nodes in reverse
creation order, which is a reverse topological order of the graph, so gradient
accumulation is deterministic: two runs over the same graph produce
bit-identical gradients.

float32 is the training dtype, float64 the verification dtype. A graph must be
dtype-uniform; mixing raises immediately rather than silently upcasting.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager

import numpy as np

F32 = np.float32
F64 = np.float64

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_node_counter = itertools.count()

_mode = threading.local()


class UsageError(ValueError):
    """Raised when the engine is driven outside its contract."""


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation fast path).

    The switch is per-thread so concurrent evaluators cannot re-enable
    recording under each other.
    """
    prev = grad_enabled()
    _mode.grad_enabled = False
    try:
        yield
    finally:
        _mode.grad_enabled = prev


def grad_enabled():
    return getattr(_mode, "grad_enabled", True)


def _as_array(data, dtype):
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(F32)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_counter)
        self._parents = ()
        self._vjp = None

    # -- construction used by ops ------------------------------------------

    @staticmethod
    def _make(data, parents, vjp):
        """Record a graph node; collapses to a constant when grads are off."""
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.node_id = next(_node_counter)
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    # -- basic protocol ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        """A leaf sharing this tensor's storage, cut from the graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.node_id = next(_node_counter)
        out._parents = ()
        out._vjp = None
        return out

    def zero_grad(self):
        self.grad = None

    # -- autodiff ----------------------------------------------------------

    def backward(self):
        """Propagate d(self)/d(leaf) into ``.grad`` of every requires_grad tensor.

        self must be a scalar produced by a recorded graph.
        """
        if self.data.size != 1:
            raise UsageError(f"backward root must be scalar, got shape {self.data.shape}")
        if self._vjp is None:
            raise UsageError("backward root is detached from any recorded graph")

        # Reachable sub-graph; creation ids give a topological order.
        nodes = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if t.node_id in nodes:
                continue
            nodes[t.node_id] = t
            stack.extend(t._parents)

        grads = {self.node_id: np.ones_like(self.data)}
        for nid in sorted(nodes, reverse=True):
            t = nodes[nid]
            g = grads.pop(nid, None)
            if g is None:
                continue
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g
            if t._vjp is None:
                continue
            for parent, pg in zip(t._parents, t._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = parent.node_id
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg

    # -- operator sugar ------------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def parameter(data, dtype=F32):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def backward(root):
    """Run backprop from a scalar root; returns {node id: gradient Tensor}.

    The map covers every requires_grad leaf reachable from the root.
    """
    root.backward()
    out = {}
    seen = set()
    stack = [root]
    while stack:
        t = stack.pop()
        if t.node_id in seen:
            continue
        seen.add(t.node_id)
        if t.requires_grad and t._vjp is None and t.grad is not None:
            out[t.node_id] = Tensor(t.grad)
        stack.extend(t._parents)
    return out


# -- helpers -----------------------------------------------------------------


def _coerce(a, b):
    """Promote scalars/arrays to Tensors and enforce dtype uniformity."""
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    if a.dtype != b.dtype:
        raise UsageError(f"mixed dtypes in one graph: {a.dtype} vs {b.dtype}")
    return a, b


def _unbroadcast(g, shape):
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic ---------------------------------------------------------------


def add(a, b):
    a, b = _coerce(a, b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._make(out, (a, b), vjp)


def sub(a, b):
    a, b = _coerce(a, b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return Tensor._make(out, (a, b), vjp)


def mul(a, b):
    if isinstance(b, (int, float)):
        scale = b
        out = a.data * a.dtype.type(scale)

        def vjp_s(g):
            return (g * a.dtype.type(scale),)

        return Tensor._make(out, (a,), vjp_s)
    a, b = _coerce(a, b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return Tensor._make(out, (a, b), vjp)


def div(a, b):
    if isinstance(b, (int, float)):
        return mul(a, 1.0 / b)
    a, b = _coerce(a, b)
    out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * out / b.data, b.data.shape)
        return ga, gb

    return Tensor._make(out, (a, b), vjp)


def power(a, p):
    out = a.data**p

    def vjp(g):
        return (g * p * a.data ** (p - 1),)

    return Tensor._make(out, (a,), vjp)


def matmul(a, b):
    a, b = _coerce(a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise UsageError("matmul operands must be at least 2-D")
    out = a.data @ b.data

    def vjp(g):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor._make(out, (a, b), vjp)


def linear(x, w, b=None):
    """x @ w + b with leading axes folded into one GEMM.

    x (..., K), w (K, N), b (N,); one graph node for the whole affine map.
    """
    shape = x.data.shape
    k, n = w.data.shape
    x2 = x.data.reshape(-1, k)
    y = x2 @ w.data
    if b is not None:
        y += b.data
    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        g2 = g.reshape(-1, n)
        gx = (g2 @ w.data.T).reshape(shape)
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Tensor._make(y.reshape(shape[:-1] + (n,)), parents, vjp)


# -- pointwise nonlinearities --------------------------------------------------


def exp(a):
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return Tensor._make(out, (a,), vjp)


def log(a):
    out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return Tensor._make(out, (a,), vjp)


def sqrt(a):
    out = np.sqrt(a.data)

    def vjp(g):
        return (g * (0.5 / out),)

    return Tensor._make(out, (a,), vjp)


def tanh(a):
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return Tensor._make(out, (a,), vjp)


def sigmoid(a):
    out = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Tensor._make(out.astype(a.dtype, copy=False), (a,), vjp)


def relu(a):
    out = np.maximum(a.data, 0)

    def vjp(g):
        return (g * (a.data > 0),)

    return Tensor._make(out, (a,), vjp)


def silu(a):
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * s

    def vjp(g):
        return (g * (s * (1.0 + a.data * (1.0 - s))),)

    return Tensor._make(out.astype(a.dtype, copy=False), (a,), vjp)


def softplus(a):
    # log(1 + exp(x)) = max(x, 0) + log1p(exp(-|x|)), overflow-safe
    e = np.exp(-np.abs(a.data))
    out = np.maximum(a.data, 0) + np.log1p(e)

    def vjp(g):
        s = np.where(a.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return (g * s,)

    return Tensor._make(out.astype(a.dtype, copy=False), (a,), vjp)


def absolute(a):
    out = np.abs(a.data)

    def vjp(g):
        return (g * np.sign(a.data),)

    return Tensor._make(out, (a,), vjp)


# -- reductions ----------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape),)

    return Tensor._make(np.asarray(out, dtype=a.dtype), (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for i in ax:
            count *= a.data.shape[i]

    def vjp(g):
        g = np.asarray(g) / count
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape),)

    return Tensor._make(np.asarray(out, dtype=a.dtype), (a,), vjp)


def tmax(a, axis, keepdims=False):
    """Max over one axis; ties route the gradient to the first argmax."""
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def vjp(g):
        g = np.asarray(g)
        if not keepdims:
            g = np.expand_dims(g, axis)
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, np.expand_dims(idx, axis), g, axis=axis)
        return (buf,)

    return Tensor._make(out, (a,), vjp)


# -- shape ops -----------------------------------------------------------------


def reshape(a, shape):
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return Tensor._make(out, (a,), vjp)


def transpose(a, axes):
    out = a.data.transpose(axes)
    inv = np.argsort(axes)

    def vjp(g):
        return (g.transpose(inv),)

    return Tensor._make(out, (a,), vjp)


def broadcast_to(a, shape):
    out = np.broadcast_to(a.data, shape)

    def vjp(g):
        return (_unbroadcast(g, a.data.shape),)

    return Tensor._make(out, (a,), vjp)


def concat(tensors, axis=0):
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for i in range(len(sizes)):
            sl[axis] = slice(bounds[i], bounds[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return Tensor._make(out, tuple(tensors), vjp)


def stack(tensors, axis=0):
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis=axis)


def _is_basic_index(key):
    if isinstance(key, (slice, int)) or key is Ellipsis:
        return True
    if isinstance(key, tuple):
        return all(isinstance(k, (slice, int)) or k is Ellipsis for k in key)
    return False


def getitem(a, key):
    out = a.data[key]
    basic = _is_basic_index(key)

    def vjp(g):
        buf = np.zeros_like(a.data)
        if basic:
            buf[key] += g
        else:
            np.add.at(buf, key, g)
        return (buf,)

    return Tensor._make(out, (a,), vjp)


def take(a, indices, axis=0):
    """Gather rows along ``axis`` with an integer index array."""
    indices = np.asarray(indices)
    out = np.take(a.data, indices, axis=axis)

    def vjp(g):
        buf = np.zeros_like(a.data)
        np.add.at(np.moveaxis(buf, axis, 0), indices, np.moveaxis(g, axis, 0))
        return (buf,)

    return Tensor._make(out, (a,), vjp)


# -- fused blocks ----------------------------------------------------------------


def masked_softmax(logits, mask=None, axis=-1):
    """softmax(logits + mask) with additive -inf masking.

    mask is a plain numpy array (or None) broadcastable to logits; entries are
    0 for keep and -inf for drop. A row with every entry masked has no valid
    probability distribution and raises.
    """
    x = logits.data if mask is None else logits.data + mask
    xmax = np.max(x, axis=axis, keepdims=True)
    if not np.isfinite(xmax).all():
        if np.isneginf(xmax).any():
            raise UsageError("softmax row with all keys masked")
        raise FloatingPointError("non-finite attention logits")
    e = np.exp(x - xmax)
    p = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - dot),)

    return Tensor._make(p.astype(logits.dtype, copy=False), (logits,), vjp)


def softmax(x, axis=-1):
    return masked_softmax(x, None, axis)


def log_softmax(x, axis=-1):
    xmax = np.max(x.data, axis=axis, keepdims=True)
    shifted = x.data - xmax
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def vjp(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out.astype(x.dtype, copy=False), (x,), vjp)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        red = tuple(range(g.ndim - 1))
        return dx.astype(x.dtype, copy=False), (g * xhat).sum(axis=red), g.sum(axis=red)

    return Tensor._make(out.astype(x.dtype, copy=False), (x, gain, bias), vjp)


def smooth_l1(pred, target, beta=1.0):
    """Elementwise smooth-L1 (quadratic inside ``beta``, linear outside)."""
    pred, target = _coerce(pred, target)
    d = pred.data - target.data
    ad = np.abs(d)
    out = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)

    def vjp(g):
        dd = g * np.clip(d / beta, -1.0, 1.0)
        return _unbroadcast(dd, pred.data.shape), _unbroadcast(-dd, target.data.shape)

    return Tensor._make(out.astype(pred.dtype, copy=False), (pred, target), vjp)


def dropout(x, p, rng, training=True):
    """Inverted dropout; identity when not training or p == 0."""
    if not training or p <= 0.0 or not grad_enabled():
        return x
    u = rng.random(x.data.shape, dtype=np.float32)
    keep = (u >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    out = x.data * keep

    def vjp(g):
        return (g * keep,)

    return Tensor._make(out, (x,), vjp)
