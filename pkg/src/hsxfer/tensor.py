"""Dense tensors with reverse-mode automatic differentiation.

Arrays are numpy-backed, row-major and channels-last for images
(``N x H x W x C``). Training runs in float32; :func:`precision` switches the
default dtype to float64 for gradient verification.

Each differentiable op records its parents and a closure mapping the output
gradient to parent gradients. :func:`backward` linearizes the recorded graph
into a :class:`Tape` (topological order) and walks it in reverse exactly once.
Only leaves accumulate into ``.grad``; intermediate gradients live for one
pass, so calling :func:`backward` twice doubles every leaf gradient.
"""
import contextlib
import threading
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ConfigError, DataError, ShapeError

_dtype = np.float32
_local = threading.local()


def get_dtype():
    return _dtype


def set_precision(bits: int):
    global _dtype
    if bits == 32:
        _dtype = np.float32
    elif bits == 64:
        _dtype = np.float64
    else:
        raise ConfigError(f"unsupported precision: {bits} bits")


@contextlib.contextmanager
def precision(bits: int):
    old = _dtype
    set_precision(bits)
    try:
        yield
    finally:
        globals()["_dtype"] = old


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    old = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = old


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = ()
        self._backward = None
        self.op = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self, grad=None):
        backward(self, grad)

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _wrap(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _node(data, parents, backward_fn, op):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.name = None
    out._parents = ()
    out._backward = None
    out.requires_grad = grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


@dataclass
class Tape:
    """Differentiable nodes reachable from a root, inputs before outputs."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_root(cls, root):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)


def backward(root: Tensor, grad=None):
    """Populate ``.grad`` on every leaf reachable from ``root``."""
    if not root.requires_grad:
        return
    if grad is None:
        if root.size != 1:
            raise ShapeError(f"backward needs an explicit gradient for non-scalar shape {root.shape}")
        grad = np.ones_like(root.data)
    tape = Tape.from_root(root)
    grads = {id(root): np.asarray(grad, dtype=root.data.dtype)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# elementwise --------------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)), "mul")


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data
    return _node(ad / bd, (a, b),
                 lambda g: (_unbroadcast(g / bd, sa), _unbroadcast(-g * ad / (bd * bd), sb)), "div")


def exp(a):
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,), "log")


def relu(a):
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


def gelu(a):
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _node((x * cdf).astype(x.dtype), (a,), bw, "gelu")


# reductions and shape ------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")


def tmean(a, axis=None, keepdims=False):
    out = tsum(a, axis, keepdims)
    n = a.size // max(out.size, 1)
    return mul(out, 1.0 / n)


def reshape(a, shape):
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def take(a, index):
    """Indexing (basic or advanced); the backward pass scatter-adds."""
    shape = a.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return _node(np.asarray(a.data[index]), (a,), bw, "take")


def concat(tensors, axis=-1):
    tensors = [_wrap(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([t.data for t in tensors], axis=ax), tensors,
                 lambda g: tuple(np.split(g, bounds, axis=ax)), "concat")


# linear algebra --------------------------------------------------------------

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    sa, sb = a.shape, b.shape

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), sa)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, sb)
        return ga, gb

    return _node(ad @ bd, (a, b), bw, "matmul")


# normalization / probabilistic -----------------------------------------------

def softmax(a, axis=-1):
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)
    return _node(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),), "softmax")


def log_softmax(a, axis=-1):
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)
    return _node(out, (a,), lambda g: (g - sm * g.sum(axis=axis, keepdims=True),), "log_softmax")


def cross_entropy(logits, targets, ignore_index=65535):
    """Mean negative log-likelihood over rows whose target is not ``ignore_index``."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects N x K logits, got {logits.shape}")
    n, k = logits.shape
    t = np.asarray(targets).reshape(-1).astype(np.int64)
    if t.shape[0] != n:
        raise ShapeError(f"targets length {t.shape[0]} does not match {n} logit rows")
    valid = t != ignore_index
    bad = valid & ((t < 0) | (t >= k))
    if bad.any():
        raise DataError(f"target {int(t[bad][0])} outside [0, {k}) and not ignore_index")
    nv = int(valid.sum())
    x = logits.data
    if nv == 0:
        return _node(np.zeros((), dtype=x.dtype), (logits,), lambda g: (np.zeros_like(x),), "cross_entropy")
    shifted = x - x.max(axis=1, keepdims=True)
    lsm = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.nonzero(valid)[0]
    loss = -lsm[rows, t[rows]].sum() / nv

    def bw(g):
        d = np.exp(lsm)
        d[rows, t[rows]] -= 1.0
        d[~valid] = 0.0
        return (d * (g / nv),)

    return _node(np.asarray(loss, dtype=x.dtype), (logits,), bw, "cross_entropy")


def mse(pred, target, mask=None):
    """Mean squared error, optionally restricted to entries where ``mask`` is true."""
    pred = _wrap(pred)
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if tgt.shape != pred.shape:
        raise ShapeError(f"mse shape mismatch: {pred.shape} vs {tgt.shape}")
    diff = pred.data - tgt
    if mask is None:
        w = np.ones_like(diff)
    else:
        w = np.broadcast_to(np.asarray(mask, dtype=diff.dtype), diff.shape)
    n = float(w.sum())
    if n == 0:
        return _node(np.zeros((), dtype=pred.dtype), (pred,), lambda g: (np.zeros_like(diff),), "mse")
    loss = (w * diff * diff).sum() / n
    return _node(np.asarray(loss, dtype=pred.dtype), (pred,), lambda g: (2.0 * g * w * diff / n,), "mse")


def layer_norm(x, gamma, beta, eps=1e-5):
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    gd = gamma.data
    lead = tuple(range(xd.ndim - 1))

    def bw(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _node(xhat * gd + beta.data, (x, gamma, beta), bw, "layer_norm")


def batch_norm(x, gamma, beta, running_mean, running_var, train, momentum=0.1, eps=1e-5):
    """Batch norm over every axis but the last (channels).

    In train mode batch statistics are used and the running buffers (numpy
    arrays) are updated in place. In eval mode the running statistics are used,
    making the op a fixed affine map of its input.
    """
    xd = x.data
    lead = tuple(range(xd.ndim - 1))
    gd = gamma.data
    if train:
        mu = xd.mean(axis=lead)
        var = xd.var(axis=lead)
        m = xd.size // xd.shape[-1]
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mu) * inv

        def bw(g):
            dxhat = g * gd
            dx = inv * (dxhat - dxhat.mean(axis=lead) - xhat * (dxhat * xhat).mean(axis=lead))
            return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (xd - running_mean) * inv

        def bw(g):
            return g * (gd * inv), (g * xhat).sum(axis=lead), g.sum(axis=lead)

    out = (xhat * gd + beta.data).astype(xd.dtype)
    return _node(out, (x, gamma, beta), bw, "batch_norm")


def dropout(x, p, train, rng=None):
    """Inverted dropout; eval mode (or p == 0) returns ``x`` itself."""
    if not 0 <= p < 1:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0:
        return x
    if rng is None:
        raise ConfigError("dropout in train mode needs an explicit rng stream")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _node(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# spatial ops (channels-last) ----------------------------------------------

def _conv2d_raw(x, k):
    """Same-padded stride-1 cross-correlation. x: (N,H,W,Cin), k: (kh,kw,Cin,Cout)."""
    kh, kw, cin, cout = k.shape
    n, h, w, _ = x.shape
    if kh == 1 and kw == 1:
        cols = x.reshape(-1, cin)
    else:
        ph, pw = kh // 2, kw // 2
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # N,H,W,Cin,kh,kw
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, kh * kw * cin)
    out = (cols @ k.reshape(-1, cout)).reshape(n, h, w, cout)
    return out, cols


def conv2d(x, k, bias=None):
    """Zero-padded 'same' 2-D cross-correlation, stride 1, channels-last.

    ``x`` is (H, W, Cin) or (N, H, W, Cin); ``k`` is (kh, kw, Cin, Cout) with
    odd kh and kw.
    """
    kh, kw, cin, cout = k.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if x.shape[-1] != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {k.shape}")
    lead = x.shape[:-3]
    xd = x.data.reshape((-1,) + x.shape[-3:])
    kd = k.data
    out, cols = _conv2d_raw(xd, kd)

    def bw(g):
        g4 = g.reshape(out.shape)
        gk = (cols.T @ g4.reshape(-1, cout)).reshape(kd.shape)
        gx, _ = _conv2d_raw(g4, np.ascontiguousarray(kd[::-1, ::-1].transpose(0, 1, 3, 2)))
        return gx.reshape(x.shape), gk

    y = _node(out.reshape(lead + out.shape[1:]), (x, k), bw, "conv2d")
    if bias is not None:
        y = add(y, bias)
    return y


def _conv1d_raw(x, k, left, right):
    ks, cin, cout = k.shape
    n, length, _ = x.shape
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    win = sliding_window_view(xp, ks, axis=1)  # N, L', Cin, ks
    win = win[:, :length]
    cols = win.transpose(0, 1, 3, 2).reshape(-1, ks * cin)
    return (cols @ k.reshape(-1, cout)).reshape(n, length, cout), cols


def conv1d(x, k, bias=None):
    """Same-length 1-D cross-correlation over (N, L, Cin) with kernel (ks, Cin, Cout).

    Even kernel sizes pad one extra zero on the right.
    """
    ks, cin, cout = k.shape
    if x.ndim != 3 or x.shape[-1] != cin:
        raise ShapeError(f"conv1d expects (N, L, {cin}) input, got {x.shape}")
    left = (ks - 1) // 2
    right = ks - 1 - left
    kd = k.data
    out, cols = _conv1d_raw(x.data, kd, left, right)

    def bw(g):
        gk = (cols.T @ g.reshape(-1, cout)).reshape(kd.shape)
        gx, _ = _conv1d_raw(g, np.ascontiguousarray(kd[::-1].transpose(0, 2, 1)), right, left)
        return gx, gk

    y = _node(out, (x, k), bw, "conv1d")
    if bias is not None:
        y = add(y, bias)
    return y


def maxpool2d(x):
    """2x2 max pooling, stride 2, over (..., H, W, C) with even H and W."""
    *lead, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d needs even spatial extents, got {h}x{w}")
    xd = x.data.reshape(-1, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    win = xd.reshape(xd.shape[:4] + (4,))
    idx = win.argmax(axis=-1)[..., None]
    out = np.take_along_axis(win, idx, axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, idx, g.reshape(out.shape)[..., None], axis=-1)
        gx = gw.reshape(xd.shape).transpose(0, 1, 4, 2, 5, 3)
        return (gx.reshape(x.shape),)

    return _node(out.reshape(tuple(lead) + (h // 2, w // 2, c)), (x,), bw, "maxpool2d")


def maxpool1d(x):
    """Max pooling of width 2, stride 2, over (N, L, C); an odd trailing element is dropped."""
    n, length, c = x.shape
    half = length // 2
    if half == 0:
        raise ShapeError(f"maxpool1d needs length >= 2, got {length}")
    win = x.data[:, : 2 * half].reshape(n, half, 2, c)
    idx = win.argmax(axis=2)[:, :, None]
    out = np.take_along_axis(win, idx, axis=2)[:, :, 0]

    def bw(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, idx, g[:, :, None], axis=2)
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, : 2 * half] = gw.reshape(n, 2 * half, c)
        return (gx,)

    return _node(out, (x,), bw, "maxpool1d")


def upsample2x(x):
    """Nearest-neighbour 2x spatial upsampling over (..., H, W, C)."""
    *lead, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=-3), 2, axis=-2)

    def bw(g):
        g = g.reshape(tuple(lead) + (h, 2, w, 2, c))
        return (g.sum(axis=(-4, -2)),)

    return _node(out, (x,), bw, "upsample2x")


# non-differentiable transform -------------------------------------------------

def conv1d_dilated(x, weights, dilation, bias=0.0):
    """Dilated, zero-padded 'same' correlation of a 1-D signal, minus ``bias``.

    ``out[t] = sum_j weights[j] * x[t + (j - m) * dilation] - bias`` with
    ``m = len(weights) // 2`` and ``x`` zero outside ``[0, L)``.
    """
    if dilation < 1:
        raise ConfigError(f"dilation must be a positive integer, got {dilation}")
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    length = x.shape[-1]
    m = len(weights) // 2
    out = np.zeros_like(x)
    for j, wj in enumerate(weights):
        shift = (j - m) * dilation
        lo, hi = max(0, -shift), min(length, length - shift)
        if lo < hi:
            out[..., lo:hi] += wj * x[..., lo + shift: hi + shift]
    return out - bias


# optimizers ------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = [AdamState(np.zeros_like(p.data), np.zeros_like(p.data)) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        b1, b2 = self.beta1, self.beta2
        for p, st in zip(self.params, self.state):
            g = p.grad
            st.t += 1
            st.m = b1 * st.m + (1 - b1) * g
            st.v = b2 * st.v + (1 - b2) * g * g
            mhat = st.m / (1 - b1 ** st.t)
            vhat = st.v / (1 - b2 ** st.t)
            p.data = (p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


class SGD:
    def __init__(self, params, lr=1e-1):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        sgd_step(self.params, self.lr)


def sgd_step(params, lr):
    for p in params:
        if p.requires_grad:
            p.data = (p.data - lr * p.grad).astype(p.data.dtype)


# verification ------------------------------------------------------------------

def grad_check(fn, inputs, eps=1e-5, seed=0):
    """Compare backward gradients of ``fn`` with central finite differences.

    ``fn`` maps the input tensors to an output tensor, which is scalarized by a
    fixed random projection. Returns the largest normwise relative error
    ``|analytic - numeric| / max(|analytic|, |numeric|)`` across inputs that
    require gradients. Run under ``precision(64)``.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    proj = rng.standard_normal(out.shape).astype(out.dtype)

    def scalar():
        with no_grad():
            return float((fn(*inputs).data * proj).sum())

    backward(sum_all(mul(out, proj)))
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad.copy()
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = scalar()
            flat[i] = orig - eps
            down = scalar()
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * eps)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / denom))
    return worst


def sum_all(a):
    return tsum(a)
