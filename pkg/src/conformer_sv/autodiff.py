"""Minimal dense-tensor kernel with reverse-mode differentiation.

Covers exactly the op set the encoder, pooling and loss need: matmul,
1-D/2-D convolution, reductions, shape ops and a small elementwise suite.
Data is stored as float64 numpy arrays; gradients are accumulated
additively across fan-out during a single reverse topological sweep.
"""

from __future__ import annotations

import numpy as np

from .errors import GraphConsumed, NonScalarLoss, ShapeMismatch

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_consumed")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += _unbroadcast(np.asarray(g), self.data.shape)

    def backward(self):
        """Populate .grad on every requires_grad leaf reachable from self."""
        if self.data.size != 1:
            raise NonScalarLoss(f"backward() needs a scalar, got shape {self.shape}")
        if self._consumed:
            raise GraphConsumed("backward() already ran on this graph")
        topo = []
        visited = set()
        stack = [(self, False)]
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
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is not None:
                node._vjp(node.grad)
                node._vjp = None
                node._consumed = True
        self._consumed = True

    # operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __rtruediv__(self, other):
        return mul(power(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, vjp):
    """Build an op result, recording the graph only when needed."""
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    rg = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=rg)
    if rg:
        out._parents = parents
        out._vjp = vjp
    return out


# elementwise ---------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def vjp(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g)

    return _result(data, (a, b), vjp)


def mul(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b) if np.isscalar(b) else np.asarray(b, dtype=np.float64)
        data = a.data * c

        def vjp_const(g):
            a._accum(g * c)

        return _result(data, (a,), vjp_const)
    data = a.data * b.data

    def vjp(g):
        if a.requires_grad:
            a._accum(g * b.data)
        if b.requires_grad:
            b._accum(g * a.data)

    return _result(data, (a, b), vjp)


def power(a, p):
    a = as_tensor(a)
    data = a.data ** p

    def vjp(g):
        a._accum(g * p * a.data ** (p - 1))

    return _result(data, (a,), vjp)


def texp(a):
    a = as_tensor(a)
    data = np.exp(a.data)

    def vjp(g):
        a._accum(g * data)

    return _result(data, (a,), vjp)


def tlog(a):
    a = as_tensor(a)
    data = np.log(a.data)

    def vjp(g):
        a._accum(g / a.data)

    return _result(data, (a,), vjp)


def tsqrt(a):
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def vjp(g):
        a._accum(g * 0.5 / data)

    return _result(data, (a,), vjp)


def ttanh(a):
    a = as_tensor(a)
    data = np.tanh(a.data)

    def vjp(g):
        a._accum(g * (1.0 - data * data))

    return _result(data, (a,), vjp)


def sigmoid(a):
    a = as_tensor(a)
    data = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        a._accum(g * data * (1.0 - data))

    return _result(data, (a,), vjp)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    data = np.where(mask, a.data, 0.0)

    def vjp(g):
        a._accum(g * mask)

    return _result(data, (a,), vjp)


def swish(a):
    """x * sigmoid(x)."""
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    data = a.data * s

    def vjp(g):
        a._accum(g * (s + a.data * s * (1.0 - s)))

    return _result(data, (a,), vjp)


def clamp_min(a, lo):
    """Elementwise max(a, lo); gradient passes only where a > lo."""
    a = as_tensor(a)
    mask = a.data > lo
    data = np.where(mask, a.data, lo)

    def vjp(g):
        a._accum(g * mask)

    return _result(data, (a,), vjp)


def glu(a, axis=-1):
    """Gated linear unit: split `axis` in half, first * sigmoid(second)."""
    a = as_tensor(a)
    n = a.data.shape[axis]
    if n % 2 != 0:
        raise ShapeMismatch(f"glu axis size {n} is odd")
    x, gate = np.split(a.data, 2, axis=axis)
    s = 1.0 / (1.0 + np.exp(-gate))
    data = x * s

    def vjp(g):
        gx = g * s
        gg = g * x * s * (1.0 - s)
        a._accum(np.concatenate([gx, gg], axis=axis))

    return _result(data, (a,), vjp)


def dropout(a, p, rng, train):
    """Inverted dropout; identity in eval mode. `rng` is a numpy Generator."""
    a = as_tensor(a)
    if not train or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p={p} outside [0, 1)")
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
    data = a.data * mask

    def vjp(g):
        a._accum(g * mask)

    return _result(data, (a,), vjp)


# reductions ----------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        a._accum(np.broadcast_to(g, a.data.shape))

    return _result(data, (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[i] for i in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(a, axis=-1):
    """Numerically stable softmax along `axis`."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        gx = data * (g - (g * data).sum(axis=axis, keepdims=True))
        a._accum(gx)

    return _result(data, (a,), vjp)


def logsumexp(a, axis=-1, keepdims=False):
    a = as_tensor(a)
    c = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - c)
    s = e.sum(axis=axis, keepdims=True)
    data = np.log(s) + c
    if not keepdims:
        data = np.squeeze(data, axis=axis)

    def vjp(g):
        g = np.asarray(g)
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(g * e / s)

    return _result(data, (a,), vjp)


# linear algebra ------------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul inner dims: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def vjp(g):
        g = np.asarray(g)
        if b.ndim == 1:
            # a: (..., m, k) @ b: (k,) -> (..., m)
            if a.requires_grad:
                a._accum(g[..., None] * b.data)
            if b.requires_grad:
                gb = (a.data * g[..., None]).reshape(-1, b.data.shape[0]).sum(axis=0)
                b._accum(gb)
            return
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accum(_unbroadcast(ga, a.data.shape) if ga.shape != a.data.shape else ga)
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accum(_unbroadcast(gb, b.data.shape) if gb.shape != b.data.shape else gb)

    return _result(data, (a, b), vjp)


# shape ops -----------------------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def vjp(g):
        a._accum(np.asarray(g).reshape(a.data.shape))

    return _result(data, (a,), vjp)


def transpose(a, axes=None):
    a = as_tensor(a)
    data = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def vjp(g):
        a._accum(np.transpose(np.asarray(g), inv))

    return _result(data, (a,), vjp)


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    data = np.swapaxes(a.data, ax1, ax2)

    def vjp(g):
        a._accum(np.swapaxes(np.asarray(g), ax1, ax2))

    return _result(data, (a,), vjp)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        pieces = np.split(np.asarray(g), splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accum(piece)

    return _result(data, tensors, vjp)


def pad(a, pad_width):
    """Zero padding; pad_width as in np.pad."""
    a = as_tensor(a)
    data = np.pad(a.data, pad_width)

    def vjp(g):
        sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.data.shape))
        a._accum(np.asarray(g)[sl])

    return _result(data, (a,), vjp)


def take(a, idx):
    """Basic slicing / integer indexing with scatter-add backward."""
    a = as_tensor(a)
    data = a.data[idx]

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, np.asarray(g))
        a._accum(ga)

    return _result(data, (a,), vjp)


# convolution ---------------------------------------------------------------


def conv1d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """Cross-correlation over [batch, C_in, T].

    weight: [C_out, C_in/groups, K]. Pointwise = K 1; depthwise = groups C_in.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if bias is not None:
        bias = as_tensor(bias)
    B, cin, T = x.shape
    cout, cin_g, K = weight.shape
    if cin % groups or cout % groups or cin_g != cin // groups:
        raise ShapeMismatch(f"conv1d groups={groups}, C_in={cin}, weight {weight.shape}")
    if K > T + 2 * padding:
        raise ShapeMismatch(f"conv1d kernel {K} > padded length {T + 2 * padding}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    t_out = (T + 2 * padding - K) // stride + 1
    idx = np.arange(t_out)[None, :] * stride + np.arange(K)[:, None]  # (K, T_out)
    patches = xp[:, :, idx]  # (B, C_in, K, T_out)
    pg = patches.reshape(B, groups, cin_g, K, t_out)
    wg = weight.data.reshape(groups, cout // groups, cin_g, K)
    out = np.einsum("bgikt,goik->bgot", pg, wg, optimize=True).reshape(B, cout, t_out)
    if bias is not None:
        out = out + bias.data[None, :, None]

    def vjp(g):
        g = np.asarray(g).reshape(B, groups, cout // groups, t_out)
        if weight.requires_grad:
            gw = np.einsum("bgot,bgikt->goik", g, pg, optimize=True)
            weight._accum(gw.reshape(cout, cin_g, K))
        if x.requires_grad:
            gp = np.einsum("bgot,goik->bgikt", g, wg, optimize=True)
            gxp = np.zeros_like(xp)
            np.add.at(gxp, (slice(None), slice(None), idx), gp.reshape(B, cin, K, t_out))
            x._accum(gxp[:, :, padding:padding + T] if padding else gxp)
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 3)).reshape(cout))

    return _result(out, (x, weight) + ((bias,) if bias is not None else ()), vjp)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation over [batch, C_in, H, W]; stride/padding per axis or shared."""
    x, weight = as_tensor(x), as_tensor(weight)
    if bias is not None:
        bias = as_tensor(bias)
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    B, cin, H, W = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin_w != cin:
        raise ShapeMismatch(f"conv2d C_in {cin} vs weight {weight.shape}")
    if kh > H + 2 * ph or kw > W + 2 * pw:
        raise ShapeMismatch("conv2d kernel larger than padded input")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    h_out = (H + 2 * ph - kh) // sh + 1
    w_out = (W + 2 * pw - kw) // sw + 1
    ih = np.arange(h_out)[None, :] * sh + np.arange(kh)[:, None]  # (kh, h_out)
    iw = np.arange(w_out)[None, :] * sw + np.arange(kw)[:, None]  # (kw, w_out)
    patches = xp[:, :, ih[:, None, :, None], iw[None, :, None, :]]  # (B,C,kh,kw,ho,wo)
    out = np.einsum("bcijhw,ocij->bohw", patches, weight.data, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def vjp(g):
        g = np.asarray(g)
        if weight.requires_grad:
            weight._accum(np.einsum("bohw,bcijhw->ocij", g, patches, optimize=True))
        if x.requires_grad:
            gp = np.einsum("bohw,ocij->bcijhw", g, weight.data, optimize=True)
            gxp = np.zeros_like(xp)
            np.add.at(
                gxp,
                (slice(None), slice(None), ih[:, None, :, None], iw[None, :, None, :]),
                gp,
            )
            x._accum(gxp[:, :, ph:ph + H, pw:pw + W] if (ph or pw) else gxp)
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2, 3)))

    return _result(out, (x, weight) + ((bias,) if bias is not None else ()), vjp)
