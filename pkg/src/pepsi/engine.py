"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Image tensors follow the (batch, channel, height, width) layout; losses are
scalars and attention scores are matrices, so any rank is accepted. Training
runs in float32. Building a graph from float64 arrays keeps every op in
float64, which the finite-difference gradient checker relies on.

Gradients accumulate in a fixed topological order, so repeated backward
passes over the same graph (after zeroing) are bit-identical.
"""

from __future__ import annotations

import contextlib

import numpy as np


class ContractError(ValueError):
    """Arguments violate an operation's contract (shape, range, or graph)."""


class SizingError(ContractError):
    """Spatial extent too small for the requested padding."""


_GRAD_ENABLED = True
_DEBUG_CHECKS = False

# forward-call counters, used by operation-count audits (see tests and the
# infer path); keys are op names, values call counts
op_counts: dict = {}


def _bump(name):
    op_counts[name] = op_counts.get(name, 0) + 1


def reset_op_counts():
    op_counts.clear()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_debug_checks(enabled):
    """Toggle NaN/Inf detection on every op output (checked failure mode)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


class Tensor:
    """A dense array plus an optional position in a differentiation graph.

    Leaves created with requires_grad=True receive gradients in ``.grad``
    after ``backward()`` on a downstream scalar. Non-floating input data is
    converted to float32; floating dtypes are preserved.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = data if isinstance(data, np.ndarray) else np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

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

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self):
        """Reverse-mode accumulation from this scalar into every reachable
        requires_grad leaf. Adds into existing ``.grad`` buffers."""
        if self.data.size != 1:
            raise ContractError("backward requires a scalar loss, got shape %r"
                                % (self.data.shape,))
        topo = self._toposort()
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = g
            else:
                node.grad = node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    def _toposort(self):
        topo = []
        visited = {id(self)}
        stack = [(self, iter(self._parents))]
        while stack:
            node, parents = stack[-1]
            advanced = False
            for p in parents:
                if p.requires_grad and id(p) not in visited:
                    visited.add(id(p))
                    stack.append((p, iter(p._parents)))
                    advanced = True
                    break
            if not advanced:
                topo.append(node)
                stack.pop()
        return topo

    # arithmetic sugar
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    @property
    def T(self):
        return transpose2d(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable leaf with a persistent gradient buffer and a checkpoint name
    (dot-separated path, unique within a network)."""

    __slots__ = ("name",)

    def __init__(self, data, name):
        super().__init__(np.asarray(data), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.data.shape})"


def _coerce(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward, name):
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {name}")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a, b):
    a, b = _coerce(a), _coerce(b)

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(a.data + b.data, (a, b), bwd, "add")


def sub(a, b):
    a, b = _coerce(a), _coerce(b)

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(a.data - b.data, (a, b), bwd, "sub")


def mul(a, b):
    a, b = _coerce(a), _coerce(b)

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), bwd, "mul")


def div(a, b):
    a, b = _coerce(a), _coerce(b)

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return _node(a.data / b.data, (a, b), bwd, "div")


def neg(a):
    a = _coerce(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b):
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractError("matmul expects 2-D operands")

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), bwd, "matmul")


def tsum(a, axis=None, keepdims=False):
    a = _coerce(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape),)

    return _node(data, (a,), bwd, "sum")


def tmean(a, axis=None, keepdims=False):
    a = _coerce(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.shape[axis]

    def bwd(g):
        scale = a.data.dtype.type(1.0 / count)
        if axis is None:
            return (np.broadcast_to(g * scale, a.data.shape),)
        gg = g * scale
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.data.shape),)

    return _node(data, (a,), bwd, "mean")


def reshape(a, shape):
    a = _coerce(a)
    return _node(a.data.reshape(shape), (a,),
                 lambda g: (g.reshape(a.data.shape),), "reshape")


def transpose2d(a):
    a = _coerce(a)
    if a.data.ndim != 2:
        raise ContractError("transpose2d expects a matrix")
    return _node(np.ascontiguousarray(a.data.T), (a,),
                 lambda g: (g.T,), "transpose")


def sqrt(a):
    """Elementwise square root of a nonnegative tensor. The gradient is
    zeroed near the origin (denominator below 1e-6) instead of exploding."""
    a = _coerce(a)
    s = np.sqrt(a.data)

    def bwd(g):
        denom = 2.0 * s
        safe = np.where(denom > 1e-6, denom, 1.0)
        return (np.where(denom > 1e-6, g / safe, 0.0),)

    return _node(s, (a,), bwd, "sqrt")


def tanh(a):
    a = _coerce(a)
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(a):
    a = _coerce(a)
    return _node(np.maximum(a.data, 0.0), (a,),
                 lambda g: (g * (a.data > 0),), "relu")


def absolute(a):
    a = _coerce(a)
    return _node(np.abs(a.data), (a,),
                 lambda g: (g * np.sign(a.data),), "abs")


def clamp_min(a, floor):
    a = _coerce(a)
    return _node(np.maximum(a.data, floor), (a,),
                 lambda g: (g * (a.data > floor),), "clamp_min")


def elu(a):
    """x for x > 0, exp(x) - 1 otherwise (alpha = 1)."""
    a = _coerce(a)
    neg_part = np.expm1(np.minimum(a.data, 0.0))
    y = np.where(a.data > 0, a.data, neg_part)

    def bwd(g):
        return (g * np.where(a.data > 0, 1.0, neg_part + 1.0),)

    return _node(y, (a,), bwd, "elu")


def leaky_relu(a, slope=0.2):
    a = _coerce(a)
    y = np.where(a.data > 0, a.data, slope * a.data)
    return _node(y, (a,),
                 lambda g: (g * np.where(a.data > 0, 1.0, slope),), "leaky_relu")


def clip_unit(a):
    """Hard clamp to [-1, 1]; zero gradient strictly outside the interval."""
    a = _coerce(a)
    y = np.clip(a.data, -1.0, 1.0)

    def bwd(g):
        return (g * ((a.data >= -1.0) & (a.data <= 1.0)),)

    return _node(y, (a,), bwd, "clip_unit")


ACTIVATIONS = {
    "elu": elu,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "clip_unit": clip_unit,
}


def activation(a, kind):
    try:
        return ACTIVATIONS[kind](a)
    except KeyError:
        raise ContractError(f"unknown activation kind {kind!r}") from None


def softmax(a, axis=-1):
    """Numerically stable softmax along one axis (max subtraction)."""
    a = _coerce(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _node(y, (a,), bwd, "softmax")


def scaled_softmax(v, lam):
    """softmax(lam * v) for a vector; sums to 1 within 1e-6."""
    v = _coerce(v)
    if v.data.ndim != 1:
        raise ContractError("scaled_softmax expects a vector")
    if v.data.size == 0:
        raise ContractError("scaled_softmax of an empty vector")
    if not lam > 0:
        raise ContractError("softmax scale must be positive")
    return softmax(mul(v, float(lam)), axis=-1)


def l1_mean(a, b):
    """Mean absolute difference over all elements; subgradient 0 at ties."""
    a, b = _coerce(a), _coerce(b)
    if a.data.shape != b.data.shape:
        raise ContractError("l1_mean dims mismatch: %r vs %r"
                            % (a.data.shape, b.data.shape))
    return tmean(absolute(sub(a, b)))


# ---------------------------------------------------------------------------
# structural ops


def take_rows(a, idx):
    """Gather along axis 0; backward scatter-adds into the source rows."""
    a = _coerce(a)
    idx = np.asarray(idx, dtype=np.intp)
    data = a.data[idx]

    def bwd(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        return (buf,)

    return _node(data, (a,), bwd, "take_rows")


def concat0(tensors):
    """Concatenate along axis 0."""
    tensors = [_coerce(t) for t in tensors]
    if not tensors:
        raise ContractError("concat0 of an empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=0)
    sizes = [t.data.shape[0] for t in tensors]

    def bwd(g):
        outs, off = [], 0
        for n in sizes:
            outs.append(g[off:off + n])
            off += n
        return tuple(outs)

    return _node(data, tuple(tensors), bwd, "concat0")


def channel_shuffle(a, groups):
    """Interleave channels across groups: (g, c/g) blocks transposed."""
    a = _coerce(a)
    n, c, h, w = a.data.shape
    if c % groups:
        raise ContractError("channel count not divisible by groups")
    per = c // groups

    def fwd(arr):
        return arr.reshape(n, groups, per, h, w).transpose(0, 2, 1, 3, 4).reshape(n, c, h, w)

    def bwd(g):
        return (g.reshape(n, per, groups, h, w).transpose(0, 2, 1, 3, 4).reshape(n, c, h, w),)

    return _node(fwd(a.data), (a,), bwd, "channel_shuffle")


def upsample_nearest2x(a):
    """Replicate each pixel into a 2x2 block; gradient sums the block."""
    a = _coerce(a)
    if a.data.ndim != 4:
        raise ContractError("upsample_nearest2x expects an NCHW tensor")
    n, c, h, w = a.data.shape
    y = a.data.repeat(2, axis=2).repeat(2, axis=3)

    def bwd(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    _bump("upsample_nearest2x")
    return _node(y, (a,), bwd, "upsample_nearest2x")


# ---------------------------------------------------------------------------
# convolution


def _pair(v):
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ContractError("stride pair must have two entries")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _conv_geometry(h, w, k, sh, sw, dil, padding):
    """Output size and (top, bottom, left, right) padding amounts."""
    if padding == "none":
        eff = (k - 1) * dil + 1
        if h < eff or w < eff:
            raise SizingError(f"input {h}x{w} smaller than effective kernel {eff}")
        return (h - eff) // sh + 1, (w - eff) // sw + 1, (0, 0, 0, 0)
    oh = -(-h // sh)
    ow = -(-w // sw)
    ph = max((oh - 1) * sh + (k - 1) * dil + 1 - h, 0)
    pw = max((ow - 1) * sw + (k - 1) * dil + 1 - w, 0)
    return oh, ow, (ph // 2, ph - ph // 2, pw // 2, pw - pw // 2)


def _pad2d(x, pads, padding):
    pt, pb, pl, pr = pads
    if padding == "none" or (pt | pb | pl | pr) == 0:
        return x
    mode = "reflect" if padding == "reflect" else "constant"
    return np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), mode=mode)


def _reflect_index(n, before, after):
    """Source index in [0, n) of every padded position under mirror
    reflection, repeated for pads wider than the axis."""
    pos = np.arange(-before, n + after)
    if n == 1:
        return np.zeros_like(pos)
    period = 2 * (n - 1)
    m = np.mod(pos, period)
    return np.where(m < n, m, period - m)


def _unpad2d_fold(g, pads, padding, h, w):
    """Inverse of _pad2d for gradients: reflected border gradients fold back
    onto their interior source rows/columns."""
    pt, pb, pl, pr = pads
    if padding == "none" or (pt | pb | pl | pr) == 0:
        return g
    if padding == "zero":
        return g[:, :, pt:pt + h, pl:pl + w]
    if max(pt, pb) <= h - 1 and max(pl, pr) <= w - 1:
        # single mirror bounce, fold with strided adds
        for p in range(pt):
            g[:, :, 2 * pt - p, :] += g[:, :, p, :]
        for m in range(pb):
            g[:, :, pt + h - 2 - m, :] += g[:, :, pt + h + m, :]
        g = g[:, :, pt:pt + h, :]
        for p in range(pl):
            g[:, :, :, 2 * pl - p] += g[:, :, :, p]
        for m in range(pr):
            g[:, :, :, pl + w - 2 - m] += g[:, :, :, pl + w + m]
        return g[:, :, :, pl:pl + w]
    # pads wider than the axis reflect repeatedly; scatter-add by index map
    n, c = g.shape[:2]
    rows = np.zeros((n, c, h, g.shape[3]), dtype=g.dtype)
    np.add.at(rows, (slice(None), slice(None), _reflect_index(h, pt, pb)), g)
    out = np.zeros((n, c, h, w), dtype=g.dtype)
    np.add.at(out, (slice(None), slice(None), slice(None), _reflect_index(w, pl, pr)), rows)
    return out


def _im2col(xg, k, sh, sw, dil, oh, ow):
    n, c = xg.shape[:2]
    he = (oh - 1) * sh + 1
    we = (ow - 1) * sw + 1
    cols = np.empty((n, k, k, c, oh, ow), dtype=xg.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xg[:, :, i * dil:i * dil + he:sh, j * dil:j * dil + we:sw]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, k * k * c)


def _col2im(d2, n, c, k, sh, sw, dil, oh, ow, hp, wp):
    he = (oh - 1) * sh + 1
    we = (ow - 1) * sw + 1
    d6 = d2.reshape(n, oh, ow, k, k, c).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, hp, wp), dtype=d2.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i * dil:i * dil + he:sh, j * dil:j * dil + we:sw] += d6[:, i, j]
    return out


def conv2d(x, w, bias=None, stride=1, dilation=1, padding="reflect", groups=1):
    """2-D convolution (cross-correlation) over NCHW input.

    Weight layout is (k, k, C_in/groups, C_out) with odd square kernels.
    Padding kinds: "reflect" and "zero" produce ceil(H/stride) outputs with
    the shortfall split beg/end; "none" is a valid convolution. Differentiable
    with respect to x, w and bias.
    """
    x, w = _coerce(x), _coerce(w)
    b = _coerce(bias) if bias is not None else None
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ContractError("conv2d expects NCHW input and (k,k,Cin,Cout) weight")
    k, k2, cin_g, cout = w.data.shape
    if k != k2 or k % 2 == 0:
        raise ContractError(f"kernel must be odd and square, got {k}x{k2}")
    if padding not in ("reflect", "zero", "none"):
        raise ContractError(f"unknown padding kind {padding!r}")
    sh, sw = _pair(stride)
    dil = int(dilation)
    if sh < 1 or sw < 1 or dil < 1 or groups < 1:
        raise ContractError("stride, dilation and groups must be positive")
    n, cin, h, wd_ = x.data.shape
    if cin != cin_g * groups:
        raise ContractError(f"input has {cin} channels, weight wants {cin_g * groups}")
    if cout % groups:
        raise ContractError("output channels not divisible by groups")
    if b is not None and b.data.shape != (cout,):
        raise ContractError("bias must have shape (C_out,)")
    cout_g = cout // groups

    oh, ow, pads = _conv_geometry(h, wd_, k, sh, sw, dil, padding)
    xp = _pad2d(x.data, pads, padding)
    hp, wp = xp.shape[2], xp.shape[3]

    cols = []
    blocks = []
    for gi in range(groups):
        c2 = _im2col(xp[:, gi * cin_g:(gi + 1) * cin_g], k, sh, sw, dil, oh, ow)
        wm = w.data[:, :, :, gi * cout_g:(gi + 1) * cout_g].reshape(k * k * cin_g, cout_g)
        cols.append(c2)
        blocks.append((c2 @ wm).reshape(n, oh, ow, cout_g))
    y = np.concatenate(blocks, axis=3) if groups > 1 else blocks[0]
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    if b is not None:
        y += b.data.reshape(1, cout, 1, 1)

    need_x = x.requires_grad
    need_w = w.requires_grad

    def bwd(g):
        g_ = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        db = g_.sum(axis=(0, 1, 2)) if b is not None and b.requires_grad else None
        dw = np.empty_like(w.data) if need_w else None
        dxp = np.zeros((n, cin, hp, wp), dtype=g.dtype) if need_x else None
        for gi in range(groups):
            g2 = g_[..., gi * cout_g:(gi + 1) * cout_g].reshape(n * oh * ow, cout_g)
            if need_w:
                dw[:, :, :, gi * cout_g:(gi + 1) * cout_g] = \
                    (cols[gi].T @ g2).reshape(k, k, cin_g, cout_g)
            if need_x:
                wm = w.data[:, :, :, gi * cout_g:(gi + 1) * cout_g].reshape(k * k * cin_g, cout_g)
                dxp[:, gi * cin_g:(gi + 1) * cin_g] = _col2im(
                    g2 @ wm.T, n, cin_g, k, sh, sw, dil, oh, ow, hp, wp)
        dx = _unpad2d_fold(dxp, pads, padding, h, wd_) if need_x else None
        if b is not None:
            return dx, dw, db
        return dx, dw

    _bump("conv2d")
    parents = (x, w, b) if b is not None else (x, w)
    return _node(y, parents, bwd, "conv2d")


def unfold(x, k=3, stride=1, dilation=1, padding="reflect"):
    """Extract k x k patches at every output position.

    Returns (N, oh*ow, k*k*C) with rows ordered row-major over positions and
    columns ordered (tap_row, tap_col, channel). Differentiable.
    """
    x = _coerce(x)
    if x.data.ndim != 4:
        raise ContractError("unfold expects an NCHW tensor")
    sh, sw = _pair(stride)
    dil = int(dilation)
    n, c, h, w = x.data.shape
    oh, ow, pads = _conv_geometry(h, w, k, sh, sw, dil, padding)
    xp = _pad2d(x.data, pads, padding)
    hp, wp = xp.shape[2], xp.shape[3]
    cols = _im2col(xp, k, sh, sw, dil, oh, ow).reshape(n, oh * ow, k * k * c)

    def bwd(g):
        dxp = _col2im(g.reshape(n * oh * ow, k * k * c),
                      n, c, k, sh, sw, dil, oh, ow, hp, wp)
        return (_unpad2d_fold(dxp, pads, padding, h, w),)

    return _node(cols, (x,), bwd, "unfold")
