"""Dense float64 tensors with a reverse-mode gradient tape.

Operations performed while a :class:`Tape` is active (``with Tape() as tape:``)
are recorded when at least one operand is a grad-enabled leaf or was itself
produced on that tape. Outside a tape every operation is a plain numpy
evaluation. The active-tape stack is thread-local, so tapes opened on
different threads never see each other.

    >>> x = Tensor([3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = (x * x).sum()
    >>> tape.backward(y)[x]
    array([6.])
"""

import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DomainError

__all__ = [
    "Tensor", "Tape", "as_tensor", "no_tape",
    "add", "sub", "mul", "div", "scale", "neg", "exp", "log", "sqrt", "tanh",
    "silu", "power", "sum", "mean", "reshape", "broadcast_to", "concat",
    "getitem", "take", "transpose", "matmul", "conv2d_same", "avg_pool2d",
    "softmax", "softmax_flat", "bilinear_warp", "mse",
]

_local = threading.local()


def _stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def _active_tape():
    stack = _stack()
    return stack[-1] if stack else None


class no_tape:
    """Context manager that suspends recording on the current thread."""

    def __enter__(self):
        _stack().append(None)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False


class Tensor:
    """An n-dimensional float64 array that can take part in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(other, self)

    def __truediv__(self, other):
        if np.isscalar(other):
            if other == 0:
                raise DomainError("division by zero")
            return scale(self, 1.0 / other)
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive applications for one backward pass."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def _tracks(self, t):
        return t.requires_grad or t._tape is self

    def record(self, out, inputs, vjp):
        out._tape = self
        self.nodes.append((out, inputs, vjp))

    def backward(self, loss, wrt=None):
        """Propagate d(loss)/d(.) back through the recorded nodes.

        Returns a dict mapping every grad-enabled leaf seen on the tape to its
        gradient, or, when ``wrt`` is given, a list of gradients aligned with
        it (zeros for leaves the loss does not reach). Each leaf's ``grad``
        attribute is overwritten with the result.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self._tracks(loss):
            raise ContractError("loss was not produced under this tape")

        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        if loss.requires_grad:
            leaves[id(loss)] = loss
        for out, inputs, vjp in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for t, gi in zip(inputs, vjp(g)):
                if gi is None or not self._tracks(t):
                    continue
                key = id(t)
                if t.requires_grad:
                    leaves[key] = t
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi

        result = {}
        for key, leaf in leaves.items():
            g = np.asarray(grads.get(key, np.zeros_like(leaf.data)), dtype=np.float64)
            leaf.grad = g
            result[leaf] = g
        if wrt is None:
            return result
        out = []
        for t in wrt:
            g = result.get(t)
            if g is None:
                g = np.zeros_like(t.data)
                t.grad = g
            out.append(g)
        return out


def _emit(data, inputs, vjp):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out._tape = None
    tape = _active_tape()
    if tape is not None and any(tape._tracks(t) for t in inputs):
        tape.record(out, inputs, vjp)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a, b, name):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


# elementwise binary ---------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise DomainError("division by zero")
    out = ad / bd
    return _emit(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * out / bd, bd.shape)))


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    return _emit(x.data * c, (x,), lambda g: (g * c,))


def neg(x):
    x = as_tensor(x)
    return _emit(-x.data, (x,), lambda g: (-g,))


# elementwise unary ----------------------------------------------------------

def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _emit(out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of a nonpositive value")
    xd = x.data
    return _emit(np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x):
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt of a negative value")
    out = np.sqrt(x.data)
    return _emit(out, (x,), lambda g: (g * 0.5 / out,))


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _emit(out, (x,), lambda g: (g * (1.0 - out * out),))


def silu(x):
    x = as_tensor(x)
    xd = x.data
    sig = 0.5 * (1.0 + np.tanh(0.5 * xd))
    out = xd * sig
    return _emit(out, (x,), lambda g: (g * (sig * (1.0 + xd * (1.0 - sig))),))


def power(x, p):
    """Elementwise ``x**p`` for a scalar exponent."""
    x = as_tensor(x)
    p = float(p)
    xd = x.data
    if not p.is_integer() and np.any(xd < 0):
        raise DomainError(f"negative base under non-integer exponent {p}")
    out = xd ** p
    if p == 0:
        return _emit(out, (x,), lambda g: (np.zeros_like(g),))
    return _emit(out, (x,), lambda g: (g * p * xd ** (p - 1.0),))


# reductions and shape -------------------------------------------------------

def sum(x, axis=None, keepdims=False):  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(np.asarray(out, dtype=np.float64), (x,), vjp)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis, keepdims), 1.0 / n)


def reshape(x, shape):
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ContractError(f"cannot reshape {x.shape} to {shape}") from None
    src = x.shape
    return _emit(out, (x,), lambda g: (g.reshape(src),))


def broadcast_to(x, shape):
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ContractError(f"cannot broadcast {x.shape} to {shape}") from None
    src = x.shape
    return _emit(out, (x,), lambda g: (_unbroadcast(g, src),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ContractError(f"concat: {e}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def _is_advanced(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(x, idx):
    x = as_tensor(x)
    out = x.data[idx]
    advanced = _is_advanced(idx)
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        if advanced:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return _emit(np.array(out, dtype=np.float64), (x,), vjp)


def take(x, indices, axis=0):
    """Gather entries of ``x`` along ``axis`` (embedding lookup)."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.int64)
    out = np.take(x.data, indices, axis=axis)
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0) if indices.ndim else g)
        return (full,)

    return _emit(out, (x,), vjp)


def transpose(x):
    x = as_tensor(x)
    return _emit(x.data.T.copy(), (x,), lambda g: (g.T,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ContractError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ContractError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    a2 = ad if ad.ndim == 2 else ad[None, :]
    b2 = bd if bd.ndim == 2 else bd[:, None]

    def vjp(g):
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        return ((g2 @ b2.T).reshape(ad.shape), (a2.T @ g2).reshape(bd.shape))

    return _emit(ad @ bd, (a, b), vjp)


# image primitives -----------------------------------------------------------

def _corr_same(x, w, circular):
    c = w.shape[0] // 2
    pad = [(0, 0)] * (x.ndim - 2) + [(c, c), (c, c)]
    xp = np.pad(x, pad, mode="wrap" if circular else "constant")
    win = sliding_window_view(xp, w.shape, axis=(-2, -1))
    return np.tensordot(win, w, axes=([-2, -1], [0, 1])), win


def conv2d_same(x, k, circular=False):
    """Same-size 2-D convolution over the last two axes of ``x``.

    The kernel is flipped (true convolution) and shared by all leading
    channels. Borders are zero-padded unless ``circular``.
    """
    x, k = as_tensor(x), as_tensor(k)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ContractError(f"kernel must be square 2-D, got {k.shape}")
    s = k.shape[0]
    if s % 2 == 0:
        raise ContractError(f"kernel side must be odd, got {s}")
    if x.ndim < 2 or s > min(x.shape[-2:]):
        raise ContractError(f"kernel side {s} exceeds image extent {x.shape}")
    kf = k.data[::-1, ::-1]
    out, win = _corr_same(x.data, kf, circular)
    kd = k.data

    def vjp(g):
        gx, _ = _corr_same(g, kd, circular)
        lead = tuple(range(g.ndim))
        gkf = np.tensordot(win, g, axes=(lead, lead))
        return (gx, gkf[::-1, ::-1].copy())

    return _emit(out, (x, k), vjp)


def avg_pool2d(x, factor):
    """Non-overlapping ``factor``x``factor`` block means over the last two axes."""
    x = as_tensor(x)
    factor = int(factor)
    if factor < 1:
        raise ContractError(f"pool factor must be positive, got {factor}")
    H, W = x.shape[-2:]
    if H % factor or W % factor:
        raise ContractError(f"extent {H}x{W} not divisible by {factor}")
    lead = x.shape[:-2]
    out = x.data.reshape(*lead, H // factor, factor, W // factor, factor).mean(axis=(-3, -1))
    inv = 1.0 / (factor * factor)
    return _emit(out, (x,),
                 lambda g: (np.repeat(np.repeat(g, factor, -2), factor, -1) * inv,))


def softmax(x, axis=None):
    """Softmax along ``axis``; ``axis=None`` normalizes over all entries."""
    x = as_tensor(x)
    xd = x.data
    m = np.max(xd, axis=axis, keepdims=True)
    e = np.exp(xd - m)
    s = e / np.sum(e, axis=axis, keepdims=True)
    return _emit(s, (x,), lambda g: (s * (g - np.sum(g * s, axis=axis, keepdims=True)),))


def softmax_flat(x):
    return softmax(x, axis=None)


def bilinear_warp(x, flow):
    """Backward warp: output pixel p reads ``x`` at ``p - flow[:, p]``.

    ``flow`` has shape (2, H, W) holding (row, column) displacements shared by
    all leading channels of ``x``. Samples falling outside the grid read zero.
    """
    x, flow = as_tensor(x), as_tensor(flow)
    H, W = x.shape[-2:]
    if flow.shape != (2, H, W):
        raise ContractError(f"flow shape {flow.shape} does not match image {x.shape}")
    lead = x.shape[:-2]
    xd = x.data.reshape(-1, H, W)
    ii, jj = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    sy = ii - flow.data[0]
    sx = jj - flow.data[1]
    y0 = np.floor(sy)
    x0 = np.floor(sx)
    wy = sy - y0
    wx = sx - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)

    corners = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yc, xc = y0 + dy, x0 + dx
        valid = (yc >= 0) & (yc < H) & (xc >= 0) & (xc < W)
        flat = np.clip(yc, 0, H - 1) * W + np.clip(xc, 0, W - 1)
        vals = xd.reshape(xd.shape[0], -1)[:, flat] * valid
        corners.append((flat, valid, vals))
    weights = ((1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx)
    (f00, m00, v00), (f01, m01, v01), (f10, m10, v10), (f11, m11, v11) = corners
    out = weights[0] * v00 + weights[1] * v01 + weights[2] * v10 + weights[3] * v11

    def vjp(g):
        g3 = g.reshape(-1, H, W)
        gx = np.empty_like(xd)
        idx = np.concatenate([f.ravel() for f, _, _ in corners])
        for c in range(g3.shape[0]):
            contrib = np.concatenate([(g3[c] * w * m).ravel()
                                      for w, (_, m, _) in zip(weights, corners)])
            gx[c] = np.bincount(idx, weights=contrib, minlength=H * W).reshape(H, W)
        dsy = (1 - wx) * (v10 - v00) + wx * (v11 - v01)
        dsx = (1 - wy) * (v01 - v00) + wy * (v11 - v10)
        gflow = np.stack([-(g3 * dsy).sum(axis=0), -(g3 * dsx).sum(axis=0)])
        return (gx.reshape(x.shape), gflow)

    return _emit(out.reshape(*lead, H, W), (x, flow), vjp)


def mse(a, b):
    """Mean squared difference of two same-shaped tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ContractError(f"mse: shapes {a.shape} and {b.shape} differ")
    d = a.data - b.data
    n = d.size

    def vjp(g):
        ga = g * (2.0 / n) * d
        return (ga, -ga)

    return _emit(np.asarray(np.mean(d * d)), (a, b), vjp)
