"""Dense tensors with reverse-mode automatic differentiation.

Values live in contiguous row-major numpy arrays, float32 by default with a
float64 path for gradient verification. Operations record backward rules on
the thread's active :class:`Tape`; ``backward(loss)`` replays the rules in
reverse recording order, accumulating (never overwriting) into ``grad``
buffers. A tape is consumed by its backward pass and cannot be reused.

Elementwise ops follow numpy broadcasting; gradients for broadcast operands
are summed back to the operand's shape. Matmul requires both operands to be
at least 2-D. Everything here is deterministic: same inputs, same outputs,
bit for bit.
"""

from __future__ import annotations

import threading

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class TapeError(RuntimeError):
    """Raised on tape misuse (nested tapes, reuse after backward, no tape)."""


_tls = threading.local()


def _active_tape():
    return getattr(_tls, "tape", None)


class Tape:
    """Records operations for one backward pass, confined to one thread."""

    def __init__(self):
        self._records = []  # (output Tensor, backward callable)
        self._consumed = False

    def __enter__(self):
        if _active_tape() is not None:
            raise TapeError("a tape is already active on this thread")
        _tls.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _tls.tape = None
        return False

    def _record(self, out, backward_fn):
        if self._consumed:
            raise TapeError("tape already consumed by a backward pass")
        self._records.append((out, backward_fn))


class Tensor:
    """A dense array plus optional gradient buffer.

    ``data`` is always contiguous row-major. ``grad`` starts as None and is
    allocated on first accumulation during a backward pass. Tensors taking
    part in a taped computation must not be mutated until backward has run;
    the optimizer mutates leaf ``data`` in place between tapes.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        # ascontiguousarray would promote 0-d scalars to 1-d; keep them 0-d.
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def sum(self):
        return tsum(self)

    def mean(self, axis=None):
        return mean(self, axis=axis)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _result(out_data, inputs, backward_fn):
    """Wrap an op result, recording its backward rule if a tape is active."""
    req = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=req, dtype=out_data.dtype)
    if req:
        tape = _active_tape()
        if tape is not None:
            tape._record(out, backward_fn(out))
    return out


def _accum(t, g, fresh=False):
    """Add g into t.grad.

    `fresh=True` promises g is a newly allocated, writable array no one else
    holds; the first accumulation can then take ownership instead of copying.
    Pass-through gradients (views of an upstream grad) must keep fresh=False
    or later accumulations would corrupt the upstream buffer.
    """
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.data.dtype)
    if t.grad is None:
        t.grad = g if fresh else g.copy()
    else:
        t.grad += g


def _accum_ub(t, g):
    """Accumulate with broadcast reduction; fresh iff a reduction happened."""
    ub = _unbroadcast(g, t.shape)
    _accum(t, ub, fresh=ub is not g)


def _unbroadcast(g, shape):
    """Sum gradient g back down to `shape` after numpy broadcasting.

    Returns g itself (same object) when no reduction is needed, so callers
    can use identity to tell a fresh reduction from a pass-through.
    """
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g if g.shape == shape else g.reshape(shape)


def _check_broadcast(a, b, opname):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} are not broadcastable") from None


def backward(loss):
    """Run the active tape backwards from a scalar loss, then consume it."""
    tape = _active_tape()
    if tape is None:
        raise TapeError("backward requires an active tape")
    if tape._consumed:
        raise TapeError("tape already consumed by a backward pass")
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        raise ShapeError("backward requires a scalar loss tensor")
    tape._consumed = True
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for out, backward_fn in reversed(tape._records):
        if out.grad is not None:
            backward_fn(out.grad)
    tape._records.clear()


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    _check_broadcast(a, b, "add")
    out_data = a.data + b.data

    def bwd(out):
        def fn(g):
            _accum_ub(a, g)
            _accum_ub(b, g)
        return fn

    return _result(out_data, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    _check_broadcast(a, b, "sub")
    out_data = a.data - b.data

    def bwd(out):
        def fn(g):
            _accum_ub(a, g)
            _accum(b, -_unbroadcast(g, b.shape), fresh=True)
        return fn

    return _result(out_data, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    _check_broadcast(a, b, "mul")
    out_data = a.data * b.data

    def bwd(out):
        def fn(g):
            _accum(a, _unbroadcast(g * b.data, a.shape), fresh=True)
            _accum(b, _unbroadcast(g * a.data, b.shape), fresh=True)
        return fn

    return _result(out_data, (a, b), bwd)


def scale(a, s):
    s = float(s)
    out_data = a.data * s

    def bwd(out):
        def fn(g):
            _accum(a, g * s, fresh=True)
        return fn

    return _result(out_data, (a,), bwd)


def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul requires 2-D or higher operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    a_data, b_data = a.data, b.data
    # (..., m, k) @ (k, n): one flat sgemm beats numpy's per-slice loop.
    if b_data.ndim == 2 and a_data.ndim > 2:
        m = a_data.shape[:-1]
        out_data = (a_data.reshape(-1, a_data.shape[-1]) @ b_data).reshape(*m, b_data.shape[-1])
    else:
        out_data = a_data @ b_data

    def bwd(out):
        def fn(g):
            if a.requires_grad:
                ga = g @ np.swapaxes(b_data, -1, -2)
                _accum(a, _unbroadcast(ga, a.shape), fresh=True)
            if b.requires_grad:
                if b_data.ndim == 2 and a_data.ndim > 2:
                    k = a_data.shape[-1]
                    gb = a_data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
                else:
                    gb = np.swapaxes(a_data, -1, -2) @ g
                _accum(b, _unbroadcast(gb, b.shape), fresh=True)
        return fn

    return _result(out_data, (a, b), bwd)


# ---------------------------------------------------------------------------
# shape manipulation


def transpose(a, axes):
    axes = tuple(axes)
    out_data = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def bwd(out):
        def fn(g):
            _accum(a, np.transpose(g, inv))
        return fn

    return _result(out_data, (a,), bwd)


def reshape(a, shape):
    shape = tuple(shape)
    out_data = a.data.reshape(shape)

    def bwd(out):
        def fn(g):
            _accum(a, g.reshape(a.shape))
        return fn

    return _result(out_data, (a,), bwd)


def broadcast_to(a, shape):
    shape = tuple(shape)
    out_data = np.broadcast_to(a.data, shape)

    def bwd(out):
        def fn(g):
            _accum_ub(a, g)
        return fn

    return _result(out_data, (a,), bwd)


def concat(tensors, axis=0):
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def bwd(out):
        def fn(g):
            offset = 0
            for t, size in zip(tensors, sizes):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + size)
                _accum(t, g[tuple(idx)])
                offset += size
        return fn

    return _result(out_data, tuple(tensors), bwd)


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}) out of range for axis {axis} of {a.shape}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    out_data = a.data[tuple(idx)]

    def bwd(out):
        def fn(g):
            full = np.zeros_like(a.data)
            full[tuple(idx)] = g
            _accum(a, full, fresh=True)
        return fn

    return _result(out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities and normalization


def sigmoid(a):
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(out):
        s = out.data

        def fn(g):
            _accum(a, g * s * (1.0 - s), fresh=True)
        return fn

    return _result(out_data, (a,), bwd)


def silu(a):
    s = 1.0 / (1.0 + np.exp(-a.data))
    out_data = a.data * s

    def bwd(out):
        def fn(g):
            _accum(a, g * s * (1.0 + a.data * (1.0 - s)), fresh=True)
        return fn

    return _result(out_data, (a,), bwd)


def softmax(a):
    """Softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bwd(out):
        y = out.data

        def fn(g):
            inner = (g * y).sum(axis=-1, keepdims=True)
            _accum(a, y * (g - inner), fresh=True)
        return fn

    return _result(out_data, (a,), bwd)


def layer_norm(a, eps=1e-5):
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out_data = xc * inv

    def bwd(out):
        y = out.data
        n = a.shape[-1]

        def fn(g):
            gm = g.mean(axis=-1, keepdims=True)
            gym = (g * y).mean(axis=-1, keepdims=True)
            _accum(a, inv * (g - gm - y * gym), fresh=True)
        return fn

    return _result(out_data, (a,), bwd)


def layer_norm_affine(a, gain, bias, eps=1e-5):
    """layer_norm(a) * gain + bias fused into one op (gain/bias over last axis)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = xc * inv
    out_data = normed * gain.data + bias.data

    def bwd(out):
        def fn(g):
            lead = tuple(range(g.ndim - 1))
            _accum(bias, g.sum(axis=lead), fresh=True)
            _accum(gain, (g * normed).sum(axis=lead), fresh=True)
            if a.requires_grad:
                gn = g * gain.data
                gm = gn.mean(axis=-1, keepdims=True)
                gym = (gn * normed).mean(axis=-1, keepdims=True)
                _accum(a, inv * (gn - gm - normed * gym), fresh=True)
        return fn

    return _result(out_data, (a, gain, bias), bwd)


def binary_entropy(p):
    """Elementwise Bernoulli entropy in nats, with inputs clamped away from {0,1}."""
    c = np.clip(p.data, 1e-12, 1.0 - 1e-12)
    out_data = -(c * np.log(c) + (1.0 - c) * np.log1p(-c))

    def bwd(out):
        def fn(g):
            _accum(p, g * (np.log1p(-c) - np.log(c)), fresh=True)
        return fn

    return _result(out_data, (p,), bwd)


# ---------------------------------------------------------------------------
# reductions


def tsum(a):
    """Sum of all elements, as a scalar tensor."""
    out_data = np.asarray(a.data.sum(), dtype=a.dtype)

    def bwd(out):
        def fn(g):
            _accum(a, np.broadcast_to(g, a.shape))
        return fn

    return _result(out_data, (a,), bwd)


def mean(a, axis=None):
    """Mean over all elements (axis=None, scalar result) or one axis."""
    if axis is None:
        out_data = np.asarray(a.data.mean(), dtype=a.dtype)
        count = a.data.size

        def bwd(out):
            def fn(g):
                _accum(a, np.broadcast_to(g / count, a.shape))
            return fn

        return _result(out_data, (a,), bwd)

    out_data = a.data.mean(axis=axis)
    count = a.shape[axis]

    def bwd(out):
        def fn(g):
            _accum(a, np.broadcast_to(np.expand_dims(g / count, axis), a.shape))
        return fn

    return _result(out_data, (a,), bwd)


def mse(pred, target):
    """Mean of squared differences over all elements, as a scalar tensor."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse requires equal shapes, got {pred.shape} and {target.shape}")
    diff = pred.data - target.data
    out_data = np.asarray((diff * diff).mean(), dtype=pred.dtype)
    count = diff.size

    def bwd(out):
        def fn(g):
            gd = (2.0 / count) * g * diff
            _accum(target, -gd, fresh=True)
            _accum(pred, gd, fresh=True)
        return fn

    return _result(out_data, (pred, target), bwd)


# ---------------------------------------------------------------------------
# quantization


def sign_ste(a):
    """Elementwise sign with sign(0) = +1; straight-through gradient."""
    out_data = np.where(a.data >= 0.0, 1.0, -1.0).astype(a.dtype)

    def bwd(out):
        def fn(g):
            _accum(a, g)
        return fn

    return _result(out_data, (a,), bwd)


def detach(a):
    """Copy of `a` cut out of the graph; no gradient flows through it."""
    return Tensor(a.data.copy(), requires_grad=False, dtype=a.dtype)
