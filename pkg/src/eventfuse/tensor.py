"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

Every primitive records its backward closure on the active Tape (a
thread-local context manager). The tape's record order is the execution
order, which is already a topological order because tensors are immutable
once built; the backward pass therefore just walks the records in reverse,
accumulating gradients in a dict keyed by tensor identity. Accumulation
order is fixed by the tape, so gradients are reproducible bit-for-bit.

Shapes are kept small and dense (0-d scalars, 1-d vectors, 2-d matrices);
there are no strided views. Elementwise ops broadcast like numpy and the
backward pass sums the broadcast axes away.
"""

import threading

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericsError(RuntimeError):
    """Raised when a computation produces or meets non-finite values."""


class Tensor:
    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


_LOCAL = threading.local()


def _active_tape():
    stack = getattr(_LOCAL, "stack", None)
    if not stack:
        return None
    return stack[-1]


class Tape:
    """Ordered record of primitive applications for one backward pass.

    A tape is confined to the thread that opened it; independent tapes on
    separate threads do not share state.
    """

    def __init__(self):
        self._records = []
        self._grads = None

    def __enter__(self):
        stack = getattr(_LOCAL, "stack", None)
        if stack is None:
            stack = []
            _LOCAL.stack = stack
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _LOCAL.stack.pop()
        return False

    def _record(self, out, backward_fn):
        self._records.append((out, backward_fn))

    def __len__(self):
        return len(self._records)

    def backward(self, root):
        """Seed d(root)/d(root) = 1 and accumulate grads in reverse order."""
        grads = {id(root): np.ones_like(root.data)}
        for out, fn in reversed(self._records):
            g = grads.get(id(out))
            if g is not None:
                fn(g, grads)
        self._grads = grads

    def grad(self, tensor):
        """Accumulated gradient of the last backward() root w.r.t. tensor."""
        if self._grads is None:
            raise RuntimeError("backward() has not been run on this tape")
        return self._grads.get(id(tensor))


def _acc(grads, tensor, g, own=False):
    key = id(tensor)
    cur = grads.get(key)
    if cur is None:
        # 0-d numpy math yields immutable np.float64 scalars; store a real
        # ndarray so later in-place accumulation works.
        if not isinstance(g, np.ndarray):
            grads[key] = np.asarray(g, dtype=np.float64)
        else:
            grads[key] = g if own else g.copy()
    else:
        cur += g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data, parents, make_backward):
    """Build the output tensor, recording backward only when it matters."""
    tape = _active_tape()
    out = Tensor(data)
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape._record(out, make_backward(out))
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(out):
        def fn(g, grads):
            if a.requires_grad:
                _acc(grads, a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _acc(grads, b, _unbroadcast(g, b.data.shape))

        return fn

    return _emit(a.data + b.data, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(out):
        def fn(g, grads):
            if a.requires_grad:
                _acc(grads, a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _acc(grads, b, _unbroadcast(-g, b.data.shape), own=True)

        return fn

    return _emit(a.data - b.data, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(out):
        def fn(g, grads):
            if a.requires_grad:
                _acc(grads, a, _unbroadcast(g * b.data, a.data.shape), own=True)
            if b.requires_grad:
                _acc(grads, b, _unbroadcast(g * a.data, b.data.shape), own=True)

        return fn

    return _emit(a.data * b.data, (a, b), bwd)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(out):
        def fn(g, grads):
            if a.requires_grad:
                _acc(grads, a, _unbroadcast(g / b.data, a.data.shape), own=True)
            if b.requires_grad:
                gb = -g * a.data / (b.data * b.data)
                _acc(grads, b, _unbroadcast(gb, b.data.shape), own=True)

        return fn

    return _emit(a.data / b.data, (a, b), bwd)


def neg(a):
    def bwd(out):
        def fn(g, grads):
            _acc(grads, a, -g, own=True)

        return fn

    return _emit(-a.data, (a,), bwd)


def scale(a, c):
    """Multiply by a python float constant."""
    c = float(c)

    def bwd(out):
        def fn(g, grads):
            _acc(grads, a, g * c, own=True)

        return fn

    return _emit(a.data * c, (a,), bwd)


def sqrt(a):
    out_data = np.sqrt(a.data)

    def bwd(out):
        def fn(g, grads):
            _acc(grads, a, g * (0.5 / out.data), own=True)

        return fn

    return _emit(out_data, (a,), bwd)


def clip(a, lo, hi):
    if lo > hi:
        raise ValueError(f"clip requires lo <= hi, got lo={lo} hi={hi}")

    def bwd(out):
        mask = (a.data >= lo) & (a.data <= hi)

        def fn(g, grads):
            _acc(grads, a, g * mask, own=True)

        return fn

    return _emit(np.clip(a.data, lo, hi), (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra and layout


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def bwd(out):
        def fn(g, grads):
            if a.requires_grad:
                _acc(grads, a, g @ b.data.T, own=True)
            if b.requires_grad:
                _acc(grads, b, a.data.T @ g, own=True)

        return fn

    return _emit(a.data @ b.data, (a, b), bwd)


def affine(x, weight, bias):
    """x @ weight.T + bias with weight stored (out_dim, in_dim)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"affine shape mismatch: {x.shape} x {weight.shape}")

    def bwd(out):
        def fn(g, grads):
            if x.requires_grad:
                _acc(grads, x, g @ weight.data, own=True)
            if weight.requires_grad:
                _acc(grads, weight, g.T @ x.data, own=True)
            if bias.requires_grad:
                _acc(grads, bias, g.sum(axis=0), own=True)

        return fn

    return _emit(x.data @ weight.data.T + bias.data, (x, weight, bias), bwd)


def transpose(a):
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")

    def bwd(out):
        def fn(g, grads):
            _acc(grads, a, g.T.copy(), own=True)

        return fn

    return _emit(np.ascontiguousarray(a.data.T), (a,), bwd)


def reshape(a, shape):
    def bwd(out):
        def fn(g, grads):
            _acc(grads, a, g.reshape(a.data.shape), own=False)

        return fn

    return _emit(a.data.reshape(shape).copy(), (a,), bwd)


def slice_rows(a, start, stop):
    def bwd(out):
        def fn(g, grads):
            full = np.zeros_like(a.data)
            full[start:stop] = g
            _acc(grads, a, full, own=True)

        return fn

    return _emit(a.data[start:stop].copy(), (a,), bwd)


def slice_cols(a, start, stop):
    def bwd(out):
        def fn(g, grads):
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            _acc(grads, a, full, own=True)

        return fn

    return _emit(np.ascontiguousarray(a.data[:, start:stop]), (a,), bwd)


def concat_rows(parts):
    parts = list(parts)
    sizes = [p.data.shape[0] for p in parts]

    def bwd(out):
        def fn(g, grads):
            off = 0
            for p, n in zip(parts, sizes):
                if p.requires_grad:
                    _acc(grads, p, g[off : off + n])
                off += n

        return fn

    return _emit(np.concatenate([p.data for p in parts], axis=0), tuple(parts), bwd)


def concat_cols(parts):
    parts = list(parts)
    sizes = [p.data.shape[1] for p in parts]

    def bwd(out):
        def fn(g, grads):
            off = 0
            for p, n in zip(parts, sizes):
                if p.requires_grad:
                    _acc(grads, p, g[:, off : off + n].copy(), own=True)
                off += n

        return fn

    return _emit(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bwd)


def stack_rows(parts):
    """Stack k same-shape tensors along a new leading axis."""
    parts = list(parts)

    def bwd(out):
        def fn(g, grads):
            for i, p in enumerate(parts):
                if p.requires_grad:
                    _acc(grads, p, g[i])

        return fn

    return _emit(np.stack([p.data for p in parts], axis=0), tuple(parts), bwd)


def tile_rows(a, n):
    """Repeat a (1, d) row n times into an (n, d) matrix."""
    if a.ndim != 2 or a.shape[0] != 1:
        raise ShapeError(f"tile_rows expects a (1, d) row, got shape {a.shape}")

    def bwd(out):
        def fn(g, grads):
            _acc(grads, a, g.sum(axis=0, keepdims=True), own=True)

        return fn

    return _emit(np.repeat(a.data, n, axis=0), (a,), bwd)


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims=False):
    def bwd(out):
        def fn(g, grads):
            if axis is None:
                ga = np.broadcast_to(g, a.data.shape).copy()
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                ga = np.broadcast_to(gg, a.data.shape).copy()
            _acc(grads, a, ga, own=True)

        return fn

    return _emit(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else a.data.shape[axis]

    def bwd(out):
        def fn(g, grads):
            if axis is None:
                ga = np.broadcast_to(g / count, a.data.shape).copy()
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                ga = np.broadcast_to(gg / count, a.data.shape).copy()
            _acc(grads, a, ga, own=True)

        return fn

    return _emit(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(a):
    out_data = kernels.sigmoid_forward(a.data)

    def bwd(out):
        def fn(g, grads):
            _acc(grads, a, g * out.data * (1.0 - out.data), own=True)

        return fn

    return _emit(out_data, (a,), bwd)


def gelu(a):
    out_data = kernels.gelu_forward(a.data)

    def bwd(out):
        def fn(g, grads):
            _acc(grads, a, kernels.gelu_backward(a.data, g), own=True)

        return fn

    return _emit(out_data, (a,), bwd)


def softmax(a, axis=-1):
    if axis in (-1, a.ndim - 1) and a.ndim >= 1:
        p = kernels.softmax_rows(a.data) if a.ndim >= 2 else kernels.softmax_rows(
            a.data.reshape(1, -1)
        ).reshape(a.data.shape)

        def bwd(out):
            def fn(g, grads):
                if out.data.ndim >= 2:
                    ga = kernels.softmax_rows_backward(out.data, g)
                else:
                    ga = kernels.softmax_rows_backward(
                        out.data.reshape(1, -1), g.reshape(1, -1)
                    ).reshape(out.data.shape)
                _acc(grads, a, ga, own=True)

            return fn

        return _emit(p, (a,), bwd)

    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    p = e / e.sum(axis=axis, keepdims=True)

    def bwd(out):
        def fn(g, grads):
            inner = (g * out.data).sum(axis=axis, keepdims=True)
            _acc(grads, a, out.data * (g - inner), own=True)

        return fn

    return _emit(p, (a,), bwd)


def logsumexp(a, axis=-1, keepdims=False):
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out_data = m + np.log(s)
    if not keepdims:
        out_data = np.squeeze(out_data, axis=axis)

    def bwd(out):
        p = e / s

        def fn(g, grads):
            gg = g if keepdims else np.expand_dims(g, axis)
            _acc(grads, a, p * gg, own=True)

        return fn

    return _emit(out_data, (a,), bwd)


def layernorm(a, eps=1e-5):
    """Row-wise standardization over the last axis (no learned affine)."""
    if a.ndim != 2:
        raise ShapeError(f"layernorm expects a matrix, got shape {a.shape}")
    y, rstd = kernels.layernorm_rows(a.data, eps)

    def bwd(out):
        def fn(g, grads):
            _acc(grads, a, kernels.layernorm_rows_backward(out.data, rstd, g), own=True)

        return fn

    return _emit(y, (a,), bwd)


# ---------------------------------------------------------------------------
# losses


def mse(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data

    def bwd(out):
        def fn(g, grads):
            base = (2.0 / diff.size) * g
            if a.requires_grad:
                _acc(grads, a, base * diff, own=True)
            if b.requires_grad:
                _acc(grads, b, -base * diff, own=True)

        return fn

    return _emit(np.mean(diff * diff), (a, b), bwd)


def mae(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"mae shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data

    def bwd(out):
        def fn(g, grads):
            base = (np.sign(diff) / diff.size) * g
            if a.requires_grad:
                _acc(grads, a, base, own=True)
            if b.requires_grad:
                _acc(grads, b, -base, own=True)

        return fn

    return _emit(np.mean(np.abs(diff)), (a, b), bwd)


def assert_finite(t, what="value"):
    if not np.all(np.isfinite(t.data if isinstance(t, Tensor) else t)):
        raise NumericsError(f"non-finite {what} encountered")
    return t
