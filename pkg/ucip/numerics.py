"""
Differentiable tensor core
Provides the Tensor type, the op set the network is composed from,
reverse-mode backward and a finite-difference gradient oracle

Spatial tensors use NHWC layout: (batch, height, width, channels).
"""

import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from ucip.errors import NumericOverflowError, ShapeMismatchError, UcipError

logger = logging.getLogger(__name__)

GELU_COEFF = np.sqrt(2.0 / np.pi)
NORM_EPS = 1e-5
LEAKY_SLOPE = 0.2


class _Mode(threading.local):
    def __init__(self):
        self.grad_enabled = True
        self.dtype = np.float32
        self.trace = None


_mode = _Mode()


@contextmanager
def no_grad():
    """Run ops without recording a graph"""
    previous = _mode.grad_enabled
    _mode.grad_enabled = False
    try:
        yield
    finally:
        _mode.grad_enabled = previous


@contextmanager
def precision(dtype):
    """Select the storage dtype for tensors created from Python data"""
    previous = _mode.dtype
    _mode.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _mode.dtype = previous


def default_dtype():
    return _mode.dtype


@contextmanager
def trace_branches():
    """
    Collect the discrete branch pattern of every kinked op.
    Two evaluations with equal traces lie on the same smooth piece.
    """
    previous = _mode.trace
    trace = []
    _mode.trace = trace
    try:
        yield trace
    finally:
        _mode.trace = previous


def _record_branch(*arrays):
    if _mode.trace is not None:
        for arr in arrays:
            _mode.trace.append(np.array(arr, copy=True))


class Tensor:
    """Dense array with optional gradient tracking"""

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.ascontiguousarray(np.array(data, dtype=dtype or _mode.dtype))
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._grad_fn = None
        self._op = "leaf"

    @classmethod
    def _wrap(cls, array, op):
        out = cls.__new__(cls)
        out.data = array
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._grad_fn = None
        out._op = op
        return out

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

    @property
    def is_leaf(self):
        return self._grad_fn is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}, op={self._op})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def backward(self):
        """Populate .grad on every leaf that requires grad"""
        if self.data.size != 1:
            raise UcipError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise UcipError("backward called on a tensor that does not require grad")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._grad_fn is None:
                if node.grad is None:
                    node.grad = np.array(g, dtype=node.data.dtype)
                else:
                    node.grad = node.grad + g
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(array, op, parents, grad_fn):
    if not np.all(np.isfinite(array)):
        raise NumericOverflowError(op, int(np.size(array) - np.count_nonzero(np.isfinite(array))))
    out = Tensor._wrap(array, op)
    if _mode.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(op, a.shape, b.shape) from None


def _expect_spatial(op, x):
    if x.ndim != 4:
        raise ShapeMismatchError(op, "(N, H, W, C)", x.shape)


# Elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, "add", (a, b), grad_fn)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, "sub", (a, b), grad_fn)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, "mul", (a, b), grad_fn)


def scale(x, factor):
    x = as_tensor(x)
    factor = float(factor)

    def grad_fn(g):
        return (g * factor,)

    return _result(x.data * factor, "scale", (x,), grad_fn)


# Reductions

def sum_all(x):
    x = as_tensor(x)

    def grad_fn(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(x.data.sum()), "sum", (x,), grad_fn)


def spatial_mean(x):
    """Mean over H and W per sample and channel, keeping (N, 1, 1, C)"""
    x = as_tensor(x)
    _expect_spatial("spatial_mean", x)
    count = x.shape[1] * x.shape[2]

    def grad_fn(g):
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _result(x.data.mean(axis=(1, 2), keepdims=True), "spatial_mean", (x,), grad_fn)


def mean_abs_error(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and b.size != 1:
        raise ShapeMismatchError("mean_abs_error", a.shape, b.shape)
    diff = a.data - b.data
    sign = np.sign(diff)
    _record_branch(sign)
    n = diff.size

    def grad_fn(g):
        ga = g * sign / n
        return ga, _unbroadcast(-ga, b.shape)

    return _result(np.asarray(np.abs(diff).mean()), "mean_abs_error", (a, b), grad_fn)


# Channel-axis maps

def linear(x, weight, bias=None):
    """Affine map over the last axis: x (..., Cin) @ weight (Cin, Cout) + bias (Cout)"""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeMismatchError("linear", (x.shape[-1], "Cout"), weight.shape)
    out = x.data @ weight.data
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeMismatchError("linear", (weight.shape[1],), bias.shape, "bias")
        out = out + bias.data
        parents.append(bias)

    def grad_fn(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        grads = [g @ weight.data.T, x2.T @ g2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return _result(out, "linear", parents, grad_fn)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        rest_a = tensors[0].shape[:axis] + tensors[0].shape[axis + 1:]
        rest_b = t.shape[:axis] + t.shape[axis + 1:]
        if rest_a != rest_b:
            raise ShapeMismatchError("concat", tensors[0].shape, t.shape)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return np.split(g, bounds, axis=axis)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), "concat", tensors, grad_fn)


def reshape(x, shape):
    x = as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeMismatchError("reshape", x.shape, shape)

    def grad_fn(g):
        return (g.reshape(x.shape),)

    return _result(x.data.reshape(shape), "reshape", (x,), grad_fn)


def slice_axis(x, start, stop, axis):
    x = as_tensor(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _result(x.data[index].copy(), "slice_axis", (x,), grad_fn)


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, "softmax", (x,), grad_fn)


# Nonlinearities

def gelu(x):
    """GELU, tanh form"""
    x = as_tensor(x)
    v = x.data
    inner = GELU_COEFF * (v + 0.044715 * v ** 3)
    th = np.tanh(inner)

    def grad_fn(g):
        d_inner = GELU_COEFF * (1.0 + 3 * 0.044715 * v ** 2)
        return (g * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th ** 2) * d_inner),)

    return _result(0.5 * v * (1.0 + th), "gelu", (x,), grad_fn)


def leaky_relu(x, slope=LEAKY_SLOPE):
    x = as_tensor(x)
    positive = x.data > 0
    _record_branch(positive)
    factor = np.where(positive, 1.0, slope).astype(x.dtype)

    def grad_fn(g):
        return (g * factor,)

    return _result(x.data * factor, "leaky_relu", (x,), grad_fn)


def instance_norm(x, eps=NORM_EPS):
    """Zero mean and unit variance per sample and channel over H and W"""
    x = as_tensor(x)
    _expect_spatial("instance_norm", x)
    mu = x.data.mean(axis=(1, 2), keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=(1, 2), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def grad_fn(g):
        g_mean = g.mean(axis=(1, 2), keepdims=True)
        gx_mean = (g * xhat).mean(axis=(1, 2), keepdims=True)
        return (inv_std * (g - g_mean - xhat * gx_mean),)

    return _result(xhat, "instance_norm", (x,), grad_fn)


# Spatial ops

def conv3x3(x, weight, bias=None):
    """
    Full 3x3 convolution, stride 1, zero padding 1.
    weight: (3, 3, Cin, Cout), bias: (Cout,)
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _expect_spatial("conv3x3", x)
    if weight.shape[:2] != (3, 3) or weight.ndim != 4 or weight.shape[2] != x.shape[3]:
        raise ShapeMismatchError("conv3x3", (3, 3, x.shape[3], "Cout"), weight.shape)
    n, h, w, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((n, h, w, weight.shape[3]), dtype=np.result_type(x.data, weight.data))
    for dy in range(3):
        for dx in range(3):
            out += xp[:, dy:dy + h, dx:dx + w, :] @ weight.data[dy, dx]
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[3],):
            raise ShapeMismatchError("conv3x3", (weight.shape[3],), bias.shape, "bias")
        out += bias.data
        parents.append(bias)

    def grad_fn(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        for dy in range(3):
            for dx in range(3):
                gxp[:, dy:dy + h, dx:dx + w, :] += g @ weight.data[dy, dx].T
                gw[dy, dx] = np.tensordot(xp[:, dy:dy + h, dx:dx + w, :], g, axes=([0, 1, 2], [0, 1, 2]))
        grads = [gxp[:, 1:-1, 1:-1, :], gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1, 2)))
        return grads

    return _result(out, "conv3x3", parents, grad_fn)


def depthwise_conv3x3(x, weight, bias=None):
    """Per-channel 3x3 convolution. weight: (3, 3, C), bias: (C,)"""
    x, weight = as_tensor(x), as_tensor(weight)
    _expect_spatial("depthwise_conv3x3", x)
    if weight.shape != (3, 3, x.shape[3]):
        raise ShapeMismatchError("depthwise_conv3x3", (3, 3, x.shape[3]), weight.shape)
    n, h, w, c = x.shape
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros_like(x.data)
    for dy in range(3):
        for dx in range(3):
            out += xp[:, dy:dy + h, dx:dx + w, :] * weight.data[dy, dx]
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c,):
            raise ShapeMismatchError("depthwise_conv3x3", (c,), bias.shape, "bias")
        out += bias.data
        parents.append(bias)

    def grad_fn(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        for dy in range(3):
            for dx in range(3):
                gxp[:, dy:dy + h, dx:dx + w, :] += g * weight.data[dy, dx]
                gw[dy, dx] = (xp[:, dy:dy + h, dx:dx + w, :] * g).sum(axis=(0, 1, 2))
        grads = [gxp[:, 1:-1, 1:-1, :], gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1, 2)))
        return grads

    return _result(out, "depthwise_conv3x3", parents, grad_fn)


def upsample_nearest2x(x):
    x = as_tensor(x)
    _expect_spatial("upsample_nearest2x", x)
    n, h, w, c = x.shape

    def grad_fn(g):
        return (g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)),)

    return _result(x.data.repeat(2, axis=1).repeat(2, axis=2), "upsample_nearest2x", (x,), grad_fn)


def gather_along(x, offsets, axis):
    """
    Sample x along one spatial axis at fractional positions index + offset.

    Positions are clamped to [0, extent - 1] and read with linear
    interpolation. The offset derivative is right-sided at integral
    positions and zero where the clamp is active.
    """
    x, offsets = as_tensor(x), as_tensor(offsets)
    _expect_spatial("gather_along", x)
    if offsets.shape != x.shape:
        raise ShapeMismatchError("gather_along", x.shape, offsets.shape, "offsets")
    if axis not in (1, 2):
        raise UcipError(f"gather_along: axis must be 1 (vertical) or 2 (horizontal), got {axis}")
    extent = x.shape[axis]
    if extent == 1:
        def grad_fn_single(g):
            return g, np.zeros_like(offsets.data)

        return _result(x.data.copy(), "gather_along", (x, offsets), grad_fn_single)

    view = [1, 1, 1, 1]
    view[axis] = extent
    base = np.arange(extent, dtype=offsets.dtype).reshape(view)
    raw = base + offsets.data
    pos = np.clip(raw, 0, extent - 1)
    lower = np.minimum(np.floor(pos).astype(np.intp), extent - 2)
    frac = pos - lower.astype(pos.dtype)
    active = (raw >= 0) & (raw < extent - 1)
    _record_branch(lower, active)

    lo = np.take_along_axis(x.data, lower, axis=axis)
    hi = np.take_along_axis(x.data, lower + 1, axis=axis)
    out = (1 - frac) * lo + frac * hi

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        index = list(np.ix_(*[np.arange(s) for s in x.shape]))
        index[axis] = lower
        np.add.at(gx, tuple(index), g * (1 - frac))
        index[axis] = lower + 1
        np.add.at(gx, tuple(index), g * frac)
        goff = np.where(active, g * (hi - lo), 0).astype(offsets.dtype)
        return gx, goff

    return _result(out.astype(x.dtype, copy=False), "gather_along", (x, offsets), grad_fn)


# Finite-difference oracle

@dataclass
class GradcheckReport:
    max_rel_error: float
    checked: int
    skipped: int
    worst: str = ""

    def passed(self, tolerance=1e-4):
        return self.checked > 0 and self.max_rel_error <= tolerance


def gradcheck(fn, tensors, eps=1e-4, max_entries=None, seed=0, floor=1e-3):
    """
    Compare analytic gradients of the scalar fn() against central differences.

    Entries whose perturbation moves any kinked op onto another branch
    are skipped and counted.
    """
    for t in tensors:
        t.grad = None
    with trace_branches() as base_trace:
        loss = fn()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    rng = np.random.default_rng(seed)
    worst, checked, skipped, worst_at = 0.0, 0, 0, ""
    for ti, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for k in entries:
            original = flat[k]
            with no_grad():
                flat[k] = original + eps
                with trace_branches() as plus_trace:
                    f_plus = fn().item()
                flat[k] = original - eps
                with trace_branches() as minus_trace:
                    f_minus = fn().item()
                flat[k] = original
            if not (_same_trace(base_trace, plus_trace) and _same_trace(base_trace, minus_trace)):
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2 * eps)
            exact = float(analytic[ti].reshape(-1)[k])
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            checked += 1
            if error > worst:
                worst, worst_at = error, f"tensor {ti} entry {k}: analytic {exact} numeric {numeric}"
    for t in tensors:
        t.grad = None
    return GradcheckReport(worst, checked, skipped, worst_at)


def _same_trace(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))
