"""Reverse-mode automatic differentiation over dense float64 arrays.

A dynamic (define-by-run) graph: every operation on `Tensor` records a
backward closure, and `Tensor.backward()` on a scalar root walks the graph
in reverse topological order, accumulating gradients additively across
fan-out. All math is double precision.

Elementwise forward kernels dispatch through `backend.active`, which is
either the compiled core or the numpy fallback; reductions, matmul and
shape ops stay in numpy in both cases.

Conventions:
  * gradients accumulate into `Tensor.grad` (None until touched); the first
    contribution is copied so upstream buffers are never aliased,
  * `max`/`maximum` route the gradient to the first maximal operand on
    exact ties,
  * `clip` and the inverse-trig ops have zero gradient outside the closed
    domain, so clamped values never poison gradients with inf * 0,
  * any primitive whose forward value contains NaN raises NumericalError
    naming the primitive.
"""

import threading

import numpy as np

from . import backend
from .errors import NumericalError, ShapeError

_state = threading.local()


def grad_enabled():
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording on this thread."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.grad_enabled = self._prev
        return False


def _as_array(data):
    if type(data) is np.ndarray and data.dtype == np.float64:
        return data
    return np.asarray(data, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_op")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()
        self._op = "leaf"

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
        return float(np.asarray(self.data).item())

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, grad={self.requires_grad})"

    # -- graph traversal ----------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(
                f"backward requires a scalar root, got shape {self.data.shape}"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return scalar_add(self, float(other))
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return scalar_sub(self, float(other))
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        if isinstance(other, (int, float)):
            return scalar_rsub(self, float(other))
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scalar_div(self, float(other))
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        if isinstance(other, (int, float)):
            return scalar_rdiv(self, float(other))
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- method forms of the shape/reduction primitives ----------------------

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return tensor_max(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, op):
    data = _as_array(data)
    if backend.active.has_nan(data):
        raise NumericalError(f"{op} produced NaN in the forward pass")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    req = False
    if getattr(_state, "grad_enabled", True):
        for p in parents:
            if p.requires_grad:
                req = True
                break
    out.requires_grad = req
    out._backward = None
    out._parents = parents if req else ()
    out._op = op
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_forward(op, a, b, kernel_name, npf):
    if a.shape == b.shape:
        return getattr(backend.active, kernel_name)(a, b)
    try:
        return npf(a, b)
    except ValueError:
        raise ShapeError(
            f"{op}: incompatible operand shapes {a.shape} and {b.shape}"
        ) from None


# -- elementwise binary ops ---------------------------------------------------


def add(a, b):
    data = _broadcast_forward("add", a.data, b.data, "add", np.add)
    out = _node(data, (a, b), "add")
    if out.requires_grad:
        def bwd(g):
            _accum(a, _unbroadcast(g, a.data.shape))
            _accum(b, _unbroadcast(g, b.data.shape))
        out._backward = bwd
    return out


def sub(a, b):
    data = _broadcast_forward("sub", a.data, b.data, "sub", np.subtract)
    out = _node(data, (a, b), "sub")
    if out.requires_grad:
        def bwd(g):
            _accum(a, _unbroadcast(g, a.data.shape))
            _accum(b, _unbroadcast(-g, b.data.shape))
        out._backward = bwd
    return out


def mul(a, b):
    data = _broadcast_forward("mul", a.data, b.data, "mul", np.multiply)
    out = _node(data, (a, b), "mul")
    if out.requires_grad:
        def bwd(g):
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
            _accum(b, _unbroadcast(g * a.data, b.data.shape))
        out._backward = bwd
    return out


def div(a, b):
    data = _broadcast_forward("div", a.data, b.data, "div", np.divide)
    out = _node(data, (a, b), "div")
    if out.requires_grad:
        od = data
        def bwd(g):
            _accum(a, _unbroadcast(g / b.data, a.data.shape))
            _accum(b, _unbroadcast(-g * od / b.data, b.data.shape))
        out._backward = bwd
    return out


def maximum(a, b):
    data = _broadcast_forward("maximum", a.data, b.data, "maximum", np.maximum)
    out = _node(data, (a, b), "maximum")
    if out.requires_grad:
        # ties route to the first operand
        take_a = a.data >= b.data
        def bwd(g):
            _accum(a, _unbroadcast(g * take_a, a.data.shape))
            _accum(b, _unbroadcast(g * ~take_a, b.data.shape))
        out._backward = bwd
    return out


# -- scalar ops ---------------------------------------------------------------


def scalar_add(a, s):
    out = _node(backend.active.adds(a.data, s), (a,), "scalar_add")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g)
    return out


def scalar_sub(a, s):
    out = _node(backend.active.subs(a.data, s), (a,), "scalar_sub")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g)
    return out


def scalar_rsub(a, s):
    out = _node(backend.active.rsubs(a.data, s), (a,), "scalar_rsub")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, -g)
    return out


def scalar_mul(a, s):
    out = _node(backend.active.muls(a.data, s), (a,), "scalar_mul")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g * s)
    return out


def scalar_div(a, s):
    out = _node(backend.active.divs(a.data, s), (a,), "scalar_div")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g / s)
    return out


def scalar_rdiv(a, s):
    out = _node(backend.active.rdivs(a.data, s), (a,), "scalar_rdiv")
    if out.requires_grad:
        x = a.data
        out._backward = lambda g: _accum(a, -s * g / (x * x))
    return out


def scalar_maximum(a, s):
    out = _node(backend.active.maxs(a.data, s), (a,), "scalar_maximum")
    if out.requires_grad:
        take = a.data >= s
        out._backward = lambda g: _accum(a, g * take)
    return out


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient is zero strictly outside the interval."""
    lo_v = -np.inf if lo is None else float(lo)
    hi_v = np.inf if hi is None else float(hi)
    out = _node(backend.active.clip(a.data, lo_v, hi_v), (a,), "clip")
    if out.requires_grad:
        inside = (a.data >= lo_v) & (a.data <= hi_v)
        out._backward = lambda g: _accum(a, g * inside)
    return out


# -- elementwise unary ops ----------------------------------------------------


def neg(a):
    out = _node(backend.active.neg(a.data), (a,), "neg")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, -g)
    return out


def exp(a):
    out = _node(backend.active.exp(a.data), (a,), "exp")
    if out.requires_grad:
        od = out.data
        out._backward = lambda g: _accum(a, g * od)
    return out


def log(a):
    out = _node(backend.active.log(a.data), (a,), "log")
    if out.requires_grad:
        out._backward = lambda g: _accum(a, g / a.data)
    return out


def sqrt(a):
    out = _node(backend.active.sqrt(a.data), (a,), "sqrt")
    if out.requires_grad:
        od = out.data
        out._backward = lambda g: _accum(a, g / (2.0 * od))
    return out


def tanh(a):
    out = _node(backend.active.tanh(a.data), (a,), "tanh")
    if out.requires_grad:
        od = out.data
        out._backward = lambda g: _accum(a, g * (1.0 - od * od))
    return out


def sinh(a):
    out = _node(backend.active.sinh(a.data), (a,), "sinh")
    if out.requires_grad:
        x = a.data
        out._backward = lambda g: _accum(a, g * np.cosh(x))
    return out


def cosh(a):
    out = _node(backend.active.cosh(a.data), (a,), "cosh")
    if out.requires_grad:
        x = a.data
        out._backward = lambda g: _accum(a, g * np.sinh(x))
    return out


def _guarded_inv_sqrt_grad(mask, denom_sq):
    # 1/sqrt(denom_sq) where mask holds, 0 elsewhere; never evaluates the
    # sqrt on non-positive values, so no inf * 0 can reach the gradient.
    safe = np.where(mask, denom_sq, 1.0)
    return np.where(mask, 1.0 / np.sqrt(safe), 0.0)


def acos(a):
    out = _node(backend.active.acos(a.data), (a,), "acos")
    if out.requires_grad:
        x = a.data
        def bwd(g):
            d2 = 1.0 - x * x
            _accum(a, -g * _guarded_inv_sqrt_grad(d2 > 0.0, d2))
        out._backward = bwd
    return out


def asin(a):
    out = _node(backend.active.asin(a.data), (a,), "asin")
    if out.requires_grad:
        x = a.data
        def bwd(g):
            d2 = 1.0 - x * x
            _accum(a, g * _guarded_inv_sqrt_grad(d2 > 0.0, d2))
        out._backward = bwd
    return out


def acosh(a):
    out = _node(backend.active.acosh(a.data), (a,), "acosh")
    if out.requires_grad:
        x = a.data
        def bwd(g):
            d2 = x * x - 1.0
            _accum(a, g * _guarded_inv_sqrt_grad(d2 > 0.0, d2))
        out._backward = bwd
    return out


def absolute(a):
    out = _node(np.abs(a.data), (a,), "abs")
    if out.requires_grad:
        sgn = np.sign(a.data)
        out._backward = lambda g: _accum(a, g * sgn)
    return out


# -- shape / reduction ops ------------------------------------------------


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: incompatible operand shapes {a.data.shape} and {b.data.shape}"
        )
    out = _node(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def bwd(g):
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)
        out._backward = bwd
    return out


def transpose(a, axes=None):
    out = _node(np.transpose(a.data, axes), (a,), "transpose")
    if out.requires_grad:
        inv = None if axes is None else tuple(np.argsort(axes))
        out._backward = lambda g: _accum(a, np.transpose(g, inv))
    return out


def reshape(a, shape):
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(
            f"reshape: cannot reshape {a.data.shape} into {tuple(shape)}"
        ) from None
    out = _node(data, (a,), "reshape")
    if out.requires_grad:
        src = a.data.shape
        out._backward = lambda g: _accum(a, g.reshape(src))
    return out


def broadcast_to(a, shape):
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(
            f"broadcast: cannot broadcast {a.data.shape} to {tuple(shape)}"
        ) from None
    out = _node(np.ascontiguousarray(data), (a,), "broadcast")
    if out.requires_grad:
        src = a.data.shape
        out._backward = lambda g: _accum(a, _unbroadcast(g, src))
    return out


def _normalize_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _expand_reduced(g, in_shape, axes, keepdims):
    if axes is None:
        return np.broadcast_to(g, in_shape)
    if not keepdims:
        shape = list(in_shape)
        for ax in axes:
            shape[ax] = 1
        g = g.reshape(shape)
    return np.broadcast_to(g, in_shape)


def tensor_sum(a, axis=None, keepdims=False):
    axes = _normalize_axes(axis, a.data.ndim)
    out = _node(np.asarray(a.data.sum(axis=axes, keepdims=keepdims)), (a,), "sum")
    if out.requires_grad:
        src = a.data.shape
        out._backward = lambda g: _accum(a, _expand_reduced(g, src, axes, keepdims))
    return out


def tensor_mean(a, axis=None, keepdims=False):
    axes = _normalize_axes(axis, a.data.ndim)
    out = _node(np.asarray(a.data.mean(axis=axes, keepdims=keepdims)), (a,), "mean")
    if out.requires_grad:
        src = a.data.shape
        if axes is None:
            count = a.data.size
        else:
            count = 1
            for ax in axes:
                count *= src[ax]
        out._backward = lambda g: _accum(
            a, _expand_reduced(g, src, axes, keepdims) / count
        )
    return out


def tensor_max(a, axis=None, keepdims=False):
    out = _node(np.asarray(a.data.max(axis=axis, keepdims=keepdims)), (a,), "max")
    if out.requires_grad:
        x = a.data
        def bwd(g):
            buf = np.zeros_like(x)
            if axis is None:
                # first maximal entry wins ties
                buf[np.unravel_index(np.argmax(x), x.shape)] = float(g)
            else:
                idx = np.expand_dims(np.argmax(x, axis=axis), axis)
                gg = g if keepdims else np.expand_dims(g, axis)
                np.put_along_axis(buf, idx, gg, axis)
            _accum(a, buf)
        out._backward = bwd
    return out


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.data.shape for t in tensors]
        raise ShapeError(f"concat: incompatible operand shapes {shapes}") from None
    out = _node(data, tuple(tensors), "concat")
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        bounds = np.cumsum(sizes)[:-1]
        def bwd(g):
            for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
                _accum(t, piece)
        out._backward = bwd
    return out


def stack(tensors, axis=0):
    return concat([reshape(_wrap(t), _stacked_shape(t, axis)) for t in tensors], axis)


def _stacked_shape(t, axis):
    shape = list(_wrap(t).data.shape)
    shape.insert(axis % (len(shape) + 1), 1)
    return tuple(shape)


def getitem(a, idx):
    out = _node(np.asarray(a.data[idx]), (a,), "index")
    if out.requires_grad:
        src = a.data
        def bwd(g):
            buf = np.zeros_like(src)
            np.add.at(buf, idx, g)
            _accum(a, buf)
        out._backward = bwd
    return out


def where(cond, a, b):
    """Select by a boolean numpy mask; the mask itself is not differentiated."""
    cond = np.asarray(cond, dtype=bool)
    a, b = _wrap(a), _wrap(b)
    try:
        data = np.where(cond, a.data, b.data)
    except ValueError:
        raise ShapeError(
            f"where: incompatible operand shapes {cond.shape}, "
            f"{a.data.shape} and {b.data.shape}"
        ) from None
    out = _node(data, (a, b), "where")
    if out.requires_grad:
        def bwd(g):
            _accum(a, _unbroadcast(g * cond, a.data.shape))
            _accum(b, _unbroadcast(g * ~cond, b.data.shape))
        out._backward = bwd
    return out


# -- verification harness ---------------------------------------------------


def finite_difference_check(f, params, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    `f` is a zero-argument callable returning a scalar Tensor and reading the
    current values of `params` (leaf tensors perturbed in place). The error
    for one parameter component is
    |analytic - fd| / max(1, |fd|) with fd the central difference at step h.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    params = list(params)
    root = f()
    if not isinstance(root, Tensor) or root.data.size != 1:
        raise ShapeError("finite_difference_check needs a scalar-valued f")
    for p in params:
        p.grad = None
    root.backward()
    analytic = [
        np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params
    ]

    def probe(index, component):
        try:
            value = float(f().data)
        except NumericalError as exc:
            raise NumericalError(
                f"f produced NaN while perturbing parameter {index} "
                f"component {component}: {exc}"
            ) from exc
        if not np.isfinite(value):
            raise NumericalError(
                f"f is not finite while perturbing parameter {index} "
                f"component {component}"
            )
        return value

    worst = 0.0
    with no_grad():
        for i, p in enumerate(params):
            flat = p.data.reshape(-1)
            grads = analytic[i].reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                f_plus = probe(i, j)
                flat[j] = orig - h
                f_minus = probe(i, j)
                flat[j] = orig
                fd = (f_plus - f_minus) / (2.0 * h)
                err = abs(grads[j] - fd) / max(1.0, abs(fd))
                if err > worst:
                    worst = err
    return worst
