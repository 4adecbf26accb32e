"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Var` wraps an ndarray and records, while grad mode is enabled, the
operation that produced it together with one gradient closure per parent.
Calling ``backward()`` on a scalar root walks the tape once in reverse
topological order and accumulates ``.grad`` on every reachable leaf.

Leaves constructed explicitly with ``Var(array)`` require gradients;
constants fed through ``as_var`` (plain arrays and scalars) do not, and
subgraphs that depend only on constants are never taped or revisited.

The op set is deliberately small: exactly what the pose fitters and the
policy networks need (broadcasted arithmetic, batched matmul, reductions,
slicing, softmax, layer norm, SiLU, and the Rodrigues coefficient functions).
Every op has a hand-written exact adjoint; the unit tests check each one
against central finite differences.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .rotations import rotvec_coeffs, rotvec_coeffs_grad

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the context (pure inference passes)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Var:
    """A node in the computation graph: an array value plus tape bookkeeping."""

    __slots__ = ("value", "grad", "requires", "_parents", "_grad_fns")

    def __init__(self, value, requires: bool = True):
        self.value = np.asarray(value)
        self.grad = None
        self.requires = requires
        self._parents = ()
        self._grad_fns = ()

    @property
    def shape(self):
        return self.value.shape

    def backward(self):
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar root")
        order = _toposort(self)
        self.grad = np.ones_like(self.value)
        for node in order:
            g = node.grad
            if g is None:
                continue
            for parent, fn in zip(node._parents, node._grad_fns):
                if not parent.requires:
                    continue
                pg = fn(g)
                if parent.grad is None:
                    parent.grad = pg
                else:
                    parent.grad = parent.grad + pg
        return self

    # -- operator sugar -------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return take(self, index)


def _toposort(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
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
            if parent.requires and id(parent) not in seen:
                stack.append((parent, False))
    return list(reversed(order))


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x), requires=False)


def _make(value, parents: tuple, grad_fns: tuple) -> Var:
    if _grad_enabled and any(p.requires for p in parents):
        out = Var(value)
        out._parents = parents
        out._grad_fns = grad_fns
        return out
    return Var(value, requires=False)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to the parent's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- arithmetic ----------------------------------------------------------
# Python-number operands stay python scalars so they cannot upcast float32
# arrays (numpy's weak promotion only applies to true scalars).

def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def add(a, b) -> Var:
    if _is_number(b):
        a = as_var(a)
        return _make(a.value + b, (a,), (lambda g: g,))
    if _is_number(a):
        return add(b, a)
    a, b = as_var(a), as_var(b)
    return _make(a.value + b.value, (a, b),
                 (lambda g: _unbroadcast(g, a.value.shape),
                  lambda g: _unbroadcast(g, b.value.shape)))


def sub(a, b) -> Var:
    if _is_number(b):
        a = as_var(a)
        return _make(a.value - b, (a,), (lambda g: g,))
    if _is_number(a):
        b = as_var(b)
        return _make(a - b.value, (b,), (lambda g: -g,))
    a, b = as_var(a), as_var(b)
    return _make(a.value - b.value, (a, b),
                 (lambda g: _unbroadcast(g, a.value.shape),
                  lambda g: _unbroadcast(-g, b.value.shape)))


def mul(a, b) -> Var:
    if _is_number(b):
        a = as_var(a)
        return _make(a.value * b, (a,), (lambda g: g * b,))
    if _is_number(a):
        return mul(b, a)
    a, b = as_var(a), as_var(b)
    return _make(a.value * b.value, (a, b),
                 (lambda g: _unbroadcast(g * b.value, a.value.shape),
                  lambda g: _unbroadcast(g * a.value, b.value.shape)))


def div(a, b) -> Var:
    if _is_number(b):
        return mul(a, 1.0 / b)
    if _is_number(a):
        b = as_var(b)
        return _make(a / b.value, (b,),
                     (lambda g: -g * a / (b.value * b.value),))
    a, b = as_var(a), as_var(b)
    return _make(a.value / b.value, (a, b),
                 (lambda g: _unbroadcast(g / b.value, a.value.shape),
                  lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape)))


def power(a, exponent: float) -> Var:
    a = as_var(a)
    return _make(a.value ** exponent, (a,),
                 (lambda g: g * exponent * a.value ** (exponent - 1),))


def exp(a) -> Var:
    a = as_var(a)
    value = np.exp(a.value)
    return _make(value, (a,), (lambda g: g * value,))


def log(a) -> Var:
    a = as_var(a)
    return _make(np.log(a.value), (a,), (lambda g: g / a.value,))


def sqrt(a) -> Var:
    a = as_var(a)
    value = np.sqrt(a.value)
    return _make(value, (a,), (lambda g: g / (2.0 * value),))


def sin(a) -> Var:
    a = as_var(a)
    return _make(np.sin(a.value), (a,), (lambda g: g * np.cos(a.value),))


def cos(a) -> Var:
    a = as_var(a)
    return _make(np.cos(a.value), (a,), (lambda g: -g * np.sin(a.value),))


def tanh(a) -> Var:
    a = as_var(a)
    value = np.tanh(a.value)
    return _make(value, (a,), (lambda g: g * (1.0 - value * value),))


def silu(a) -> Var:
    """x * sigmoid(x)."""
    a = as_var(a)
    s = np.exp(-a.value)
    s += 1.0
    np.reciprocal(s, out=s)
    value = a.value * s

    def grad(g):
        # d/dx = s + x*s*(1-s) = s + value*(1-s)
        d = 1.0 - s
        d *= value
        d += s
        d *= g
        return d

    return _make(value, (a,), (grad,))


def maximum(a, b) -> Var:
    """Elementwise max; at ties the gradient is routed to the first operand."""
    a, b = as_var(a), as_var(b)
    take_a = a.value >= b.value
    value = np.where(take_a, a.value, b.value)
    return _make(value, (a, b),
                 (lambda g: _unbroadcast(np.where(take_a, g, 0.0), a.value.shape),
                  lambda g: _unbroadcast(np.where(take_a, 0.0, g), b.value.shape)))


def minimum(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    take_a = a.value <= b.value
    value = np.where(take_a, a.value, b.value)
    return _make(value, (a, b),
                 (lambda g: _unbroadcast(np.where(take_a, g, 0.0), a.value.shape),
                  lambda g: _unbroadcast(np.where(take_a, 0.0, g), b.value.shape)))


# -- linear algebra ------------------------------------------------------

def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    if bv.ndim == 2 and av.ndim > 2:
        # (..., k) @ (k, m): flatten the leading axes into one GEMM.
        lead = av.shape[:-1]
        a2 = av.reshape(-1, av.shape[-1])
        value = (a2 @ bv).reshape(lead + (bv.shape[1],))
        def grad_a(g):
            return (g.reshape(-1, bv.shape[1]) @ bv.T).reshape(av.shape)
        def grad_b(g):
            return a2.T @ g.reshape(-1, bv.shape[1])
        return _make(value, (a, b), (grad_a, grad_b))
    value = av @ bv
    def grad_a(g):
        return _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
    def grad_b(g):
        return _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
    return _make(value, (a, b), (grad_a, grad_b))


# -- shape manipulation --------------------------------------------------

def reshape(a, shape) -> Var:
    a = as_var(a)
    old = a.value.shape
    return _make(a.value.reshape(shape), (a,), (lambda g: g.reshape(old),))


def swapaxes(a, axis1: int, axis2: int) -> Var:
    a = as_var(a)
    return _make(np.swapaxes(a.value, axis1, axis2), (a,),
                 (lambda g: np.swapaxes(g, axis1, axis2),))


def concat(parts, axis: int = 0) -> Var:
    parts = [as_var(p) for p in parts]
    value = np.concatenate([p.value for p in parts], axis=axis)
    offsets = np.cumsum([0] + [p.value.shape[axis] for p in parts])

    def part_grad(i):
        def fn(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(index)]
        return fn

    return _make(value, tuple(parts), tuple(part_grad(i) for i in range(len(parts))))


def stack(parts, axis: int = 0) -> Var:
    parts = [as_var(p) for p in parts]
    value = np.stack([p.value for p in parts], axis=axis)

    def part_grad(i):
        return lambda g: np.take(g, i, axis=axis)

    return _make(value, tuple(parts), tuple(part_grad(i) for i in range(len(parts))))


def take(a, index) -> Var:
    """Basic (slice/int/tuple) indexing; advanced indexing is not supported."""
    a = as_var(a)
    shape = a.value.shape

    def grad(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[index] = g
        return out

    return _make(a.value[index], (a,), (grad,))


# -- reductions ----------------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    shape = a.value.shape

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape)

    return _make(a.value.sum(axis=axis, keepdims=keepdims), (a,), (grad,))


def mean(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    shape = a.value.shape
    if axis is None:
        count = a.value.size
    else:
        count = int(np.prod([shape[i] for i in np.atleast_1d(axis)]))

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g / count, shape)

    return _make(a.value.mean(axis=axis, keepdims=keepdims), (a,), (grad,))


# -- fused neural-net primitives ------------------------------------------

def softmax(a, axis: int = -1) -> Var:
    a = as_var(a)
    value = a.value - a.value.max(axis=axis, keepdims=True)
    np.exp(value, out=value)
    value /= value.sum(axis=axis, keepdims=True)

    def grad(g):
        out = g * value
        inner = out.sum(axis=axis, keepdims=True)
        inner *= value
        out -= inner
        return out

    return _make(value, (a,), (grad,))


def layer_norm(a, eps: float = 1e-5) -> Var:
    """Normalize over the last axis to zero mean / unit variance."""
    a = as_var(a)
    mu = a.value.mean(axis=-1, keepdims=True)
    centered = a.value - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv

    def grad(g):
        correction = y * (g * y).mean(axis=-1, keepdims=True)
        correction += g.mean(axis=-1, keepdims=True)
        out = g - correction
        out *= inv
        return out

    return _make(y, (a,), (grad,))


# -- rotation support ------------------------------------------------------

def rot_coeff_a(s) -> Var:
    """sin(t)/t as a function of s = t^2, differentiable through zero."""
    s = as_var(s)
    a_val, _ = rotvec_coeffs(s.value)

    def grad(g):
        da, _ = rotvec_coeffs_grad(s.value)
        return g * da

    return _make(a_val, (s,), (grad,))


def rot_coeff_b(s) -> Var:
    """(1-cos(t))/t^2 as a function of s = t^2, differentiable through zero."""
    s = as_var(s)
    _, b_val = rotvec_coeffs(s.value)

    def grad(g):
        _, db = rotvec_coeffs_grad(s.value)
        return g * db

    return _make(b_val, (s,), (grad,))


def cross(a, b) -> Var:
    """Cross product along the last axis (size 3), built from primitives."""
    a, b = as_var(a), as_var(b)
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def rotate_rotvec(w, v) -> Var:
    """Apply the rotation encoded by axis-angle ``w`` (..., 3) to vectors ``v``.

    Uses R v = v + a(s) (w x v) + b(s) (w x (w x v)) which is exact and smooth
    at w = 0, so gradients through the identity rotation are well defined.
    """
    w, v = as_var(w), as_var(v)
    s = sum_(w * w, axis=-1, keepdims=True)
    a = rot_coeff_a(s)
    b = rot_coeff_b(s)
    wv = cross(w, v)
    wwv = cross(w, wv)
    return v + a * wv + b * wwv


def rotvec_matrix(w) -> Var:
    """3x3 rotation matrices from axis-angle vectors (..., 3), differentiable."""
    w = as_var(w)
    s = sum_(w * w, axis=-1, keepdims=True)
    a = rot_coeff_a(s)[..., None]
    b = rot_coeff_b(s)[..., None]
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    zero = wx * 0.0
    k = stack([
        stack([zero, -wz, wy], axis=-1),
        stack([wz, zero, -wx], axis=-1),
        stack([-wy, wx, zero], axis=-1),
    ], axis=-2)
    k2 = k @ k
    eye = np.broadcast_to(np.eye(3), k.value.shape)
    return as_var(eye) + a * k + b * k2
