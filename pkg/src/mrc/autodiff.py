"""Reverse-mode automatic differentiation over dense numpy arrays.

Eager tape: every operation computes its forward value immediately and
records a closure that scatters the upstream gradient to its parents.
`backward()` on a scalar walks the tape in reverse topological order.
The op set is exactly what variational training needs (elementwise
arithmetic, matmul, reductions, segment sums, gathers, tanh/exp/log/sqrt,
relu, maximum/where selection, and a Lambert W primitive).
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .lambertw import lambert_w, lambert_w_derivative

# Every op validates finiteness of its output when enabled; training
# loops additionally abort on a non-finite loss.
CHECK_FINITE = True


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), backward: Callable | None = None):
        self.data = _as_array(data)
        if CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise NonFiniteError("non-finite tensor value")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph walk ----------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_ensure(other), -1.0))

    def __rsub__(self, other):
        return add(_ensure(other), mul(self, -1.0))

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_ensure(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, item):
        return narrow(self, item)


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _op(data, parents: tuple, grads: Iterable[Callable[[np.ndarray], np.ndarray] | None]) -> Tensor:
    """Build a node whose backward applies each grad fn to its parent."""
    grads = tuple(grads)

    def backward(g: np.ndarray):
        for parent, gfn in zip(parents, grads):
            if parent.requires_grad and gfn is not None:
                parent.accumulate(gfn(g))

    return Tensor(data, parents=parents, backward=backward)


# -- arithmetic ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    return _op(
        a.data + b.data,
        (a, b),
        (lambda g: _unbroadcast(g, a.data.shape), lambda g: _unbroadcast(g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    return _op(
        a.data * b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.data, a.data.shape),
            lambda g: _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    return _op(
        a.data / b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g / b.data, a.data.shape),
            lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    return _op(
        a.data @ b.data,
        (a, b),
        (lambda g: g @ b.data.T, lambda g: a.data.T @ g),
    )


# -- elementwise nonlinearities ------------------------------------------


def exp(a) -> Tensor:
    a = _ensure(a)
    out = np.exp(a.data)
    return _op(out, (a,), (lambda g: g * out,))


def log(a) -> Tensor:
    a = _ensure(a)
    return _op(np.log(a.data), (a,), (lambda g: g / a.data,))


def sqrt(a) -> Tensor:
    a = _ensure(a)
    out = np.sqrt(a.data)
    return _op(out, (a,), (lambda g: g * 0.5 / out,))


def tanh(a) -> Tensor:
    a = _ensure(a)
    out = np.tanh(a.data)
    return _op(out, (a,), (lambda g: g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = _ensure(a)
    return _op(np.maximum(a.data, 0.0), (a,), (lambda g: g * (a.data > 0.0),))


def lambert_w_op(a) -> Tensor:
    """Principal-branch W with dW/dx = W / (x (1 + W))."""
    a = _ensure(a)
    out = np.asarray(lambert_w(a.data))
    deriv = np.asarray(lambert_w_derivative(a.data, out))
    return _op(out, (a,), (lambda g: g * deriv,))


# -- selection -------------------------------------------------------------


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to the first argument."""
    a, b = _ensure(a), _ensure(b)
    pick_a = a.data >= b.data
    return _op(
        np.maximum(a.data, b.data),
        (a, b),
        (
            lambda g: _unbroadcast(g * pick_a, a.data.shape),
            lambda g: _unbroadcast(g * ~pick_a, b.data.shape),
        ),
    )


def where(cond: np.ndarray, a, b) -> Tensor:
    """Value-dependent branch select; cond is a constant boolean mask."""
    a, b = _ensure(a), _ensure(b)
    cond = np.asarray(cond, dtype=bool)
    return _op(
        np.where(cond, a.data, b.data),
        (a, b),
        (
            lambda g: _unbroadcast(g * cond, a.data.shape),
            lambda g: _unbroadcast(g * ~cond, b.data.shape),
        ),
    )


# -- reductions and indexing ------------------------------------------------


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _ensure(a)
    shape = a.data.shape

    def back(g: np.ndarray) -> np.ndarray:
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, shape).copy()

    return _op(a.data.sum(axis=axis, keepdims=keepdims), (a,), (back,))


def tmean(a) -> Tensor:
    a = _ensure(a)
    n = a.data.size
    return mul(tsum(a), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _ensure(a)
    old = a.data.shape
    return _op(a.data.reshape(shape), (a,), (lambda g: g.reshape(old),))


def narrow(a, item) -> Tensor:
    """Basic slicing; gradient scatters back into a zero array."""
    a = _ensure(a)

    def back(g: np.ndarray) -> np.ndarray:
        out = np.zeros_like(a.data)
        out[item] = g
        return out

    return _op(a.data[item], (a,), (back,))


def take(a, indices: np.ndarray) -> Tensor:
    """Gather along the first axis; duplicate indices accumulate."""
    a = _ensure(a)
    indices = np.asarray(indices)

    def back(g: np.ndarray) -> np.ndarray:
        out = np.zeros_like(a.data)
        np.add.at(out, indices, g)
        return out

    return _op(a.data[indices], (a,), (back,))


def pick(a, col_indices: np.ndarray) -> Tensor:
    """out[i] = a[i, col_indices[i]] for a 2-d input."""
    a = _ensure(a)
    col_indices = np.asarray(col_indices)
    rows = np.arange(a.data.shape[0])

    def back(g: np.ndarray) -> np.ndarray:
        out = np.zeros_like(a.data)
        out[rows, col_indices] = g
        return out

    return _op(a.data[rows, col_indices], (a,), (back,))


def segment_sum(a, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """out[s] = sum of a[i] over i with segment_ids[i] == s (1-d input)."""
    a = _ensure(a)
    segment_ids = np.asarray(segment_ids)
    data = np.bincount(segment_ids, weights=a.data, minlength=num_segments)
    return _op(data, (a,), (lambda g: g[segment_ids],))


# -- gradient checking -------------------------------------------------------


def finite_diff_check(objective: Callable[[dict[str, Tensor]], Tensor], params: dict[str, np.ndarray], h: float = 1e-5) -> float:
    """Max relative error between backward and central-difference gradients.

    `objective` maps named leaf Tensors to a scalar Tensor.  The relative
    error denominator is max(|analytic gradient|, 1e-8) per coordinate.
    """
    leaves = {k: Tensor(v.copy(), requires_grad=True) for k, v in params.items()}
    out = objective(leaves)
    out.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}

    def eval_at(values: dict[str, np.ndarray]) -> float:
        return float(objective({k: Tensor(v) for k, v in values.items()}).data)

    worst = 0.0
    for name, base in params.items():
        flat = base.astype(np.float64).ravel()
        for i in range(flat.size):
            bumped = {k: v.copy() for k, v in params.items()}
            b = bumped[name].ravel()
            b[i] = flat[i] + h
            f_plus = eval_at(bumped)
            b[i] = flat[i] - h
            f_minus = eval_at(bumped)
            fd = (f_plus - f_minus) / (2.0 * h)
            g = analytic[name].ravel()[i]
            worst = max(worst, abs(g - fd) / max(abs(g), 1e-8))
    return worst
