"""Dense reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps a float64 array and records the operation that made
it.  Calling :meth:`Tensor.backward` on a scalar walks the graph in reverse
topological order and stores ``d loss / d leaf`` in ``leaf.grad`` for every
leaf created with ``requires_grad=True``.  A graph can be backpropagated once;
building a fresh forward pass is the reset.

Besides elementwise and reduction primitives the module provides a
differentiable singular value decomposition, from which the nuclear norm and
the normalized singular-value sum are built.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class GraphError(RuntimeError):
    """Raised for invalid backward calls."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or infinity appears in values or gradients."""


class SvdError(np.linalg.LinAlgError):
    """Raised when the singular value decomposition fails."""


class DegenerateSpectrumWarning(RuntimeWarning):
    """Singular values too close for the U V^T gradient to be unique."""


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"non-finite values produced by {what}")


class Tensor:
    """Array node in a reverse-mode autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "_consumed")
    __array_ufunc__ = None  # ndarray <op> Tensor defers to the Tensor operators

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self.op = op
        self._consumed = False
        if op == "leaf":
            _check_finite(self.data, "leaf construction")

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- operators --------------------------------------------------------
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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def square(self):
        return square(self)

    def sqrt(self):
        return sqrt(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # -- reverse pass -----------------------------------------------------
    def backward(self):
        """Populate ``.grad`` on every leaf that requires a gradient."""
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise GraphError("backward already ran on this graph; rebuild the forward pass")
        if not self.requires_grad:
            raise GraphError("loss does not depend on any tensor requiring a gradient")
        _check_finite(self.data, "the loss")
        order = _toposort(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                _check_finite(pg, f"the backward pass of {node.op!r}")
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        self._consumed = True


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    return Tensor(data, parents=tuple(parents), backward=backward, op=op)


# -- elementwise arithmetic ---------------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    _check_finite(out, "div")
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def square(a):
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    _check_finite(out, "sqrt")
    return _make(out, (a,), lambda g: (g / (2.0 * out),), "sqrt")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    _check_finite(out, "exp")
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    _check_finite(out, "log")
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# -- reductions and shape ops -------------------------------------------------
def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a):
    """Swap the last two axes."""
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def getitem(a, index):
    """Basic or integer-array indexing; repeated indices accumulate gradient."""
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), backward, "getitem")


def take_rows(a, rows):
    """Rows ``a[rows]`` with gradients scattered back (used to repeat samples)."""
    rows = np.asarray(rows, dtype=np.intp)
    a = as_tensor(a)
    n = a.shape[0]

    def backward(g):
        flat = g.reshape(g.shape[0], -1)
        out = np.zeros((n, flat.shape[1]))
        # bincount keeps the accumulation order fixed
        for j in range(flat.shape[1]):
            out[:, j] = np.bincount(rows, weights=flat[:, j], minlength=n)
        return (out.reshape(a.shape),)

    return _make(a.data[rows], (a,), backward, "take_rows")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


# -- linear algebra ------------------------------------------------------------
def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``K = U diag(S) V^T`` with descending ``S``."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


def svd(K) -> SvdResult:
    """Thin SVD with a deterministic sign convention.

    Each left singular vector is flipped so that its largest-magnitude entry
    is positive; the matching right vector is flipped with it.
    """
    K = np.asarray(K.data if isinstance(K, Tensor) else K, dtype=np.float64)
    if K.ndim != 2:
        raise ValueError("svd expects a matrix")
    if not np.all(np.isfinite(K)):
        raise SvdError("svd input contains non-finite entries")
    try:
        U, S, Vt = np.linalg.svd(K, full_matrices=False)
    except np.linalg.LinAlgError:
        # the divide-and-conquer driver occasionally fails; QR iteration is slower but robust
        import scipy.linalg

        try:
            U, S, Vt = scipy.linalg.svd(K, full_matrices=False, lapack_driver="gesvd")
        except np.linalg.LinAlgError as exc:
            raise SvdError(f"svd did not converge: {exc}") from exc
    V = Vt.T.copy()
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivot, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return SvdResult(U * signs, S, V * signs)


def _warn_if_degenerate(S, rel_gap=1e-8):
    if S.size > 1 and S[0] > 0:
        gaps = -np.diff(S)
        if np.any(gaps < rel_gap * S[0]):
            warnings.warn(
                "near-degenerate singular values; using the U V^T subgradient",
                DegenerateSpectrumWarning,
                stacklevel=3,
            )


def singular_values(K):
    """Differentiable singular values; ``d sigma_k / dK = u_k v_k^T``."""
    K = as_tensor(K)
    res = svd(K)
    if K.requires_grad:
        _warn_if_degenerate(res.S)

    def backward(g):
        return ((res.U * g) @ res.V.T,)

    return _make(res.S, (K,), backward, "singular_values")


def nuclear_norm(K):
    """Sum of singular values, with gradient ``U V^T``."""
    return tsum(singular_values(K))


def normalized_singular_sum(K):
    """``sum_k sigma_k / sigma_1``; lies in ``[1, min(N, K)]``."""
    s = singular_values(K)
    if s.data[0] <= 0:
        raise ValueError("normalized singular sum is undefined for the zero matrix")
    return div(tsum(s), s[0])


# -- gradient checking -----------------------------------------------------------
@dataclass(frozen=True)
class FiniteDiffReport:
    max_rel_error: float
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def ok(self):
        return self.max_rel_error < 1e-4


def finite_diff_check(f, x, h=1e-5) -> FiniteDiffReport:
    """Compare the autodiff gradient of ``f`` at ``x`` with central differences.

    ``f`` maps a Tensor to a scalar Tensor.  The discrepancy is the largest
    absolute difference divided by the largest gradient magnitude.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    f(leaf).backward()
    analytic = np.zeros_like(x0) if leaf.grad is None else leaf.grad
    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        fp = f(Tensor(x0.copy())).item()
        flat[i] = saved - h
        fm = f(Tensor(x0.copy())).item()
        flat[i] = saved
        nflat[i] = (fp - fm) / (2.0 * h)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-300)
    err = float(np.max(np.abs(analytic - numeric)) / scale)
    return FiniteDiffReport(err, analytic, numeric)
