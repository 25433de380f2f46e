"""Dense tensors with reverse-mode automatic differentiation.

Every op takes and returns :class:`Tensor` objects wrapping numpy arrays.
Each op records its parents and a closure mapping the output gradient to
one gradient per parent; :meth:`Tensor.backward` walks the graph in reverse
topological order and accumulates.

Float64 is the default for tensors built from Python data. Parameters for
training runs are typically created as float32 and every op preserves the
dtype of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

__all__ = [
    "ContractError",
    "ShapeError",
    "Tensor",
    "AdamState",
    "adam_step",
    "matmul",
    "softmax",
    "log_softmax",
    "logsumexp",
    "gelu",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "layer_norm",
    "embedding_lookup",
    "dropout",
    "concat",
    "where",
    "sigmoid_cross_entropy",
    "zero_grads",
    "numerical_gradient",
    "gradient_check",
]

_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ContractError(ValueError):
    """An operation was called outside its documented contract."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array that participates in the gradient tape.

    Leaf tensors with ``requires_grad=True`` own a zero-initialised ``grad``
    of the same shape. Intermediate tensors receive ``grad`` during
    :meth:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        dtype=None,
        name: str | None = None,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable | None = None,
    ):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self.grad = np.zeros_like(arr) if (self.requires_grad and not _parents) else None

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- graph plumbing ---------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: tuple["Tensor", ...], backward: Callable) -> "Tensor":
        requires = any(p.requires_grad for p in parents)
        if not requires:
            return Tensor(data)
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)

    def backward(self) -> None:
        """Populate ``grad`` on every differentiable tensor feeding this scalar."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return

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
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._parents:
                node.grad = g
                parent_grads = node._backward(g)
                for parent, pg in zip(node._parents, parent_grads):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
            else:
                node.grad += g

    # -- operators --------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _as_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape

        def backward(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        return Tensor._make(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = _as_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape

        def backward(g):
            return _unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)

        return Tensor._make(self.data - other.data, (self, other), backward)

    def __rsub__(self, other) -> "Tensor":
        return _as_tensor(other, self.dtype) - self

    def __mul__(self, other) -> "Tensor":
        other = _as_tensor(other, self.dtype)
        a, b = self.data, other.data

        def backward(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return Tensor._make(a * b, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = _as_tensor(other, self.dtype)
        a, b = self.data, other.data

        def backward(g):
            return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)

        return Tensor._make(a / b, (self, other), backward)

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent: float) -> "Tensor":
        a = self.data

        def backward(g):
            return (g * exponent * a ** (exponent - 1),)

        return Tensor._make(a**exponent, (self,), backward)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        shape = self.shape
        dtype = self.dtype

        def backward(g):
            full = np.zeros(shape, dtype=dtype)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._make(self.data[index], (self,), backward)

    # -- shape ops --------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),))

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return Tensor._make(self.data.swapaxes(a, b), (self,), lambda g: (g.swapaxes(a, b),))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    # -- reductions -------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


def _as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


# ---------------------------------------------------------------------------
# Elementwise and linear-algebra ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    x, y = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(y, -1, -2)
        gb = np.swapaxes(x, -1, -2) @ g
        return _unbroadcast(ga, x.shape), _unbroadcast(gb, y.shape)

    return Tensor._make(x @ y, (a, b), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    a = x.data
    return Tensor._make(np.log(a), (x,), lambda g: (g / a,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._make(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    out = _stable_sigmoid(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),))


def _stable_sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


if numba is not None:

    @numba.vectorize(["float32(float32)"], fastmath=True, cache=True)
    def _erf32(x):  # pragma: no cover - compiled
        # Abramowitz-Stegun 7.1.26, |error| < 1e-6 in float32 arithmetic
        one = numba.float32(1.0)
        ax = abs(x)
        t = one / (one + numba.float32(0.3275911) * ax)
        poly = ((((numba.float32(1.061405429) * t - numba.float32(1.453152027)) * t
                  + numba.float32(1.421413741)) * t - numba.float32(0.284496736)) * t
                + numba.float32(0.254829592)) * t
        y = one - poly * math.exp(-ax * ax)
        return y if x >= 0 else -y
else:  # pragma: no cover
    _erf32 = None


def _erf(a: np.ndarray) -> np.ndarray:
    if a.dtype == np.float32 and _erf32 is not None:
        return _erf32(a)
    return erf(a)


def gelu(x: Tensor) -> Tensor:
    """GELU, ``x * Phi(x)`` with the Gaussian CDF from erf.

    Float64 inputs use the exact erf; float32 inputs use a compiled rational
    approximation accurate to float32 resolution.
    """
    a = x.data
    cdf = 0.5 * (1.0 + _erf(a / a.dtype.type(_SQRT_2)))
    out = (a * cdf).astype(a.dtype, copy=False)

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a * a)
        return (g * (cdf + a * pdf),)

    return Tensor._make(out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data
    shifted = a - a.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data
    shifted = a - a.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), backward)


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data
    m = a.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(a - m).sum(axis=axis, keepdims=True)
    out_keep = np.log(s) + m
    weights = np.exp(a - out_keep)

    def backward(g):
        return (np.expand_dims(g, axis) * weights,)

    return Tensor._make(np.squeeze(out_keep, axis=axis), (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, epsilon: float = 1e-12) -> Tensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    a = x.data
    if gamma.shape != (a.shape[-1],) or beta.shape != (a.shape[-1],):
        raise ShapeError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must match last dim of {a.shape}"
        )
    mu = a.mean(axis=-1, keepdims=True)
    xc = a - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + epsilon)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = a.shape[-1]
    reduce_axes = tuple(range(a.ndim - 1))

    def backward(g):
        gxhat = g * gamma.data
        gx = inv / n * (
            n * gxhat
            - gxhat.sum(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
        )
        ggamma = (g * xhat).sum(axis=reduce_axes)
        gbeta = g.sum(axis=reduce_axes)
        return gx, ggamma, gbeta

    return Tensor._make(out, (x, gamma, beta), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; the backward pass scatter-adds into those rows."""
    idx = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        bad = idx[(idx < 0) | (idx >= vocab)].ravel()[0]
        raise IndexError(f"embedding id {int(bad)} outside table of {vocab} rows")
    shape, dtype = table.shape, table.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx.ravel(), g.reshape(-1, shape[1]))
        return (full,)

    return Tensor._make(table.data[idx], (table,), backward)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout. Identity when ``training`` is false or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * Tensor(keep)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def where(condition, a: Tensor, b: Tensor) -> Tensor:
    cond = np.asarray(condition, dtype=bool)
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)

    def backward(g):
        return (
            _unbroadcast(np.where(cond, g, 0.0).astype(g.dtype), a.shape),
            _unbroadcast(np.where(cond, 0.0, g).astype(g.dtype), b.shape),
        )

    return Tensor._make(np.where(cond, a.data, b.data), (a, b), backward)


def sigmoid_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy on logits (not reduced)."""
    x = logits.data
    y = np.asarray(targets, dtype=x.dtype)
    out = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    p = _stable_sigmoid(x)
    return Tensor._make(out, (logits,), lambda g: (g * (p - y),))


# ---------------------------------------------------------------------------
# Optimiser
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Moment accumulators for bias-corrected Adam."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: Iterable[Tensor], state: AdamState) -> AdamState:
    """Apply one Adam update in place and clear the gradients."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {p.name or p.shape} has no gradient")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    elif len(state.m) != len(params):
        raise ContractError("AdamState was built for a different parameter list")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
        p.data -= update.astype(p.dtype, copy=False)
        p.grad.fill(0)
    return state


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# Finite-difference checking
# ---------------------------------------------------------------------------


def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``param``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn().item()
        flat[i] = orig - step
        down = fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def gradient_check(
    fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5
) -> dict[str, float]:
    """Relative error between autodiff and central-difference gradients.

    The error for one tensor is ``|g_auto - g_num| / max(|g_auto|, |g_num|, 1e-8)``
    using Euclidean norms. Returns ``{name: error}``.
    """
    for p in params:
        p.zero_grad()
    fn().backward()
    errors = {}
    for i, p in enumerate(params):
        analytic = p.grad.copy()
        numeric = numerical_gradient(fn, p, step)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
        errors[p.name or f"param{i}"] = float(np.linalg.norm(analytic - numeric) / denom)
        p.zero_grad()
    return errors
