"""Small reverse-mode autodiff over numpy arrays.

Every learned component in the package (policy, dynamics models, captioner)
is built from the handful of operations here. Arrays are float32 by default;
``precision(np.float64)`` switches newly created tensors to 64-bit, which is
what the gradient checker uses.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_DTYPE = np.float32
_GRAD_ENABLED = True


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(dtype):
    global _DTYPE
    prev, _DTYPE = _DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = prev


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op=""):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def values(self) -> np.ndarray:
        """Flat view of the stored values."""
        return self.data.reshape(-1)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self.op or 'leaf'})"

    # -- autodiff ------------------------------------------------------
    def backward(self, grad=None):
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _toposort(self)
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None

    # -- operators -----------------------------------------------------
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
        if isinstance(other, Tensor):
            raise ContractError("division by a tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def _not_scalar(t):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    arr = np.array(data, dtype=dtype or _DTYPE)
    _check_finite(arr, "tensor")
    return Tensor(arr, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DTYPE))


def _check_finite(arr: np.ndarray, op: str):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {op}")


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    t.grad = g if t.grad is None else t.grad + g


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), bw, "mul")


def square(x: Tensor) -> Tensor:
    def bw(g):
        _accum(x, 2.0 * x.data * g)

    return _result(x.data * x.data, (x,), bw, "square")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)

    def bw(g):
        _accum(x, g * y)

    return _result(y, (x,), bw, "exp")


def log(x: Tensor) -> Tensor:
    if (x.data <= 0).any():
        raise NumericError("log of non-positive value")

    def bw(g):
        _accum(x, g / x.data)

    return _result(np.log(x.data), (x,), bw, "log")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def bw(g):
        _accum(x, g * (1.0 - y * y))

    return _result(y, (x,), bw, "tanh")


_GELU_K = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU; smooth everywhere, so finite differences behave."""
    d = x.data
    inner = _GELU_K * (d + 0.044715 * d ** 3)
    t = np.tanh(inner)
    y = 0.5 * d * (1.0 + t)

    def bw(g):
        dinner = _GELU_K * (1.0 + 3 * 0.044715 * d * d)
        _accum(x, g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * dinner))

    return _result(y, (x,), bw, "gelu")


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data

    def bw(g):
        _accum(a, _unbroadcast(np.where(pick_a, g, 0.0), a.shape))
        _accum(b, _unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return _result(np.minimum(a.data, b.data), (a, b), bw, "minimum")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)

    def bw(g):
        _accum(x, np.where(inside, g, 0.0))

    return _result(np.clip(x.data, lo, hi), (x,), bw, "clip")


def dropout(x: Tensor, keep: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    if not training or keep >= 1.0:
        return x
    mask = (rng.random(x.shape) < keep).astype(x.data.dtype) / keep
    return mul(x, Tensor(mask))


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape).copy())

    return _result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    def bw(g):
        _accum(x, g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), bw, "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)

    def bw(g):
        _accum(x, np.transpose(g, inv))

    return _result(np.transpose(x.data, axes), (x,), bw, "transpose")


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def getitem(x: Tensor, idx) -> Tensor:
    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        _accum(x, full)

    return _result(np.asarray(x.data[idx]), (x,), bw, "getitem")


def take_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: ``table[ids]`` with scatter-add backward."""
    ids = np.asarray(ids)

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accum(table, full)

    return _result(table.data[ids], (table,), bw, "take_rows")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        for p, piece in zip(parts, np.split(g, bounds, axis=axis)):
            _accum(p, piece)

    return _result(np.concatenate([p.data for p in parts], axis=axis), parts, bw, "concat")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(a.data @ b.data, (a, b), bw, "matmul")


def affine(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """``x @ weights + bias``; a 1-D input is treated as a single row."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if weights.ndim != 2 or x.shape[-1] != weights.shape[0] or bias.shape[-1:] != weights.shape[1:]:
        raise DimensionError(
            f"affine shape mismatch: input {x.shape}, weights {weights.shape}, bias {bias.shape}"
        )
    if x.ndim == 1:
        return reshape(add(matmul(reshape(x, (1, -1)), weights), bias), (weights.shape[1],))
    return add(matmul(x, weights), bias)


# ---------------------------------------------------------------------------
# normalisation and probability


def softmax(logits: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Max-stabilised softmax. ``mask`` (broadcastable bool, True = keep) zeroes entries exactly."""
    x = as_tensor(logits)
    _check_finite(x.data, "softmax input")
    if axis >= x.ndim or axis < -x.ndim:
        raise ContractError(f"softmax axis {axis} invalid for shape {x.shape}")
    z = x.data if mask is None else np.where(mask, x.data, -np.inf)
    m = z.max(axis=axis, keepdims=True)
    e = np.exp(z - m)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(x, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _result(s, (x,), bw, "softmax")


def log_softmax(logits: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(logits)
    _check_finite(x.data, "log_softmax input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    ls = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(g):
        _accum(x, g - np.exp(ls) * g.sum(axis=axis, keepdims=True))

    return _result(ls, (x,), bw, "log_softmax")


def softmax_cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Fused softmax + cross-entropy over the last axis, averaged over weighted rows.

    ``targets`` holds integer class ids with the shape of ``logits`` minus the
    last axis. ``weights`` (same shape as targets) masks padding positions.
    """
    x = as_tensor(logits)
    _check_finite(x.data, "softmax_cross_entropy input")
    targets = np.asarray(targets)
    if targets.shape != x.shape[:-1]:
        raise DimensionError(f"targets shape {targets.shape} does not match logits {x.shape}")
    k = x.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise ContractError("target class id out of range")
    w = np.ones(targets.shape, dtype=x.data.dtype) if weights is None else np.asarray(weights, dtype=x.data.dtype)
    total = float(w.sum())
    if total <= 0:
        raise ContractError("softmax_cross_entropy needs at least one weighted row")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    ls = z - lse
    picked = np.take_along_axis(ls, targets[..., None], axis=-1)[..., 0]
    loss = np.asarray(-(picked * w).sum() / total, dtype=x.data.dtype)

    def bw(g):
        grad = np.exp(ls)
        np.put_along_axis(grad, targets[..., None], np.take_along_axis(grad, targets[..., None], -1) - 1.0, -1)
        _accum(x, grad * (w / total)[..., None] * g)

    return _result(loss, (x,), bw, "softmax_cross_entropy")


def cross_entropy(predicted_dist, target_one_hot) -> float:
    """-sum(y log p) for a probability vector and a one-hot target (no autodiff).

    Training code goes through :func:`softmax_cross_entropy`, which is the
    same quantity expressed on logits.
    """
    p = np.asarray(predicted_dist.data if isinstance(predicted_dist, Tensor) else predicted_dist, dtype=np.float64)
    y = np.asarray(target_one_hot.data if isinstance(target_one_hot, Tensor) else target_one_hot, dtype=np.float64)
    if p.shape != y.shape:
        raise DimensionError(f"cross_entropy shape mismatch: {p.shape} vs {y.shape}")
    if not (np.isin(y, (0.0, 1.0)).all() and np.isclose(y.sum(axis=-1), 1.0).all()):
        raise ContractError("cross_entropy target must be one-hot")
    if (p < 0).any() or not np.allclose(p.sum(axis=-1), 1.0, atol=1e-5):
        raise ContractError("cross_entropy prediction must be a probability vector")
    picked = (p * y).sum(axis=-1)
    return float(np.mean(-np.log(np.maximum(picked, 1e-300))))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data

    def bw(g):
        if x.requires_grad:
            gx = g * gamma.data
            gx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            _accum(x, gx)
        _accum(gamma, _unbroadcast(g * xhat, gamma.shape))
        _accum(beta, _unbroadcast(g, beta.shape))

    return _result(y, (x, gamma, beta), bw, "layer_norm")


# ---------------------------------------------------------------------------
# parameters and optimisation


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ParamStore:
    """Named trainable tensors plus Adam moments and a step counter."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, array, frozen: bool = False) -> Tensor:
        if frozen:
            raise ContractError(f"refusing to register frozen tensor {name!r} with the optimizer")
        if name in self.params:
            raise ContractError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(array, dtype=_DTYPE), requires_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def grads(self, prefix: str = "") -> dict[str, np.ndarray]:
        """Collected gradients; parameters untouched by backward get zeros."""
        return {
            n: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for n, t in self.params.items()
            if n.startswith(prefix)
        }

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for n, t in self.params.items():
            out[n] = t.data
            out[f"adam.m/{n}"] = self.m[n]
            out[f"adam.v/{n}"] = self.v[n]
        out["adam.step"] = np.array([self.step], dtype=np.float32)
        return out

    def load_state(self, tensors: dict[str, np.ndarray], frozen: Iterable[str] = ()):
        frozen = set(frozen)
        for n in self.params:
            if n in frozen:
                raise ContractError(f"checkpoint marks {n!r} frozen; it cannot be optimised")
            if n not in tensors:
                raise ContractError(f"checkpoint lacks parameter {n!r}")
            arr = np.asarray(tensors[n])
            if arr.shape != self.params[n].shape:
                raise DimensionError(f"{n}: checkpoint shape {arr.shape} != model shape {self.params[n].shape}")
            self.params[n].data = arr.astype(self.params[n].data.dtype)
            self.m[n] = np.asarray(tensors.get(f"adam.m/{n}", np.zeros_like(arr))).astype(arr.dtype)
            self.v[n] = np.asarray(tensors.get(f"adam.v/{n}", np.zeros_like(arr))).astype(arr.dtype)
        if "adam.step" in tensors:
            self.step = int(np.asarray(tensors["adam.step"]).reshape(-1)[0])


def adam_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    names: Iterable[str] | None = None,
) -> ParamStore:
    """Bias-corrected Adam update on ``names`` (default: every parameter).

    All named parameters must have a gradient. The step counter is shared by
    the whole store.
    """
    names = list(store.params) if names is None else list(names)
    for n in names:
        if n not in grads:
            raise ContractError(f"missing gradient for parameter {n!r}")
        if np.shape(grads[n]) != store.params[n].shape:
            raise DimensionError(f"gradient for {n!r} has shape {np.shape(grads[n])}, expected {store.params[n].shape}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for n in names:
        p = store.params[n]
        g = np.asarray(grads[n], dtype=p.data.dtype)
        _check_finite(g, f"gradient of {n}")
        m = store.m[n] = beta1 * store.m[n] + (1.0 - beta1) * g
        v = store.v[n] = beta2 * store.v[n] + (1.0 - beta2) * g * g
        update = (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)
        p.data = p.data - update
    return store


# ---------------------------------------------------------------------------
# verification harness


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> np.ndarray:
    a, n = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(function: Callable[[Tensor], Tensor], point, h: float = 1e-4, analytic=None) -> float:
    """Worst per-coordinate relative error between reverse-mode and central differences.

    Runs in 64-bit mode. ``analytic`` overrides the reverse-mode gradient,
    which lets callers confirm the harness notices a wrong gradient.
    """
    with precision(np.float64):
        x0 = np.array(point, dtype=np.float64)
        if analytic is None:
            x = Tensor(x0.copy(), requires_grad=True)
            out = function(x)
            if out.data.size != 1:
                raise ContractError("grad_check needs a scalar-valued function")
            out.backward()
            analytic = x.grad if x.grad is not None else np.zeros_like(x0)
        numeric = np.zeros_like(x0)
        flat = x0.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(function(Tensor(x0.copy())).data)
            flat[i] = orig - h
            fm = float(function(Tensor(x0.copy())).data)
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError("non-finite value during finite differencing")
            nflat[i] = (fp - fm) / (2 * h)
        return float(relative_error(np.asarray(analytic).reshape(-1), nflat).max(initial=0.0))


def directional_check(loss: Callable[[], Tensor], params: Sequence[Tensor], rng: np.random.Generator, h: float = 1e-4) -> float:
    """Relative error of the directional derivative along a random unit direction.

    Covers every parameter at once; used where per-coordinate differencing
    over thousands of weights would be too slow.
    """
    for p in params:
        p.grad = None
    out = loss()
    out.backward()
    dirs = [rng.standard_normal(p.shape) for p in params]
    norm = math.sqrt(sum(float((d * d).sum()) for d in dirs))
    dirs = [d / norm for d in dirs]
    analytic = sum(float((p.grad * d).sum()) if p.grad is not None else 0.0 for p, d in zip(params, dirs))
    base = [p.data.copy() for p in params]
    with no_grad():
        for p, b, d in zip(params, base, dirs):
            p.data = b + h * d
        fp = float(loss().data)
        for p, b, d in zip(params, base, dirs):
            p.data = b - h * d
        fm = float(loss().data)
    for p, b in zip(params, base):
        p.data = b
        p.grad = None
    numeric = (fp - fm) / (2 * h)
    return float(relative_error(analytic, numeric)[()])
