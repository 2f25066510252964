"""Reverse-mode automatic differentiation on numpy arrays.

A `Tensor` wraps an ndarray and records the closure that propagates its
output gradient to its parents; `backward()` on a scalar walks the graph in
reverse topological order.  Training runs in float32, gradient verification
in float64.  Only the operations the models need are provided.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NotScalar, ShapeMismatch

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph construction inside its block."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise NotScalar(f"backward() needs a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._parents = tuple(p for p in parents if p.requires_grad)
    return out


# -- elementwise ----------------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = _node(a.data + b.data, (a, b))
    if out.requires_grad:
        def backward():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad, b.data.shape))
        out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = _node(a.data * b.data, (a, b))
    if out.requires_grad:
        def backward():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad * a.data, b.data.shape))
        out._backward = backward
    return out


def power(a: Tensor, p: float) -> Tensor:
    out = _node(a.data ** p, (a,))
    if out.requires_grad:
        def backward():
            a._accumulate(out.grad * p * a.data ** (p - 1))
        out._backward = backward
    return out


def exp(a: Tensor) -> Tensor:
    out = _node(np.exp(a.data), (a,))
    if out.requires_grad:
        def backward():
            a._accumulate(out.grad * out.data)
        out._backward = backward
    return out


def log(a: Tensor) -> Tensor:
    out = _node(np.log(a.data), (a,))
    if out.requires_grad:
        def backward():
            a._accumulate(out.grad / a.data)
        out._backward = backward
    return out


def tanh(a: Tensor) -> Tensor:
    out = _node(np.tanh(a.data), (a,))
    if out.requires_grad:
        def backward():
            a._accumulate(out.grad * (1.0 - out.data * out.data))
        out._backward = backward
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = _node(data.astype(x.dtype), (a,))
    if out.requires_grad:
        def backward():
            a._accumulate(out.grad * out.data * (1.0 - out.data))
        out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    out = _node(np.maximum(a.data, 0.0), (a,))
    if out.requires_grad:
        def backward():
            a._accumulate(out.grad * (a.data > 0))
        out._backward = backward
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh approximation, built from differentiable primitives."""
    inner = mul(_GELU_C, add(a, mul(0.044715, mul(a, mul(a, a)))))
    return mul(mul(0.5, a), add(1.0, tanh(inner)))


def clamp_min(a: Tensor, lo: float) -> Tensor:
    out = _node(np.maximum(a.data, lo), (a,))
    if out.requires_grad:
        def backward():
            a._accumulate(out.grad * (a.data > lo))
        out._backward = backward
    return out


# -- shape ----------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = _node(a.data.reshape(shape), (a,))
    if out.requires_grad:
        def backward():
            a._accumulate(out.grad.reshape(a.data.shape))
        out._backward = backward
    return out


def transpose(a: Tensor, axes=None) -> Tensor:
    out = _node(np.transpose(a.data, axes), (a,))
    if out.requires_grad:
        inv = None if axes is None else tuple(np.argsort(axes))
        def backward():
            a._accumulate(np.transpose(out.grad, inv))
        out._backward = backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * out.grad.ndim
                    idx[axis] = slice(lo, hi)
                    t._accumulate(out.grad[tuple(idx)])
        out._backward = backward
    return out


def getitem(a: Tensor, key) -> Tensor:
    out = _node(a.data[key], (a,))
    if out.requires_grad:
        def backward():
            g = np.zeros_like(a.data)
            np.add.at(g, key, out.grad)
            a._accumulate(g)
        out._backward = backward
    return out


# -- reductions -----------------------------------------------------------


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = _node(a.data.sum(axis=axis, keepdims=keepdims), (a,))
    if out.requires_grad:
        def backward():
            g = out.grad
            if not keepdims and axis is not None:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        out._backward = backward
    return out


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        n = a.data.shape[axis]
    return mul(reduce_sum(a, axis, keepdims), 1.0 / n)


# -- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = _node(a.data @ b.data, (a, b))
    if out.requires_grad:
        def backward():
            g = out.grad
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2)
                a._accumulate(_unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ g
                b._accumulate(_unbroadcast(gb, b.data.shape))
        out._backward = backward
    return out


# -- neural-net specific --------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable; fully masked inputs (all -inf-like) are the caller's problem."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)
    out = _node(data, (a,))
    if out.requires_grad:
        def backward():
            g = out.grad
            s = (g * out.data).sum(axis=axis, keepdims=True)
            a._accumulate(out.data * (g - s))
        out._backward = backward
    return out


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Set positions where `mask` is true to `value`; their gradient is zero."""
    mask = np.asarray(mask, dtype=bool)
    data = np.where(mask, np.asarray(value, dtype=a.data.dtype), a.data)
    out = _node(data, (a,))
    if out.requires_grad:
        def backward():
            a._accumulate(np.where(mask, 0.0, out.grad))
        out._backward = backward
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = _node(xhat * gamma.data + beta.data, (x, gamma, beta))
    if out.requires_grad:
        n = x.data.shape[-1]
        def backward():
            g = out.grad
            if gamma.requires_grad:
                gamma._accumulate(
                    _unbroadcast((g * xhat), gamma.data.shape)
                )
            if beta.requires_grad:
                beta._accumulate(_unbroadcast(g, beta.data.shape))
            if x.requires_grad:
                gx = g * gamma.data
                mean_g = gx.mean(axis=-1, keepdims=True)
                mean_gx = (gx * xhat).mean(axis=-1, keepdims=True)
                x._accumulate(inv * (gx - mean_g - xhat * mean_gx))
        out._backward = backward
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup; repeated ids accumulate gradient into the same row."""
    ids = np.asarray(ids, dtype=np.int64)
    out = _node(table.data[ids], (table,))
    if out.requires_grad:
        def backward():
            g = np.zeros_like(table.data)
            np.add.at(g, ids, out.grad)
            table._accumulate(g)
        out._backward = backward
    return out


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """out[n] = a[n, idx[n]] for a 2-d tensor."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.data.shape[0])
    out = _node(a.data[rows, idx], (a,))
    if out.requires_grad:
        def backward():
            g = np.zeros_like(a.data)
            np.add.at(g, (rows, idx), out.grad)
            a._accumulate(g)
        out._backward = backward
    return out


def scatter_add_cols(weights: Tensor, col_ids: np.ndarray, n_cols: int) -> Tensor:
    """out[n, col_ids[n, s]] += weights[n, s]; bins copy weights into vocabulary slots."""
    col_ids = np.asarray(col_ids, dtype=np.int64)
    if col_ids.ndim == 1:
        col_ids = np.broadcast_to(col_ids, weights.data.shape)
    n = weights.data.shape[0]
    data = np.zeros((n, n_cols), dtype=weights.data.dtype)
    rows = np.broadcast_to(np.arange(n)[:, None], col_ids.shape)
    np.add.at(data, (rows, col_ids), weights.data)
    out = _node(data, (weights,))
    if out.requires_grad:
        def backward():
            weights._accumulate(out.grad[rows, col_ids])
        out._backward = backward
    return out


def batched_gather(src: Tensor, idx: np.ndarray) -> Tensor:
    """out[n, s, :] = src[n, idx[n, s], :]; builds per-position views of encoder states."""
    idx = np.asarray(idx, dtype=np.int64)
    n = src.data.shape[0]
    rows = np.arange(n)[:, None]
    out = _node(src.data[rows, idx], (src,))
    if out.requires_grad:
        def backward():
            g = np.zeros_like(src.data)
            np.add.at(g, (rows, idx), out.grad)
            src._accumulate(g)
        out._backward = backward
    return out


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row negative log-likelihood, fused with log-sum-exp for stability."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.ndim != 1 or targets.shape[0] != logits.data.shape[0]:
        raise ShapeMismatch(
            f"cross_entropy expects (N, V) logits and (N,) targets, got {logits.data.shape} and {targets.shape}"
        )
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    z = e.sum(axis=-1, keepdims=True)
    lse = (m + np.log(z)).squeeze(-1)
    rows = np.arange(x.shape[0])
    nll = lse - x[rows, targets]
    out = _node(nll, (logits,))
    if out.requires_grad:
        def backward():
            p = e / z
            g = p * out.grad[:, None]
            g[rows, targets] -= out.grad
            logits._accumulate(g)
        out._backward = backward
    return out


# -- parameters and optimization ------------------------------------------


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def global_grad_norm(params: dict[str, Tensor]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return math.sqrt(total)


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint l2 norm is at most `max_norm`; returns the pre-clip norm."""
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


class Adam:
    """Standard Adam with bias correction, state kept per parameter name."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= (self.lr * update).astype(p.data.dtype)


# -- gradient verification ------------------------------------------------


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-6,
    max_elements: int | None = None,
    seed: int = 0,
) -> float:
    """Compare analytic gradients against central differences in float64.

    Returns the maximum relative error over all probed elements.  Parameters
    are perturbed in place and restored.  `max_elements` caps the number of
    probed coordinates per parameter (deterministic subsample) to keep large
    checks affordable.
    """
    for p in params.values():
        if p.data.dtype != np.float64:
            raise ShapeMismatch("grad_check requires float64 parameters")
    zero_grads(params)
    loss = loss_fn()
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_elements is not None and n > max_elements:
            coords = rng.choice(n, size=max_elements, replace=False)
        else:
            coords = np.arange(n)
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                hi = loss_fn().item()
            flat[i] = orig - eps
            with no_grad():
                lo = loss_fn().item()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            denom = max(abs(a_flat[i]), abs(numeric), 1e-4)
            err = abs(a_flat[i] - numeric) / denom
            if err > worst:
                worst = err
    return worst
