"""A small reverse-mode autodiff over float64 numpy arrays.

Only the operations the policy and the PPO loss need are provided.  Every op
records its parents and a closure mapping the output gradient to parent
gradients; :func:`backward` walks the recorded graph in reverse topological
order and accumulates into ``.grad`` of leaf tensors that require gradients.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np
from scipy import sparse

LOG_2PI = math.log(2 * math.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad and not _parents else None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __pow__(self, k: float):
        return power(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return mean(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    parents = tuple(p for p in parents)
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=parents if req else (), _backward=backward if req else None)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for k, s in enumerate(shape):
        if s == 1 and g.shape[k] != 1:
            g = g.sum(axis=k, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _node(out, (a,), lambda g: (-g * out * out,))


def power(a: Tensor, k: float) -> Tensor:
    return _node(a.data ** k, (a,), lambda g: (g * k * a.data ** (k - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def tsum(a: Tensor, axis=None) -> Tensor:
    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)
    return _node(a.data.sum(axis=axis), (a,), back)


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _node(a.data.mean(), (a,), lambda g: (np.full(a.shape, g / n),))


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is taken as 0."""
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is zero wherever the clamp is active."""
    inside = (x.data >= lo) & (x.data <= hi)
    return _node(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    return _node(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


def take_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)
    return _node(x.data[idx], (x,), back)


def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """y = x W + b for x of shape (n, in), W (in, out), b (out,)."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ValueError(f"linear shape mismatch: x{x.shape} W{W.shape} b{b.shape}")
    return _node(x.data @ W.data + b.data, (x, W, b),
                 lambda g: (g @ W.data.T, x.data.T @ g, g.sum(axis=0)))


def message_matrix(graph, n: int | None = None) -> sparse.csr_matrix:
    """Sparse operator ``I + A - D`` so that ``(M @ Z)_i = z_i + sum_{j in N(i)} (z_j - z_i)``.

    ``graph`` is a TeamGraph, a directed ``(src, dst)`` pair, or an already
    built matrix (returned unchanged).
    """
    if sparse.issparse(graph):
        return graph
    if isinstance(graph, tuple):
        src, dst = graph
        if n is None:
            raise ValueError("node count needed for raw edge arrays")
    else:
        src, dst = graph.directed()
        n = graph.n
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    deg = np.bincount(dst, minlength=n).astype(np.float64)
    rows = np.concatenate([dst, np.arange(n)])
    cols = np.concatenate([src, np.arange(n)])
    vals = np.concatenate([np.ones(len(src)), 1.0 - deg])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def gnn_layer(Z: Tensor, graph, W_h: Tensor) -> Tensor:
    """Message passing h_i = W_h z_i + sum_{j in N(i)} W_h (z_j - z_i).

    Rows of ``Z`` are node embeddings, so the product is taken as ``M Z W_h^T``
    with ``M`` from :func:`message_matrix`.
    """
    Z, W_h = as_tensor(Z), as_tensor(W_h)
    M = message_matrix(graph, Z.shape[0] if Z.data.ndim == 2 else None)
    if Z.data.ndim != 2 or Z.shape[0] != M.shape[0] or W_h.shape != (Z.shape[1], Z.shape[1]):
        raise ValueError(f"gnn_layer shape mismatch: Z{Z.shape} W_h{W_h.shape} n={M.shape[0]}")
    agg = np.asarray(M @ Z.data)

    def back(g):
        ga = g @ W_h.data
        return np.asarray(M.T @ ga), g.T @ agg

    return _node(agg @ W_h.data.T, (Z, W_h), back)


def gaussian_logprob(a, mu, log_sigma) -> Tensor:
    """Diagonal Gaussian log-density summed over the last axis.

    ``a`` and ``mu`` share a shape (k,) or (n, k); ``log_sigma`` broadcasts.
    """
    a, mu, log_sigma = as_tensor(a), as_tensor(mu), as_tensor(log_sigma)
    z = (a - mu) * exp(neg(log_sigma))
    terms = -0.5 * LOG_2PI - log_sigma - 0.5 * (z * z)
    return tsum(terms, axis=-1)


def gaussian_entropy(log_sigma: Tensor) -> Tensor:
    return tsum(log_sigma + 0.5 * (1.0 + LOG_2PI))


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf parameter."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order, seen = [], set()
    stack = [(loss, False)]
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
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad += g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


class ParamStore:
    """Named parameter tensors plus adaptive-moment optimizer state."""

    def __init__(self):
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def add(self, name: str, value) -> Tensor:
        p = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.params[name] = p
        self.m[name] = np.zeros_like(p.data)
        self.v[name] = np.zeros_like(p.data)
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad[...] = 0.0

    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.params.values()))

    def flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.params.values()])

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, p in self.params.items():
            out.add(k, p.data.copy())
        return out


def init_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def adam_step(store: ParamStore, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update on every parameter, then zero the gradients."""
    store.t += 1
    c1 = 1.0 - beta1 ** store.t
    c2 = 1.0 - beta2 ** store.t
    for name, p in store.params.items():
        g = p.grad
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    store.zero_grad()
