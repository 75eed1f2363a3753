"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Just enough machinery to train a small MLP: matmul, elementwise arithmetic,
SiLU, reductions, and a bias-add broadcast. Tensors are immutable value
objects; the computation graph is the implicit DAG of parent links, walked
in reverse topological order by :func:`backward`. The only in-place
mutation anywhere is the explicit Adam parameter update.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "backward", "zero_grads", "Adam", "matmul", "silu"]


def _as_f64(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return arr


class Tensor:
    """Dense n-dimensional float64 array, optionally tracked for gradients.

    ``data`` is the row-major numpy buffer; ``shape`` mirrors ``data.shape``.
    Nodes created by operations keep references to their parents plus a
    local backward rule, forming the graph consumed by :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.data = _as_f64(values)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _tracked(self) -> bool:
        return self.requires_grad or self._parents != ()

    # -- graph constructors -------------------------------------------------

    @staticmethod
    def _node(data: np.ndarray, parents, backward_fn) -> "Tensor":
        out = Tensor(data)
        if any(p._tracked() for p in parents):
            out._parents = tuple(parents)
            out._backward = backward_fn
        return out

    def __add__(self, other: "Tensor") -> "Tensor":
        a, b = self.data, other.data
        if a.shape != b.shape:
            # only bias-add broadcasting is supported: (n, d) + (d,)
            if not (a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]):
                raise ValueError(f"add shapes {a.shape} and {b.shape} are not a bias add")

            def bwd(g):
                return g, g.sum(axis=0)
        else:
            def bwd(g):
                return g, g
        return Tensor._node(a + b, (self, other), bwd)

    def __sub__(self, other: "Tensor") -> "Tensor":
        if self.data.shape != other.data.shape:
            raise ValueError(f"sub shapes {self.data.shape} and {other.data.shape} differ")

        def bwd(g):
            return g, -g
        return Tensor._node(self.data - other.data, (self, other), bwd)

    def __mul__(self, other: "Tensor") -> "Tensor":
        if self.data.shape != other.data.shape:
            raise ValueError(f"mul shapes {self.data.shape} and {other.data.shape} differ")
        a, b = self.data, other.data

        def bwd(g):
            return g * b, g * a
        return Tensor._node(a * b, (self, other), bwd)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def square(self) -> "Tensor":
        a = self.data

        def bwd(g):
            return (2.0 * a * g,)
        return Tensor._node(a * a, (self,), bwd)

    def mean(self) -> "Tensor":
        n = self.data.size
        shape = self.data.shape

        def bwd(g):
            return (np.full(shape, float(g) / n),)
        return Tensor._node(np.asarray(self.data.mean()), (self,), bwd)

    def sum(self) -> "Tensor":
        shape = self.data.shape

        def bwd(g):
            return (np.full(shape, float(g)),)
        return Tensor._node(np.asarray(self.data.sum()), (self,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with the standard reverse rules dA = g Bᵀ, dB = Aᵀ g."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-d operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul inner dims differ: {a.data.shape} x {b.data.shape}")
    da, db = a.data, b.data

    def bwd(g):
        return g @ db.T, da.T @ g
    return Tensor._node(da @ db, (a, b), bwd)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x), the activation used throughout the score network."""
    s = _sigmoid(x.data)
    val = x.data * s

    def bwd(g):
        return (g * (s + val * (1.0 - s)),)
    return Tensor._node(val, (x,), bwd)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every reachable gradient-tracked leaf.

    ``loss`` must be scalar. Gradients accumulate into any existing
    ``.grad``, so clear with :func:`zero_grads` between steps.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if not parent._tracked():
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


class Adam:
    """Bias-corrected Adam over a fixed parameter list.

    Moment buffers are keyed by position, so the parameter list must keep
    a stable order across steps.
    """

    def __init__(self, params: list[Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != param shape {p.data.shape}")
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            m_hat = self.m[i] / (1.0 - b1 ** t)
            v_hat = self.v[i] / (1.0 - b2 ** t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
