"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A `Tensor` wraps an ndarray plus the links needed for backprop: the parent
tensors it was computed from and a closure mapping the incoming gradient to
per-parent gradients. The graph is realized implicitly by these links;
`Tensor.backward()` runs an iterative topological sort and accumulates
gradients into `.grad` (accumulation is additive across repeated backward
calls, which is how batch-averaged gradients are built up sample by sample).

Only the operations the transformer model needs are implemented. Hot
elementwise/row kernels are delegated to :mod:`sensorlab.kernels`.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes are incompatible with the operation's contract."""


class GraphError(RuntimeError):
    """Backward invoked on something that is not a differentiable scalar."""


class EmptyMaskError(ValueError):
    """A masked reduction received a mask with no selected positions."""


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _grad_fn=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._grad_fn = _grad_fn

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def backward(self, seed: float = 1.0):
        """Backpropagate from a scalar tensor, accumulating into `.grad`."""
        if self.data.size != 1:
            raise GraphError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            raise GraphError("backward on a tensor that does not require grad")
        order = _toposort(self)
        seed_arr = np.full(self.data.shape, float(seed))
        self.grad = seed_arr if self.grad is None else self.grad + seed_arr
        for node in reversed(order):
            if node._grad_fn is None or node.grad is None:
                continue
            parent_grads = node._grad_fn(node.grad)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = pg
                else:
                    parent.grad = parent.grad + pg


def _toposort(root: Tensor):
    order = []
    seen = set()
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _result(data, parents, grad_fn) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=parents if req else (),
                  _grad_fn=grad_fn if req else None)


# ---------------------------------------------------------------------------
# elementwise / broadcast


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result(out, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _result(out, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data

    def grad_fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _result(out, (a, b), grad_fn)


def neg(a) -> Tensor:
    a = _wrap(a)

    def grad_fn(g):
        return (-g,)

    return _result(-a.data, (a,), grad_fn)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}"
        )
    out = a.data @ b.data

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _result(out, (a, b), grad_fn)


def transpose(a) -> Tensor:
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.data.shape}")

    def grad_fn(g):
        return (g.T.copy(),)

    return _result(a.data.T.copy(), (a,), grad_fn)


# ---------------------------------------------------------------------------
# nonlinearities and normalization


def gelu(a) -> Tensor:
    a = _wrap(a)
    out = kernels.gelu_fwd(a.data)

    def grad_fn(g):
        return (kernels.gelu_bwd(a.data, g),)

    return _result(out, (a,), grad_fn)


def layernorm(a, eps: float = 1e-5) -> Tensor:
    """Row-wise normalization to zero mean / unit variance (no affine part;
    apply gain and bias with `mul`/`add` so the normalized output stays
    inspectable)."""
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"layernorm expects a 2-D tensor, got {a.data.shape}")
    y, rstd = kernels.layernorm_fwd(np.ascontiguousarray(a.data), eps)

    def grad_fn(g):
        return (kernels.layernorm_bwd(y, rstd, np.ascontiguousarray(g)),)

    return _result(y, (a,), grad_fn)


def softmax_rows(a) -> Tensor:
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D tensor, got {a.data.shape}")
    y = kernels.softmax_fwd(np.ascontiguousarray(a.data))

    def grad_fn(g):
        return (kernels.softmax_bwd(y, np.ascontiguousarray(g)),)

    return _result(y, (a,), grad_fn)


# ---------------------------------------------------------------------------
# reductions


def sum_all(a) -> Tensor:
    a = _wrap(a)

    def grad_fn(g):
        return (np.full(a.data.shape, float(g)),)

    return _result(a.data.sum(), (a,), grad_fn)


def mean_all(a) -> Tensor:
    a = _wrap(a)
    n = a.data.size

    def grad_fn(g):
        return (np.full(a.data.shape, float(g) / n),)

    return _result(a.data.mean(), (a,), grad_fn)


def mse_masked(pred, target, mask) -> Tensor:
    """Mean squared error restricted to `mask`-selected positions.

    `target` and `mask` are treated as constants. Raises EmptyMaskError when
    the mask selects nothing (the caller decides whether that means skip)."""
    pred = _wrap(pred)
    t = _as_array(target.data if isinstance(target, Tensor) else target)
    m = np.asarray(mask)
    if t.shape != pred.data.shape or m.shape != pred.data.shape:
        raise ShapeError(
            f"mse_masked shape mismatch: pred {pred.data.shape}, "
            f"target {t.shape}, mask {m.shape}"
        )
    mf = np.ascontiguousarray(m, dtype=np.float64)
    n = float(mf.sum())
    if n == 0:
        raise EmptyMaskError("mse_masked: mask selects no positions")
    sse = kernels.masked_sse(
        np.ascontiguousarray(pred.data), np.ascontiguousarray(t), mf
    )

    def grad_fn(g):
        return (float(g) * 2.0 * (pred.data - t) * mf / n,)

    return _result(np.float64(sse / n), (pred,), grad_fn)


# ---------------------------------------------------------------------------
# row and column plumbing


def gather_rows(a, idx) -> Tensor:
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-D tensor, got {a.data.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows expects a 1-D index array")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise ShapeError("gather_rows index out of range")
    out = a.data[idx]

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _result(out, (a,), grad_fn)


def scatter_rows(n_rows: int, idx, src) -> Tensor:
    """Place rows of `src` at positions `idx` of a zero (n_rows, d) tensor.
    Indices must be unique and in range."""
    src = _wrap(src)
    if src.data.ndim != 2:
        raise ShapeError(f"scatter_rows expects 2-D source, got {src.data.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != (src.data.shape[0],):
        raise ShapeError("scatter_rows: index length must match source rows")
    if idx.size:
        if idx.min() < 0 or idx.max() >= n_rows:
            raise ShapeError("scatter_rows index out of range")
        if np.unique(idx).size != idx.size:
            raise ShapeError("scatter_rows indices must be unique")
    out = np.zeros((n_rows, src.data.shape[1]))
    out[idx] = src.data

    def grad_fn(g):
        return (g[idx].copy(),)

    return _result(out, (src,), grad_fn)


def repeat_row(a, n: int) -> Tensor:
    a = _wrap(a)
    row = a.data.reshape(1, -1)
    out = np.repeat(row, n, axis=0)

    def grad_fn(g):
        return (g.sum(axis=0).reshape(a.data.shape),)

    return _result(out, (a,), grad_fn)


def slice_cols(a, lo: int, hi: int) -> Tensor:
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"slice_cols expects a 2-D tensor, got {a.data.shape}")
    if not (0 <= lo <= hi <= a.data.shape[1]):
        raise ShapeError(
            f"slice_cols bounds [{lo}, {hi}) invalid for width {a.data.shape[1]}"
        )
    out = a.data[:, lo:hi].copy()

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        ga[:, lo:hi] = g
        return (ga,)

    return _result(out, (a,), grad_fn)


def concat_cols(parts) -> Tensor:
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise ShapeError("concat_cols needs at least one part")
    for p in parts:
        if p.data.ndim != 2:
            raise ShapeError("concat_cols expects 2-D tensors")
    rows = parts[0].data.shape[0]
    if any(p.data.shape[0] != rows for p in parts):
        raise ShapeError("concat_cols row counts disagree")
    widths = [p.data.shape[1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=1)
    edges = np.cumsum([0] + widths)

    def grad_fn(g):
        return tuple(g[:, edges[i]:edges[i + 1]].copy() for i in range(len(parts)))

    return _result(out, tuple(parts), grad_fn)
