"""A small reverse-mode autodiff engine over float64 numpy arrays.

Each op records its parents and a closure mapping the output gradient to
parent gradients.  ``Tensor.backward`` walks the recorded graph once in
reverse topological order; a graph can only be backpropagated once.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DegenerateDistributionError, NumericError, ShapeError

# Stand-in for -inf in masked distributions; literal inf produces NaN gradients.
NEG_INF = -1e30


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._consumed = False
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tracked tensor")
        if self._consumed:
            raise ContractError("graph already backpropagated; rebuild the forward pass")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node._consumed = True
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)


def _topological_order(root: Tensor) -> list:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not compatible") from exc


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(data, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _make(
        data,
        tensors,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))),
    )


def reshape(a, shape: tuple) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def index_select(a, index) -> Tensor:
    """Basic numpy indexing (ints, slices) with a scatter-add backward."""
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def sum_(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(a.data.sum(axis=axis), (a,), backward)


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis), 1.0 / count)


def mse(a, b, axis: Optional[int] = None) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse needs equal shapes, got {a.shape} and {b.shape}")
    return mean(square(sub(a, b)), axis=axis)


def gather_rows(a, indices: Sequence[int]) -> Tensor:
    """Rows of a 2-D tensor selected (with repetition) by ``indices``."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if a.ndim != 2:
        raise ShapeError("gather_rows expects a matrix")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"row indices {idx.tolist()} outside 0..{a.shape[0] - 1}")

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), backward)


def pick(a, columns: Sequence[int]) -> Tensor:
    """Per-row element ``a[i, columns[i]]``, shape (rows,)."""
    a = as_tensor(a)
    cols = np.asarray(columns, dtype=np.int64)
    if a.ndim != 2 or cols.shape != (a.shape[0],):
        raise ShapeError(f"pick needs one column per row of {a.shape}")
    rows = np.arange(a.shape[0])

    def backward(g):
        full = np.zeros_like(a.data)
        full[rows, cols] = g
        return (full,)

    return _make(a.data[rows, cols], (a,), backward)


def masked_log_softmax(logits, mask) -> Tensor:
    """Row-wise log-softmax over entries where ``mask`` is 0.

    Marked entries (mask 1) come out as ``NEG_INF`` and receive no gradient.
    """
    logits = as_tensor(logits)
    mask = np.asarray(mask).astype(bool)
    if mask.shape != logits.shape or logits.ndim != 2:
        raise ShapeError(f"mask {mask.shape} does not match logits {logits.shape}")
    keep = ~mask
    if not keep.any(axis=1).all():
        rows = np.flatnonzero(~keep.any(axis=1)).tolist()
        raise DegenerateDistributionError(f"rows {rows} have every entry masked")
    x = np.where(keep, logits.data, -np.inf)
    top = x.max(axis=1, keepdims=True)
    shifted = np.where(keep, logits.data - top, -np.inf)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = np.where(keep, shifted - lse, NEG_INF)
    probs = np.where(keep, np.exp(out), 0.0)

    def backward(g):
        g = np.where(keep, g, 0.0)
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return _make(out, (logits,), backward)


def check_finite(named: Iterable[tuple[str, Tensor]]) -> None:
    """Raise naming the first tensor holding a NaN or infinity."""
    for name, t in named:
        data = t.data if isinstance(t, Tensor) else np.asarray(t)
        if not np.all(np.isfinite(data)):
            raise NumericError(f"non-finite values in {name}")


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
) -> float:
    """Largest ``|analytic - central difference| / max(1, |analytic|)``.

    ``loss_fn`` must rebuild the forward pass from the current contents of
    ``params`` on every call and be deterministic.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps {eps} outside [1e-7, 1e-3]")
    for p in params:
        p.grad = None
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is not finite")
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = loss_fn().item()
            flat[k] = orig - eps
            down = loss_fn().item()
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("loss became non-finite under perturbation")
            numeric = (up - down) / (2.0 * eps)
            a = analytic.reshape(-1)[k]
            worst = max(worst, float(abs(a - numeric) / max(1.0, abs(a))))
    return worst
