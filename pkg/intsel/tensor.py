"""
Reverse-mode automatic differentiation over float64 numpy arrays.

Only the operations the recurrent classifiers need are provided. Each op
records its parents and a closure that pushes the output gradient back to them.
"""
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union["Tensor", np.ndarray, float, int]

BCE_CLAMP = 1e-7


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Tuple["Tensor", ...] = (),
        backward: Optional[Callable[[np.ndarray], None]] = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d self / d leaf into every leaf that requires gradients"""
        order: List[Tensor] = []
        seen = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if id(p) not in seen)
        self.accumulate(np.ones_like(self.data) if grad is None else grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # interior gradients are not needed once propagated
                    node.grad = None

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        a.accumulate(_unbroadcast(grad, a.shape))
        b.accumulate(_unbroadcast(grad, b.shape))

    return Tensor(a.data + b.data, parents=(a, b), backward=backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        a.accumulate(_unbroadcast(grad, a.shape))
        b.accumulate(_unbroadcast(-grad, b.shape))

    return Tensor(a.data - b.data, parents=(a, b), backward=backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        a.accumulate(_unbroadcast(grad * b.data, a.shape))
        b.accumulate(_unbroadcast(grad * a.data, b.shape))

    return Tensor(a.data * b.data, parents=(a, b), backward=backward)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        a.accumulate(grad @ b.data.T)
        b.accumulate(a.data.T @ grad)

    return Tensor(a.data @ b.data, parents=(a, b), backward=backward)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backward(grad):
        a.accumulate(grad * out * (1.0 - out))

    return Tensor(out, parents=(a,), backward=backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(grad):
        a.accumulate(grad * (1.0 - out * out))

    return Tensor(out, parents=(a,), backward=backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(grad):
        a.accumulate(grad * mask)

    return Tensor(a.data * mask, parents=(a,), backward=backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(grad):
        for t, start, stop in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * grad.ndim
            index[axis] = slice(start, stop)
            t.accumulate(grad[tuple(index)])

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tensors, backward=backward)


def columns(a: Tensor, start: int, stop: int) -> Tensor:
    """a[:, start:stop]"""

    def backward(grad):
        full = np.zeros_like(a.data)
        full[:, start:stop] = grad
        a.accumulate(full)

    return Tensor(a.data[:, start:stop], parents=(a,), backward=backward)


def rows(a: Tensor, start: int, stop: int) -> Tensor:
    """a[start:stop]"""

    def backward(grad):
        full = np.zeros_like(a.data)
        full[start:stop] = grad
        a.accumulate(full)

    return Tensor(a.data[start:stop], parents=(a,), backward=backward)


def gather(a: Tensor, index: np.ndarray) -> Tensor:
    """a[index] along the first axis; also the embedding lookup"""
    index = np.asarray(index, dtype=np.int64)

    def backward(grad):
        full = np.zeros_like(a.data)
        np.add.at(full, index, grad)
        a.accumulate(full)

    return Tensor(a.data[index], parents=(a,), backward=backward)


def segment_sum(a: Tensor, segments: np.ndarray, count: int) -> Tensor:
    """Row k of the result is the sum of the rows of a whose segment is k"""
    segments = np.asarray(segments, dtype=np.int64)
    out = np.zeros((count,) + a.shape[1:])
    np.add.at(out, segments, a.data)

    def backward(grad):
        a.accumulate(grad[segments])

    return Tensor(out, parents=(a,), backward=backward)


def mean(a: Tensor) -> Tensor:
    size = a.data.size

    def backward(grad):
        a.accumulate(np.full_like(a.data, float(grad) / size))

    return Tensor(a.data.mean(), parents=(a,), backward=backward)


def binary_cross_entropy(p: Tensor, targets: np.ndarray, weights: Optional[np.ndarray] = None) -> Tensor:
    """Weighted mean of -[y ln p + (1 - y) ln(1 - p)], p clamped to [1e-7, 1 - 1e-7]"""
    y = np.asarray(targets, dtype=np.float64).reshape(p.shape)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64).reshape(p.shape)
    clamped = np.clip(p.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    losses = -(y * np.log(clamped) + (1.0 - y) * np.log(1.0 - clamped))
    inside = (p.data >= BCE_CLAMP) & (p.data <= 1.0 - BCE_CLAMP)

    def backward(grad):
        local = w * (-(y / clamped) + (1.0 - y) / (1.0 - clamped)) * inside / y.size
        p.accumulate(float(grad) * local)

    return Tensor((w * losses).mean(), parents=(p,), backward=backward)
