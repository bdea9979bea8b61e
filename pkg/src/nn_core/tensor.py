from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from common.errors import ContractError, DimensionError

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


def _as_array(values) -> np.ndarray:
    return np.asarray(values, dtype=DTYPE)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """n-dimensional float64 array that records how it was computed.

    Every operation returns a new Tensor holding its parents and a closure
    mapping the upstream gradient to one gradient per parent.
    ``backward`` walks that graph in reverse topological order and adds the
    result into every reachable :class:`Parameter`.
    """

    __array_priority__ = 100

    def __init__(self, data, parents: Sequence["Tensor"] = (), backward_fn: BackwardFn | None = None):
        self.data = _as_array(data)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # -- graph ---------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(parameter) into every reachable Parameter."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")

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
            for parent in node.parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if isinstance(node, Parameter):
                node.grad += grad
            if node.backward_fn is None:
                continue
            for parent, parent_grad in zip(node.parents, node.backward_fn(grad)):
                if parent_grad is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + parent_grad
                else:
                    grads[key] = parent_grad

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other) -> Tensor:
        other = lift(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor(
            self.data + other.data,
            (self, other),
            lambda g: (unbroadcast(g, a_shape), unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        other = lift(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor(
            self.data - other.data,
            (self, other),
            lambda g: (unbroadcast(g, a_shape), unbroadcast(-g, b_shape)),
        )

    def __rsub__(self, other) -> Tensor:
        return lift(other) - self

    def __mul__(self, other) -> Tensor:
        other = lift(other)
        a, b = self.data, other.data
        return Tensor(
            a * b,
            (self, other),
            lambda g: (unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        return Tensor(-self.data, (self,), lambda g: (-g,))

    def __matmul__(self, other) -> Tensor:
        other = lift(other)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise DimensionError(f"Cannot multiply shapes {self.shape} and {other.shape}")
        a, b = self.data, other.data
        return Tensor(a @ b, (self, other), lambda g: (g @ b.T, a.T @ g))

    def abs(self) -> Tensor:
        x = self.data
        return Tensor(np.abs(x), (self,), lambda g: (g * np.sign(x),))

    def square(self) -> Tensor:
        x = self.data
        return Tensor(x * x, (self,), lambda g: (2.0 * x * g,))

    def sum(self, axis: int | tuple[int, ...] | None = None) -> Tensor:
        shape = self.shape
        out = self.data.sum(axis=axis)

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

        return Tensor(out, (self,), backward)

    def mean(self, axis: int | tuple[int, ...] | None = None) -> Tensor:
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        if count == 0:
            raise ContractError(f"mean over an empty axis of shape {self.shape}")
        return self.sum(axis) * (1.0 / count)

    def reshape(self, *shape: int) -> Tensor:
        old = self.shape
        return Tensor(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))


class Parameter(Tensor):
    """Trainable tensor with a gradient slot of identical shape."""

    def __init__(self, value, name: str = ""):
        super().__init__(value)
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def assign(self, value) -> None:
        value = _as_array(value)
        if value.shape != self.data.shape:
            raise DimensionError(f"Parameter {self.name!r} expects shape {self.shape}, got {value.shape}")
        self.data = value.copy()
        if self.grad.shape != self.data.shape:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape})"


def lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def concatenate(tensors: Iterable[Tensor], axis: int = 1) -> Tensor:
    tensors = [lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)
