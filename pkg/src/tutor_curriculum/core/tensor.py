"""
Dense tensor with reverse-mode gradient computation

A Tensor wraps a read-only float64 NumPy array. Operations are Function
subclasses: ``Function.apply`` runs the forward pass and, when any input
requires a gradient, records a Node so ``Tensor.backward`` can replay the
graph in reverse topological order.

Only leaf tensors (parameters, inputs created with ``requires_grad=True``)
keep a ``grad`` after backward. Intermediate gradients live in a scratch
table for the duration of one backward pass.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from tutor_curriculum.exceptions import ShapeMismatchError


DTYPE = np.float64

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]
Operand = Union["Tensor", float, int]

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    """Whether new operations record backpropagation nodes on this thread"""
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread (evaluation passes)"""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def _as_array(values: ArrayLike) -> np.ndarray:
    array = np.array(values, dtype=DTYPE, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Node:
    """Backpropagation record: the function that produced a tensor and its inputs"""
    function: "Function"
    parents: Tuple["Tensor", ...]


class Function:
    """
    Base class for differentiable operations

    Subclasses implement ``forward`` on raw arrays and ``backward`` returning
    one gradient array (or None) per tensor input, in input order.
    """

    name = "function"

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs) -> "Tensor":
        function = cls()
        data = function.forward(*(t.data for t in tensors), **kwargs)
        track = is_grad_enabled() and any(t.requires_grad for t in tensors)
        out = Tensor(data, requires_grad=track)
        if track:
            out._node = Node(function, tuple(tensors))
        return out


class Tensor:
    """Dense float64 array with an optional gradient accumulator"""

    # Make NumPy scalars defer to the reflected operators
    __array_ufunc__ = None

    def __init__(self, values: ArrayLike, requires_grad: bool = False):
        self._data = _as_array(values)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None

    # ------------------------------------------------------------------
    # Basic properties

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def size(self) -> int:
        return int(self._data.size)

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def node(self) -> Optional[Node]:
        return self._node

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        """Writable copy of the values"""
        return np.array(self._data, copy=True)

    def item(self) -> float:
        if self._data.size != 1:
            raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Same values, no gradient flow back into this tensor's graph"""
        out = Tensor.__new__(Tensor)
        out._data = self._data
        out.requires_grad = False
        out.grad = None
        out._node = None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # ------------------------------------------------------------------
    # Backward pass

    def backward(self, grad: Optional[ArrayLike] = None) -> None:
        """
        Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``

        Args:
            grad: upstream gradient; defaults to ones (a scalar loss).
        """
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")

        seed = np.ones(self.shape, dtype=DTYPE) if grad is None else np.array(grad, dtype=DTYPE)
        if seed.shape != self.shape:
            raise ShapeMismatchError("backward", seed.shape, self.shape)

        order = self._topological_order()
        pending: Dict[int, np.ndarray] = {id(self): seed}

        for tensor in reversed(order):
            upstream = pending.pop(id(tensor), None)
            if upstream is None:
                continue
            if tensor._node is None:
                if tensor.requires_grad:
                    tensor.grad = upstream.copy() if tensor.grad is None else tensor.grad + upstream
                continue

            parent_grads = tensor._node.function.backward(upstream)
            for parent, parent_grad in zip(tensor._node.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + parent_grad
                else:
                    pending[key] = parent_grad

    def _topological_order(self) -> List["Tensor"]:
        # Iterative DFS; deep residual stacks exceed the recursion limit otherwise
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            if tensor._node is not None:
                for parent in tensor._node.parents:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    # ------------------------------------------------------------------
    # Elementwise operators (tensor-vs-tensor requires identical shapes)

    def __add__(self, other: Operand) -> "Tensor":
        if isinstance(other, Tensor):
            return Add.apply(self, other)
        return AddScalar.apply(self, constant=float(other))

    __radd__ = __add__

    def __sub__(self, other: Operand) -> "Tensor":
        if isinstance(other, Tensor):
            return Sub.apply(self, other)
        return AddScalar.apply(self, constant=-float(other))

    def __rsub__(self, other: Operand) -> "Tensor":
        return AddScalar.apply(Scale.apply(self, constant=-1.0), constant=float(other))

    def __mul__(self, other: Operand) -> "Tensor":
        if isinstance(other, Tensor):
            return Mul.apply(self, other)
        return Scale.apply(self, constant=float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return Scale.apply(self, constant=-1.0)

    def square(self) -> "Tensor":
        return Square.apply(self)

    def relu(self) -> "Tensor":
        return Relu.apply(self)

    def sigmoid(self) -> "Tensor":
        return Sigmoid.apply(self)

    def scale(self, constant: float) -> "Tensor":
        return Scale.apply(self, constant=float(constant))

    def maximum(self, constant: float) -> "Tensor":
        """Elementwise max(self, constant)"""
        return MaximumScalar.apply(self, constant=float(constant))

    def sum(self) -> "Tensor":
        return Sum.apply(self)

    def mean(self) -> "Tensor":
        return Mean.apply(self)


def _require_same_shape(operation: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(operation, a.shape, b.shape)


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function without overflow for large |x|"""
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


class Add(Function):
    name = "add"

    def forward(self, a, b):
        _require_same_shape(self.name, a, b)
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        _require_same_shape(self.name, a, b)
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        _require_same_shape(self.name, a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class AddScalar(Function):
    name = "add-constant"

    def forward(self, a, constant: float):
        return a + constant

    def backward(self, grad):
        return (grad,)


class Scale(Function):
    name = "scale-by-constant"

    def forward(self, a, constant: float):
        self.constant = constant
        return a * constant

    def backward(self, grad):
        return (grad * self.constant,)


class Square(Function):
    name = "square"

    def forward(self, a):
        self.a = a
        return a * a

    def backward(self, grad):
        return (2.0 * self.a * grad,)


class Relu(Function):
    name = "relu"

    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, a):
        self.out = stable_sigmoid(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class MaximumScalar(Function):
    name = "max-with-constant"

    def forward(self, a, constant: float):
        # Ties route no gradient to the input
        self.mask = a > constant
        return np.where(self.mask, a, constant)

    def backward(self, grad):
        return (grad * self.mask,)


class Sum(Function):
    name = "sum"

    def forward(self, a):
        self.shape = a.shape
        return np.array(a.sum())

    def backward(self, grad):
        return (np.full(self.shape, float(grad), dtype=DTYPE),)


class Mean(Function):
    name = "mean"

    def forward(self, a):
        self.shape = a.shape
        self.count = a.size
        return np.array(a.sum() / a.size)

    def backward(self, grad):
        return (np.full(self.shape, float(grad) / self.count, dtype=DTYPE),)
