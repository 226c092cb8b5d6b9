"""
A module implementing reverse-mode automatic differentiation over numpy arrays.

Every operation on a Tensor that requires gradients records its inputs and a
closure pushing the output gradient back to them. Tape.record walks the graph
once into reverse topological order and Tape.backward runs every closure
exactly once. Values are float64 throughout.

Classes:
    Tensor: Array value with an optional gradient buffer.
    Tape: Recorded operation graph of one forward pass.
    GradCheck: Result of a finite-difference gradient check.

Functions:
    concat: Concatenation of several tensors.
    no_grad: Context manager disabling graph recording.
    grad_check, grad_check_report: Central-difference gradient validation.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidParams, NonFinite, ShapeMismatch

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """
    A float64 array that can take part in a differentiated computation.

    Attributes:
        data (np.ndarray): Values.
        grad (Optional[np.ndarray]): Accumulated gradient, same shape as data.
        requires_grad (bool): Whether operations on this tensor are recorded.
        name (str): Label used in checkpoints and error messages.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_prev", "_backward", "_op")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._prev: Tuple["Tensor", ...] = ()
        self._backward: Callable[[], None] = _noop
        self._op = ""

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad = self.grad + g

    def backward(self, grad: Optional[np.ndarray] = None) -> "Tape":
        """
        Back-propagate from this tensor. A scalar seeds with 1.

        Returns:
            Tape: The traversed graph.
        """
        tape = Tape.record(self)
        tape.backward(grad)
        return tape

    # ------------------------------------------------------------------
    # graph construction

    def _child(self, data: np.ndarray, parents: Tuple["Tensor", ...], op: str) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = _recording() and any(p.requires_grad for p in parents)
        out.name = ""
        out._prev = parents if out.requires_grad else ()
        out._backward = _noop
        out._op = op
        return out

    # ------------------------------------------------------------------
    # arithmetic

    def __add__(self, other: ArrayLike | "Tensor") -> "Tensor":
        other = as_tensor(other)
        out = self._child(self.data + other.data, (self, other), "add")
        if out.requires_grad:

            def _backward():
                if self.requires_grad:
                    self._accumulate(_unbroadcast(out.grad, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(out.grad, other.shape))

            out._backward = _backward
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = self._child(-self.data, (self,), "neg")
        if out.requires_grad:

            def _backward():
                self._accumulate(-out.grad)

            out._backward = _backward
        return out

    def __sub__(self, other: ArrayLike | "Tensor") -> "Tensor":
        other = as_tensor(other)
        out = self._child(self.data - other.data, (self, other), "sub")
        if out.requires_grad:

            def _backward():
                if self.requires_grad:
                    self._accumulate(_unbroadcast(out.grad, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(-out.grad, other.shape))

            out._backward = _backward
        return out

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other: ArrayLike | "Tensor") -> "Tensor":
        other = as_tensor(other)
        out = self._child(self.data * other.data, (self, other), "mul")
        if out.requires_grad:

            def _backward():
                if self.requires_grad:
                    self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(out.grad * self.data, other.shape))

            out._backward = _backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike | "Tensor") -> "Tensor":
        other = as_tensor(other)
        out = self._child(self.data / other.data, (self, other), "div")
        if out.requires_grad:

            def _backward():
                if self.requires_grad:
                    self._accumulate(_unbroadcast(out.grad / other.data, self.shape))
                if other.requires_grad:
                    other._accumulate(
                        _unbroadcast(-out.grad * self.data / (other.data * other.data), other.shape)
                    )

            out._backward = _backward
        return out

    def __matmul__(self, other: "Tensor") -> "Tensor":
        other = as_tensor(other)
        if self.data.shape[-1] != other.data.shape[-2 if other.data.ndim > 1 else 0]:
            raise ShapeMismatch(f"matmul {self.shape} @ {other.shape}")
        out = self._child(np.matmul(self.data, other.data), (self, other), "matmul")
        if out.requires_grad:

            def _backward():
                g = out.grad
                if self.requires_grad:
                    self._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(other.data, -1, -2)), self.shape))
                if other.requires_grad:
                    a = self.data.reshape(-1, self.data.shape[-1])
                    other._accumulate(a.T @ g.reshape(-1, g.shape[-1]))

            out._backward = _backward
        return out

    # ------------------------------------------------------------------
    # elementwise functions

    def relu(self) -> "Tensor":
        mask = self.data > 0
        out = self._child(np.where(mask, self.data, 0.0), (self,), "relu")
        if out.requires_grad:

            def _backward():
                self._accumulate(out.grad * mask)

            out._backward = _backward
        return out

    def sigmoid(self) -> "Tensor":
        s = _sigmoid(self.data)
        out = self._child(s, (self,), "sigmoid")
        if out.requires_grad:

            def _backward():
                self._accumulate(out.grad * s * (1.0 - s))

            out._backward = _backward
        return out

    def exp(self) -> "Tensor":
        e = np.exp(self.data)
        out = self._child(e, (self,), "exp")
        if out.requires_grad:

            def _backward():
                self._accumulate(out.grad * e)

            out._backward = _backward
        return out

    def log(self) -> "Tensor":
        out = self._child(np.log(self.data), (self,), "log")
        if out.requires_grad:

            def _backward():
                self._accumulate(out.grad / self.data)

            out._backward = _backward
        return out

    def abs(self) -> "Tensor":
        # subgradient sign(0) = 0
        sign = np.sign(self.data)
        out = self._child(np.abs(self.data), (self,), "abs")
        if out.requires_grad:

            def _backward():
                self._accumulate(out.grad * sign)

            out._backward = _backward
        return out

    def clip(self, lo: float, hi: float) -> "Tensor":
        """Clamp to [lo, hi]; zero gradient outside the open interval."""
        inside = (self.data > lo) & (self.data < hi)
        out = self._child(np.clip(self.data, lo, hi), (self,), "clip")
        if out.requires_grad:

            def _backward():
                self._accumulate(out.grad * inside)

            out._backward = _backward
        return out

    # ------------------------------------------------------------------
    # reductions and shape

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        out = self._child(np.sum(self.data, axis=axis, keepdims=keepdims), (self,), "sum")
        if out.requires_grad:

            def _backward():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.shape).copy())

            out._backward = _backward
        return out

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis: int = 0) -> "Tensor":
        """
        Maximum over one axis. The gradient goes to the first maximal
        element along the axis.
        """
        idx = np.argmax(self.data, axis=axis)
        vals = np.take_along_axis(self.data, np.expand_dims(idx, axis), axis=axis)
        out = self._child(np.squeeze(vals, axis=axis), (self,), "max")
        if out.requires_grad:

            def _backward():
                g = np.zeros_like(self.data)
                np.put_along_axis(g, np.expand_dims(idx, axis), np.expand_dims(out.grad, axis), axis=axis)
                self._accumulate(g)

            out._backward = _backward
        return out

    def reshape(self, *shape: int) -> "Tensor":
        out = self._child(self.data.reshape(*shape), (self,), "reshape")
        if out.requires_grad:

            def _backward():
                self._accumulate(out.grad.reshape(self.shape))

            out._backward = _backward
        return out

    def rows(self, index: np.ndarray) -> "Tensor":
        """Gather rows along axis 0 (repeats allowed)."""
        index = np.asarray(index, dtype=np.int64)
        out = self._child(self.data[index], (self,), "rows")
        if out.requires_grad:

            def _backward():
                g = np.zeros_like(self.data)
                np.add.at(g, index, out.grad)
                self._accumulate(g)

            out._backward = _backward
        return out

    def slice_cols(self, start: int, stop: int) -> "Tensor":
        """Columns [start, stop) of the last axis."""
        out = self._child(self.data[..., start:stop], (self,), "slice")
        if out.requires_grad:

            def _backward():
                g = np.zeros_like(self.data)
                g[..., start:stop] = out.grad
                self._accumulate(g)

            out._backward = _backward
        return out


def _noop() -> None:
    return None


_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording a graph (current thread only)."""
    previous = _recording()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def as_tensor(x: ArrayLike | Tensor) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along `axis`; gradients are split back to the inputs."""
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = tensors[0]._child(data, tuple(tensors), "concat")
    if out.requires_grad:
        bounds = np.cumsum([0] + [t.data.shape[axis] for t in tensors])

        def _backward():
            for t, s, e in zip(tensors, bounds[:-1], bounds[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(int(s), int(e))
                    t._accumulate(out.grad[tuple(sl)])

        out._backward = _backward
    return out


class Tape:
    """
    Reverse topological order of the nodes reachable from one output.

    Attributes:
        nodes (List[Tensor]): Nodes in topological order (inputs first).
    """

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @staticmethod
    def record(root: Tensor) -> "Tape":
        order: List[Tensor] = []
        seen = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._prev):
                if id(parent) not in seen:
                    stack.append((parent, False))
        return Tape(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """
        Seed the root gradient and run every node's closure once, outputs first.

        Raises:
            ShapeMismatch: if a non-scalar root gets no seed gradient.
        """
        root = self.nodes[-1]
        if grad is None:
            if root.data.size != 1:
                raise ShapeMismatch(f"backward from shape {root.shape} needs a seed gradient")
            grad = np.ones_like(root.data)
        root.grad = np.asarray(grad, dtype=np.float64).reshape(root.shape)
        for node in reversed(self.nodes):
            if node.grad is not None:
                node._backward()


class GradCheck(NamedTuple):
    """
    Attributes:
        error (float): Max relative error over smooth coordinates.
        boundary (Tuple[int, ...]): Flat coordinates at a non-smooth point,
            excluded from `error`.
    """

    error: float
    boundary: Tuple[int, ...]


def grad_check_report(
    function: Callable[[Tensor], Tensor],
    point: ArrayLike,
    epsilon: float = 1e-5,
    kink_tol: float = 1e-2,
) -> GradCheck:
    """
    Compare the back-propagated gradient of a scalar function with central
    differences. A coordinate whose one-sided differences disagree by more
    than `kink_tol` (relative) sits on a kink and is reported separately.

    Args:
        function (Callable[[Tensor], Tensor]): Scalar-valued function.
        point (ArrayLike): Evaluation point.
        epsilon (float): Step in (0, 1e-3].
        kink_tol (float): One-sided disagreement marking a kink.

    Returns:
        GradCheck: Max relative error |analytic − numeric| / max(1, |numeric|).

    Raises:
        InvalidParams: if epsilon is out of range.
        NonFinite: if the function or its gradient is NaN/Inf.
    """
    if not 0 < epsilon <= 1e-3:
        raise InvalidParams("epsilon", "must lie in (0, 1e-3]")
    x0 = np.array(point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    y = function(x)
    if y.data.size != 1:
        raise ShapeMismatch("grad_check needs a scalar function")
    y.backward()
    analytic = np.zeros_like(x0) if x.grad is None else x.grad
    f0 = float(y.data)
    if not np.isfinite(f0) or not np.all(np.isfinite(analytic)):
        raise NonFinite("function or gradient is not finite")

    def f(v: np.ndarray) -> float:
        val = float(function(Tensor(v)).data)
        if not np.isfinite(val):
            raise NonFinite("function is not finite near the check point")
        return val

    flat = x0.reshape(-1)
    worst = 0.0
    boundary = []
    for i in range(flat.size):
        up = flat.copy()
        dn = flat.copy()
        up[i] += epsilon
        dn[i] -= epsilon
        fu = f(up.reshape(x0.shape))
        fd = f(dn.reshape(x0.shape))
        numeric = (fu - fd) / (2.0 * epsilon)
        fwd = (fu - f0) / epsilon
        bwd = (f0 - fd) / epsilon
        if abs(fwd - bwd) > kink_tol * max(1.0, abs(numeric)):
            boundary.append(i)
            continue
        err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return GradCheck(worst, tuple(boundary))


def grad_check(
    function: Callable[[Tensor], Tensor], point: ArrayLike, epsilon: float = 1e-5
) -> float:
    """Max relative gradient error of `function` at `point` (kinks excluded)."""
    return grad_check_report(function, point, epsilon).error
