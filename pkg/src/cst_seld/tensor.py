"""Dense tensors with reverse-mode automatic differentiation."""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Optional, Sequence

import numpy as np

from cst_seld.enums import Precision
from cst_seld.errors import NumericError, UsageError

_default_precision: list[Precision] = [Precision.FLOAT32]

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def get_default_precision() -> Precision:
    """Return the precision used for tensors built from non-float data."""
    return _default_precision[0]


def set_default_precision(precision: Precision | str) -> None:
    """
    Set the precision used for tensors built from non-float data.

    Parameters
    ----------
    precision : Precision or str
        ``Precision.FLOAT32`` (training default) or ``Precision.FLOAT64``.
    """
    _default_precision[0] = Precision(precision)


@contextlib.contextmanager
def default_precision(precision: Precision | str) -> Iterator[Precision]:
    """
    Temporarily switch the default tensor precision.

    Examples
    --------
    >>> with default_precision(Precision.FLOAT64):
    ...     Tensor([1, 2]).dtype
    dtype('float64')
    """
    previous = get_default_precision()
    set_default_precision(precision)
    try:
        yield get_default_precision()
    finally:
        set_default_precision(previous)


@dataclass
class OpRecord:
    """
    One node of the computation graph.

    Attributes
    ----------
    op : str
        Primitive name, used in error messages.
    inputs : tuple of Tensor
        Operands of the primitive.
    backward : callable or None
        Maps the output gradient to one gradient (or None) per input. Saved
        activations live in its closure and are released once replayed.
    consumed : bool
        Set after the record has been replayed by ``Tensor.backward``.
    """

    op: str
    inputs: tuple["Tensor", ...]
    backward: Optional[BackwardFn]
    consumed: bool = False


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"Non-finite values produced by '{op}'.")


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """
    Sum a broadcast gradient back down to ``shape``.

    Parameters
    ----------
    grad : np.ndarray
        Gradient with the broadcast result shape.
    shape : tuple of int
        Shape of the operand that was broadcast.

    Returns
    -------
    np.ndarray
        Gradient with exactly ``shape``.
    """
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """
    N-dimensional real array with optional gradient tracking.

    Parameters
    ----------
    data : array-like
        Values. Floating numpy arrays keep their dtype; anything else is
        converted to the default precision.
    requires_grad : bool, default False
        Whether ``backward`` should populate ``grad`` for this tensor.
    dtype : numpy dtype, optional
        Explicit storage dtype.
    name : str, optional
        Label used by parameter collections and error messages.

    Notes
    -----
    Every primitive checks its output for NaN/Inf and raises
    ``NumericError``. A graph is replayed once; calling ``backward`` on the
    same loss again raises ``UsageError``.
    """

    __array_priority__ = 100

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: Any = None,
        name: Optional[str] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = get_default_precision().dtype
        self.data: np.ndarray = np.array(data, dtype=dtype)
        _check_finite(self.data, "tensor")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._record: Optional[OpRecord] = None
        self._consumed = False

    # ------------------------------------------------------------------
    # basic properties
    # ------------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        """True for tensors not produced by a recorded primitive."""
        return self._record is None

    def numpy(self) -> np.ndarray:
        """Return the underlying array (not a copy)."""
        return self.data

    def item(self) -> float:
        """Return the value of a single-element tensor."""
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        """Return a gradient-free tensor sharing this tensor's values."""
        return Tensor(self.data, dtype=self.dtype)

    def zero_grad(self) -> None:
        """Clear the accumulated gradient."""
        self.grad = None

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # ------------------------------------------------------------------
    # graph plumbing
    # ------------------------------------------------------------------

    @staticmethod
    def from_op(
        data: np.ndarray, inputs: Sequence[Tensor], op: str, backward: BackwardFn
    ) -> Tensor:
        """
        Wrap the result of a primitive and record it in the graph.

        Parameters
        ----------
        data : np.ndarray
            Forward result.
        inputs : sequence of Tensor
            Operands of the primitive.
        op : str
            Primitive name.
        backward : callable
            Output gradient -> per-input gradients.

        Returns
        -------
        Tensor
            Result tensor; tracks gradients when any input does.
        """
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        out._consumed = False
        out.requires_grad = any(t.requires_grad for t in inputs)
        out._record = (
            OpRecord(op=op, inputs=tuple(inputs), backward=backward)
            if out.requires_grad
            else None
        )
        return out

    def _topological_order(self) -> list[Tensor]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._record is not None:
                for parent in node._record.inputs:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def backward(self) -> None:
        """
        Populate ``grad`` on every ``requires_grad`` leaf reachable from this loss.

        Gradients accumulate into existing ``grad`` arrays; clear them with
        ``zero_grad`` between optimisation steps.

        Raises
        ------
        UsageError
            If the tensor is not a scalar, does not track gradients, or its
            graph has already been replayed.
        """
        if self.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}.")
        if not self.requires_grad:
            raise UsageError("backward() called on a tensor that does not require grad.")
        if self._consumed:
            raise UsageError("Graph already consumed by a previous backward(); rebuild it.")

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(self._topological_order()):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            record = node._record
            if record is None:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            if record.consumed or record.backward is None:
                raise UsageError(f"Graph node '{record.op}' already consumed; rebuild the graph.")
            input_grads = record.backward(grad)
            for parent, parent_grad in zip(record.inputs, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                _check_finite(parent_grad, f"{record.op}.backward")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + parent_grad
                else:
                    grads[key] = parent_grad
            record.consumed = True
            record.backward = None
        self._consumed = True

    # ------------------------------------------------------------------
    # elementwise arithmetic
    # ------------------------------------------------------------------

    def _lift(self, other: Any) -> Tensor:
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other: Any) -> Tensor:
        other = self._lift(other)
        a_shape, b_shape = self.shape, other.shape

        def backward(g: np.ndarray):
            return unbroadcast(g, a_shape), unbroadcast(g, b_shape)

        return Tensor.from_op(self.data + other.data, (self, other), "add", backward)

    def __radd__(self, other: Any) -> Tensor:
        return self._lift(other) + self

    def __sub__(self, other: Any) -> Tensor:
        other = self._lift(other)
        a_shape, b_shape = self.shape, other.shape

        def backward(g: np.ndarray):
            return unbroadcast(g, a_shape), unbroadcast(-g, b_shape)

        return Tensor.from_op(self.data - other.data, (self, other), "sub", backward)

    def __rsub__(self, other: Any) -> Tensor:
        return self._lift(other) - self

    def __mul__(self, other: Any) -> Tensor:
        other = self._lift(other)
        a, b = self.data, other.data

        def backward(g: np.ndarray):
            return unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)

        return Tensor.from_op(a * b, (self, other), "mul", backward)

    def __rmul__(self, other: Any) -> Tensor:
        return self._lift(other) * self

    def __truediv__(self, other: Any) -> Tensor:
        other = self._lift(other)
        a, b = self.data, other.data

        def backward(g: np.ndarray):
            return unbroadcast(g / b, a.shape), unbroadcast(-g * a / (b * b), b.shape)

        return Tensor.from_op(a / b, (self, other), "div", backward)

    def __rtruediv__(self, other: Any) -> Tensor:
        return self._lift(other) / self

    def __neg__(self) -> Tensor:
        return Tensor.from_op(-self.data, (self,), "neg", lambda g: (-g,))

    def __pow__(self, exponent: float) -> Tensor:
        if isinstance(exponent, Tensor):
            raise TypeError("Only scalar exponents are supported.")
        a = self.data
        p = float(exponent)

        def backward(g: np.ndarray):
            return (g * p * a ** (p - 1.0),)

        return Tensor.from_op(a**p, (self,), "pow", backward)

    def __matmul__(self, other: Any) -> Tensor:
        other = self._lift(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul operands need at least two dimensions.")

        def backward(g: np.ndarray):
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

        return Tensor.from_op(a @ b, (self, other), "matmul", backward)

    def __rmatmul__(self, other: Any) -> Tensor:
        return self._lift(other) @ self

    def __getitem__(self, index: Any) -> Tensor:
        shape = self.shape
        dtype = self.dtype

        def backward(g: np.ndarray):
            full = np.zeros(shape, dtype=dtype)
            np.add.at(full, index, g)
            return (full,)

        return Tensor.from_op(self.data[index], (self,), "getitem", backward)

    # ------------------------------------------------------------------
    # unary functions
    # ------------------------------------------------------------------

    def exp(self) -> Tensor:
        out = np.exp(self.data)
        return Tensor.from_op(out, (self,), "exp", lambda g: (g * out,))

    def log(self) -> Tensor:
        a = self.data
        return Tensor.from_op(np.log(a), (self,), "log", lambda g: (g / a,))

    def sqrt(self) -> Tensor:
        out = np.sqrt(self.data)
        return Tensor.from_op(out, (self,), "sqrt", lambda g: (g * 0.5 / out,))

    def tanh(self) -> Tensor:
        out = np.tanh(self.data)
        return Tensor.from_op(out, (self,), "tanh", lambda g: (g * (1.0 - out * out),))

    def relu(self) -> Tensor:
        mask = self.data > 0
        return Tensor.from_op(
            np.where(mask, self.data, 0.0).astype(self.dtype),
            (self,),
            "relu",
            lambda g: (g * mask,),
        )

    # ------------------------------------------------------------------
    # reductions and shape manipulation
    # ------------------------------------------------------------------

    def sum(self, axis: Any = None, keepdims: bool = False) -> Tensor:
        shape = self.shape
        axes = _normalize_axes(axis, self.ndim)

        def backward(g: np.ndarray):
            if not keepdims:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.from_op(
            np.sum(self.data, axis=axes, keepdims=keepdims), (self,), "sum", backward
        )

    def mean(self, axis: Any = None, keepdims: bool = False) -> Tensor:
        axes = _normalize_axes(axis, self.ndim)
        count = math.prod(self.shape[a] for a in axes)
        return self.sum(axis=axes, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape: Any) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return Tensor.from_op(
            self.data.reshape(shape),
            (self,),
            "reshape",
            lambda g: (g.reshape(original),),
        )

    def permute(self, *axes: int) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        return Tensor.from_op(
            np.ascontiguousarray(np.transpose(self.data, axes)),
            (self,),
            "permute",
            lambda g: (np.transpose(g, inverse),),
        )

    def swapaxes(self, a: int, b: int) -> Tensor:
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.permute(tuple(axes))


def _normalize_axes(axis: Any, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def as_tensor(value: Any, dtype: Any = None) -> Tensor:
    """Return ``value`` unchanged when it is a Tensor, otherwise wrap it."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)
