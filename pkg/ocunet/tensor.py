"""
Tensor values, precision modes and the reverse-mode autodiff tape
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ShapeError, TapeError

ArrayLike = Union[np.ndarray, float, int, Sequence]


class Precision(Enum):
    """Floating point mode for newly created tensors"""

    SINGLE = "single"
    DOUBLE = "double"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is Precision.SINGLE else np.float64)


_state = threading.local()


def get_precision() -> Precision:
    return getattr(_state, "precision", Precision.SINGLE)


def set_precision(mode: Union[Precision, str]) -> None:
    _state.precision = Precision(mode)


@contextmanager
def precision(mode: Union[Precision, str]) -> Iterator[Precision]:
    """Temporarily switch the precision used for new tensors."""
    previous = get_precision()
    set_precision(mode)
    try:
        yield get_precision()
    finally:
        set_precision(previous)


class Tensor:
    """
    N-dimensional array with an optional gradient slot.

    Images use the batch x height x width x channels layout. Tensors are
    treated as immutable by every op; only the optimizer writes into
    parameter data, and only between forward passes.
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Optional[np.dtype] = None,
    ):
        self.data = np.asarray(data, dtype=dtype or get_precision().dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a one-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    # Operator sugar; the ops module does the real work.
    def __add__(self, other: "TensorLike") -> "Tensor":
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other: "TensorLike") -> "Tensor":
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other: "TensorLike") -> "Tensor":
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other: "TensorLike") -> "Tensor":
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: "TensorLike") -> "Tensor":
        from . import ops

        return ops.div(self, other)

    def __rtruediv__(self, other: "TensorLike") -> "Tensor":
        from . import ops

        return ops.div(other, self)

    def __neg__(self) -> "Tensor":
        from . import ops

        return ops.neg(self)


TensorLike = Union[Tensor, float, int, np.ndarray]

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    """One recorded primitive: its inputs, its output and the chain rule."""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """
    Ordered record of the primitives executed while the tape is active.

    Use as a context manager; ops record onto the innermost active tape of
    the current thread when at least one of their inputs requires grad.
    """

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self.frozen = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, node: Node) -> None:
        if self.frozen:
            raise TapeError(f"cannot record '{node.op}' onto a frozen tape")
        self.nodes.append(node)

    def op_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for node in self.nodes:
            counts[node.op] = counts.get(node.op, 0) + 1
        return counts

    def backward(self, output: Tensor) -> Dict[int, np.ndarray]:
        return backward(output, self)


def _tape_stack() -> List[Tape]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def current_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def backward(output: Tensor, tape: Tape) -> Dict[int, np.ndarray]:
    """
    Propagate d(output)/d(leaf) through the tape in reverse order.

    Args:
        output: Scalar tensor produced by a node on ``tape``
        tape: Tape that recorded the forward pass

    Returns:
        Mapping of ``id(leaf)`` to its gradient. Each leaf's ``grad`` slot
        is also populated (zeros when no path reaches it).

    Raises:
        TapeError: If output is not a scalar
    """
    if output.size != 1:
        raise TapeError(f"backward needs a scalar output, got shape {output.shape}")

    produced = {id(node.output) for node in tape.nodes}
    leaves: Dict[int, Tensor] = {}
    for node in tape.nodes:
        for inp in node.inputs:
            if inp.requires_grad and id(inp) not in produced:
                leaves.setdefault(id(inp), inp)

    grads: Dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for node in reversed(tape.nodes):
        grad_out = grads.pop(id(node.output), None)
        if grad_out is None:
            continue
        for inp, grad_in in zip(node.inputs, node.backward(grad_out)):
            if grad_in is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + grad_in
            else:
                grads[key] = grad_in

    result: Dict[int, np.ndarray] = {}
    for key, leaf in leaves.items():
        grad = grads.get(key)
        if grad is None:
            grad = np.zeros_like(leaf.data)
        leaf.grad = np.array(grad, dtype=leaf.dtype)
        result[key] = leaf.grad
    if output.requires_grad and id(output) not in produced:
        output.grad = np.ones_like(output.data)
    tape.frozen = True
    return result
