"""Fixed-shape dense tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a `Tensor` wraps a float32 or float64
numpy array, and a `Tape` records every differentiable operation executed
while it is active. Execution order is a topological order by construction
(an op's inputs exist before the op runs), so `backward` is a single reverse
sweep over the recorded list, visiting each op exactly once.

There is no persistent graph: open a fresh `Tape` per forward pass, compute
a scalar loss inside it, then call `backward(loss, wrt=...)` for gradients
with respect to any tensors that participated, parameters and network
inputs alike. Outside a tape, ops run without any recording overhead.

All math is same-shape (plus python scalars); broadcasting is intentionally
out of scope. Float64 inputs propagate float64 throughout, which is what the
finite-difference gradient checks rely on.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class TapeError(RuntimeError):
    """Gradient requested for a tensor that never touched the tape."""


class Tensor:
    """n-dimensional float array, optionally tracked for differentiation.

    `requires_grad` marks a leaf (parameter or attacked input) whose gradient
    should be computed. Op outputs recorded on a tape propagate the flag.
    `grad` is populated by `backward` for the tensors it was asked about.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Arithmetic. Same shape or python scalar only; no broadcasting.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, neg(other))
        return add(self, -float(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_sum(self) * (1.0 / self.data.size)


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)


class _Node:
    """One recorded operation: output, inputs, and its backward rule."""

    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


_TAPE_STACK: list["Tape"] = []


def _current_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of the ops executed while the tape is active.

    Use as a context manager around one forward pass. A tape is owned by a
    single training step; rebuild it per pass rather than reusing.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._tensor_ids: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must unwind in LIFO order"

    def _record(self, node: _Node) -> None:
        self._nodes.append(node)
        self._tensor_ids.add(id(node.out))
        for t in node.inputs:
            self._tensor_ids.add(id(t))

    def __len__(self) -> int:
        return len(self._nodes)


def apply_op(
    out_data: np.ndarray,
    inputs: Sequence[Tensor],
    make_backward: Callable[[tuple[bool, ...]], Callable],
) -> Tensor:
    """Wrap an op result, recording it on the active tape when needed.

    `make_backward(needs)` is called only when recording happens; it returns
    a closure mapping the output gradient to one gradient per input (None for
    inputs whose `needs` flag is False). `needs[i]` is True when input i is a
    grad-requiring leaf or an intermediate of the same tape.
    """
    tape = _current_tape()
    out = Tensor(out_data)
    if tape is not None:
        needs = tuple(
            t.requires_grad or (t._node is not None and t._tape is tape) for t in inputs
        )
        if any(needs):
            node = _Node(out, tuple(inputs), make_backward(needs))
            out._node = node
            out._tape = tape
            out.requires_grad = True
            tape._record(node)
    return out


def backward(loss: Tensor, wrt: Iterable[Tensor]) -> dict[Tensor, np.ndarray]:
    """Reverse sweep from a scalar loss; returns {tensor: dloss/dtensor}.

    Every tensor in `wrt` must have participated in the taped computation.
    Gradients are also stored on each tensor's `.grad`. A tensor that is on
    the tape but not upstream of the loss gets a zero gradient.
    """
    targets = list(wrt)
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise TapeError("loss was not recorded on any tape")
    for t in targets:
        if id(t) not in tape._tensor_ids:
            raise TapeError("requested tensor is not on the loss's tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape._nodes):
        g_out = grads.get(id(node.out))
        if g_out is None:
            continue  # not upstream of the loss
        for inp, g_in in zip(node.inputs, node.backward_fn(g_out)):
            if g_in is None:
                continue
            acc = grads.get(id(inp))
            if acc is None:
                grads[id(inp)] = g_in
            else:
                # Backward rules may hand back views or shared buffers, so
                # accumulate into a fresh array instead of mutating in place.
                grads[id(inp)] = acc + g_in

    result: dict[Tensor, np.ndarray] = {}
    for t in targets:
        g = grads.get(id(t))
        if g is None:
            g = np.zeros_like(t.data)
        t.grad = g
        result[t] = g
    return result


def _check_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a.data, b.data, "add")
        out = a.data + b.data

        def make_backward(needs):
            def fn(g):
                return (g if needs[0] else None, g if needs[1] else None)

            return fn

        return apply_op(out, (a, b), make_backward)

    scalar = float(b)
    out = a.data + a.data.dtype.type(scalar)

    def make_backward(needs):
        def fn(g):
            return (g,)

        return fn

    return apply_op(out, (a,), make_backward)


def neg(a: Tensor) -> Tensor:
    def make_backward(needs):
        def fn(g):
            return (-g,)

        return fn

    return apply_op(-a.data, (a,), make_backward)


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a.data, b.data, "mul")
        a_data, b_data = a.data, b.data

        def make_backward(needs):
            def fn(g):
                return (
                    g * b_data if needs[0] else None,
                    g * a_data if needs[1] else None,
                )

            return fn

        return apply_op(a_data * b_data, (a, b), make_backward)

    scalar = a.data.dtype.type(float(b))

    def make_backward(needs):
        def fn(g):
            return (g * scalar,)

        return fn

    return apply_op(a.data * scalar, (a,), make_backward)


def tensor_sum(a: Tensor) -> Tensor:
    shape, dtype = a.data.shape, a.data.dtype

    def make_backward(needs):
        def fn(g):
            return (np.full(shape, g, dtype=dtype),)

        return fn

    return apply_op(np.asarray(a.data.sum(), dtype=dtype), (a,), make_backward)
