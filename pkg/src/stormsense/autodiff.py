"""Dense f64 tensors with reverse-mode automatic differentiation.

Every differentiable computation in this package (LSTM gates, convolutions,
losses) is expressed through the ops in this module. Recording is explicit:
ops write onto the innermost active :class:`Tape`, and ``tape.backward(loss)``
replays the recorded nodes once, in reverse order, accumulating gradients
into ``Tensor.grad``. With no active tape, ops are pure forward computations.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


# Innermost entry is the recording target; None entries suppress recording.
_TAPE_STACK: list[Optional["Tape"]] = []


def _active_tape() -> Optional["Tape"]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A dense n-dimensional float64 value, optionally tracked for gradients.

    ``data`` is always a C-contiguous float64 ndarray. ``grad`` of a tensor
    with ``requires_grad=True`` is an array of the same shape (zeros until a
    backward pass reaches it); for other tensors it is None.
    """

    __slots__ = ("data", "requires_grad", "_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._grad: Optional[np.ndarray] = None

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
    def grad(self) -> Optional[np.ndarray]:
        if self.requires_grad and self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    def zero_grad(self) -> None:
        """Clear the accumulated gradient. Call once per training step."""
        self._grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A copy cut off from gradient tracking."""
        return Tensor(self.data.copy(), requires_grad=False)

    # -- conveniences mirroring numpy ------------------------------------

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return reduce_sum(self, axis)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        return reduce_mean(self, axis)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, shape)

    def narrow(self, axis: int, start: int, length: int) -> "Tensor":
        return narrow(self, axis, start, length)

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


class _Node:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of ops for one backward pass.

    Nodes are appended in execution order, which is by construction a
    topological order; ``backward`` walks them exactly once in reverse.
    A tape supports a single backward call: make a fresh tape per training
    step and clear parameter grads with ``zero_grad`` before recording.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._output_ids: set[int] = set()
        self._finished = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def record(self, inputs: Sequence[Tensor], output: Tensor, backward_fn) -> None:
        if self._finished:
            raise RuntimeError("tape already consumed by backward; build a new tape")
        self._nodes.append(_Node(tuple(inputs), output, backward_fn))
        self._output_ids.add(id(output))

    def backward(self, loss: Tensor) -> None:
        """Populate grads of every requires_grad tensor reachable from loss.

        Gradients from multiple uses of a tensor accumulate by addition,
        on top of whatever ``grad`` already holds.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._finished:
            raise RuntimeError("tape already consumed by backward; build a new tape")
        if id(loss) not in self._output_ids:
            raise ValueError("loss was not produced on this tape")
        self._finished = True

        _accumulate(loss, np.ones_like(loss.data))
        for node in reversed(self._nodes):
            out_grad = node.output._grad
            if out_grad is None:
                continue  # branch never reached the loss
            input_grads = node.backward_fn(out_grad)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is not None and tensor.requires_grad:
                    _accumulate(tensor, grad)


class no_grad:
    """Context manager that suppresses recording even under an active tape."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if tensor._grad is None:
        tensor._grad = grad.copy()
    else:
        tensor._grad = tensor._grad + grad


def make_op(
    inputs: Sequence[Tensor],
    out_data: np.ndarray,
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
) -> Tensor:
    """Wrap a computed result as a differentiable op.

    ``backward_fn`` maps the output gradient to one gradient array (or None)
    per input, in order. This is the extension point custom primitives
    (convolution, pooling, lookups) use to register their backward rules.
    """
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.record(inputs, out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    # Permitted: equal shapes, a one-element scalar against anything, or a
    # trailing vector [k] against rows of a matrix [n, k]. Anything wider
    # is deliberately rejected.
    sa, sb = a.shape, b.shape
    if sa == sb or a.size == 1 or b.size == 1:
        return
    if len(sa) == 2 and sb == (sa[1],):
        return
    if len(sb) == 2 and sa == (sb[1],):
        return
    raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def _reduce_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def backward(g):
        return _reduce_to_shape(g, a.shape), _reduce_to_shape(g, b.shape)

    return make_op([a, b], out, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    out = a.data - b.data

    def backward(g):
        return _reduce_to_shape(g, a.shape), _reduce_to_shape(-g, b.shape)

    return make_op([a, b], out, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    out = a.data * b.data
    a_data, b_data = a.data, b.data

    def backward(g):
        return (
            _reduce_to_shape(g * b_data, a.shape),
            _reduce_to_shape(g * a_data, b.shape),
        )

    return make_op([a, b], out, backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split form avoids exp overflow for large |x|
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        return (g * y * (1.0 - y),)

    return make_op([a], y, backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return make_op([a], y, backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return make_op([a], a.data * mask, backward)


def log(a: Tensor) -> Tensor:
    """Natural log. Callers guarantee positive inputs (see clamp)."""
    x = a.data

    def backward(g):
        return (g / x,)

    return make_op([a], np.log(x), backward)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; the gradient is zero where clipping was active."""
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        return (g * inside,)

    return make_op([a], np.clip(a.data, lo, hi), backward)


# ---------------------------------------------------------------------------
# matmul / reductions / shape ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    out = a.data @ b.data
    a_data, b_data = a.data, b.data

    def backward(g):
        return g @ b_data.T, a_data.T @ g

    return make_op([a, b], out, backward)


def _check_axis(a: Tensor, axis: Optional[int], op: str) -> None:
    if axis is not None and not (0 <= axis < a.ndim):
        raise ShapeError(f"{op}: axis {axis} out of range for shape {a.shape}")


def reduce_sum(a: Tensor, axis: Optional[int] = None) -> Tensor:
    _check_axis(a, axis, "sum")
    out = a.data.sum(axis=axis)
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return make_op([a], out, backward)


def reduce_mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    _check_axis(a, axis, "mean")
    out = a.data.mean(axis=axis)
    shape = a.shape
    n = a.size if axis is None else shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / n, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g / n, axis), shape).copy(),)

    return make_op([a], out, backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty list")
    first = tensors[0]
    if not (0 <= axis < first.ndim):
        raise ShapeError(f"concat: axis {axis} out of range for shape {first.shape}")
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            i != axis and t.shape[i] != first.shape[i] for i in range(first.ndim)
        ):
            raise ShapeError(
                f"concat: shapes {first.shape} and {t.shape} differ off axis {axis}"
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    extents = [t.shape[axis] for t in tensors]

    def backward(g):
        pieces = np.split(g, np.cumsum(extents)[:-1], axis=axis)
        return tuple(p for p in pieces)

    return make_op(list(tensors), out, backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    out = a.data.reshape(tuple(shape))

    def backward(g):
        return (g.reshape(old),)

    return make_op([a], out, backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    if not (0 <= axis < a.ndim):
        raise ShapeError(f"narrow: axis {axis} out of range for shape {a.shape}")
    if start < 0 or length < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow: [{start}, {start + length}) outside axis of size {a.shape[axis]}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return make_op([a], a.data[index].copy(), backward)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def gradient_check(
    f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic scalar function of ``x`` (stochastic parts
    such as dropout must draw from a freshly seeded generator on every call).
    The error at coordinate i is |analytic_i - fd_i| / max(1, |analytic_i|).
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    if not x.requires_grad:
        raise ValueError("gradient_check needs x.requires_grad=True")

    x.zero_grad()
    with Tape() as tape:
        y = f(x)
        if y.data.size != 1:
            raise ShapeError(f"f must return a scalar, got shape {y.shape}")
        tape.backward(y)
    analytic = x.grad.copy()
    x.zero_grad()

    flat = x.data.ravel()
    fd = np.empty_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f(x).item()
            flat[i] = orig - eps
            down = f(x).item()
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * eps)

    diff = np.abs(analytic.ravel() - fd)
    denom = np.maximum(1.0, np.abs(analytic.ravel()))
    return float((diff / denom).max()) if flat.size else 0.0
