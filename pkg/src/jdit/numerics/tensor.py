"""Dense float64 tensors with reverse-mode automatic differentiation.

Every continuous quantity in the package lives in a :class:`Tensor`. The
graph is taped implicitly: each op attaches a backward closure to its output,
and ``Tensor.backward()`` walks the graph in reverse topological order. All
arithmetic is 64-bit; there is no device or dtype story by design.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class NonFiniteError(ArithmeticError):
    """A tensor that must be finite contains NaN or Inf."""


_grad_enabled: bool = True
_debug_checks: bool = False


def set_debug_checks(enabled: bool) -> None:
    """Enable finiteness validation of every op output (slow, for debugging)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_checks


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def check_finite(data: np.ndarray, context: str = "tensor") -> None:
    if not np.isfinite(data).all():
        bad = int(np.size(data) - np.isfinite(data).sum())
        raise NonFiniteError(f"{context}: {bad} non-finite element(s) detected")


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    ``requires_grad`` marks leaves that accumulate gradients and interior
    nodes that propagate them. ``grad`` is filled by :meth:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.name = name
        if _debug_checks:
            check_finite(self.data, f"Tensor({self.op})")

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward_builder: Callable[["Tensor"], Callable[[np.ndarray], None]],
        op: str,
    ) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = ""
        out.op = op
        req = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = req
        if req:
            out._parents = tuple(parents)
            out._backward_fn = backward_builder(out)
        else:
            out._parents = ()
            out._backward_fn = None
        if _debug_checks:
            check_finite(out.data, f"op {op}")
        return out

    # -- basic protocol --------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's data, cut from the graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- autodiff ---------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor through the recorded graph.

        ``grad`` defaults to 1 and may only be omitted for scalars.
        """
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ValueError(f"gradient shape {grad.shape} != tensor shape {self.data.shape}")

        # Iterative topological sort: recursion depth would scale with the
        # frame count of an utterance, which overflows CPython's stack.
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
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        self._accumulate(grad)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operator sugar ---------------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        return narrow(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic -----------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return bw

    return Tensor._from_op(a.data + b.data, (a, b), build, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.shape))

        return bw

    return Tensor._from_op(a.data - b.data, (a, b), build, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return bw

    return Tensor._from_op(a.data * b.data, (a, b), build, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return bw

    return Tensor._from_op(a.data / b.data, (a, b), build, "div")


def neg(a: Tensor) -> Tensor:
    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            a._accumulate(-g)

        return bw

    return Tensor._from_op(-a.data, (a,), build, "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            a._accumulate(g * exponent * a.data ** (exponent - 1.0))

        return bw

    return Tensor._from_op(a.data**exponent, (a,), build, "power")


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            a._accumulate(g * out.data)

        return bw

    return Tensor._from_op(data, (a,), build, "exp")


def log(a: Tensor) -> Tensor:
    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            a._accumulate(g / a.data)

        return bw

    return Tensor._from_op(np.log(a.data), (a,), build, "log")


def absolute(a: Tensor) -> Tensor:
    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            a._accumulate(g * np.sign(a.data))

        return bw

    return Tensor._from_op(np.abs(a.data), (a,), build, "abs")


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            a._accumulate(g * (a.data > 0.0))

        return bw

    return Tensor._from_op(data, (a,), build, "relu")


# -- reductions and shape ops -----------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.shape))
                return
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, a.shape))

        return bw

    return Tensor._from_op(np.asarray(data), (a,), build, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    elif isinstance(axis, int):
        count = a.shape[axis]
    else:
        count = int(np.prod([a.shape[ax] for ax in axis]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), Tensor(1.0 / count))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            a._accumulate(g.reshape(a.shape))

        return bw

    return Tensor._from_op(a.data.reshape(shape), (a,), build, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            a._accumulate(g.transpose(inverse))

        return bw

    return Tensor._from_op(a.data.transpose(axes), (a,), build, "transpose")


def narrow(a: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing; each input element appears at most once."""

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            full = np.zeros_like(a.data)
            full[key] = g
            a._accumulate(full)

        return bw

    return Tensor._from_op(a.data[key], (a,), build, "narrow")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of an empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            index = [slice(None)] * g.ndim
            for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    index[axis] = slice(int(start), int(stop))
                    t._accumulate(g[tuple(index)])

        return bw

    return Tensor._from_op(data, tensors, build, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.stack([t.data for t in tensors], axis=axis)

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            parts = np.moveaxis(g, axis, 0)
            for t, piece in zip(tensors, parts):
                if t.requires_grad:
                    t._accumulate(piece)

        return bw

    return Tensor._from_op(data, tensors, build, "stack")


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    """Zero padding along one axis."""
    if before < 0 or after < 0:
        raise ValueError("padding amounts must be nonnegative")
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    data = np.pad(a.data, widths)

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            index = [slice(None)] * g.ndim
            index[axis] = slice(before, before + a.shape[axis])
            a._accumulate(g[tuple(index)])

        return bw

    return Tensor._from_op(data, (a,), build, "pad")


def gather_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Index rows of ``a`` along axis 0; repeated indices accumulate gradients.

    Serves both embedding lookup (integer id arrays of any shape) and
    duration-based expansion (1-D repeat index vectors).
    """
    indices = np.asarray(indices)
    if not np.issubdtype(indices.dtype, np.integer):
        raise TypeError("gather indices must be integers")
    if indices.size and (indices.min() < 0 or indices.max() >= a.shape[0]):
        raise IndexError(f"gather index out of range for axis of length {a.shape[0]}")

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            full = np.zeros_like(a.data)
            flat_idx = indices.reshape(-1)
            tail = a.shape[1:]
            np.add.at(full, flat_idx, g.reshape((-1,) + tail))
            a._accumulate(full)

        return bw

    return Tensor._from_op(a.data[indices], (a,), build, "gather")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with batching on leading axes; operands must be >= 2-D."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have at least 2 dimensions")
    data = a.data @ b.data

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2)
                a._accumulate(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ g
                b._accumulate(_unbroadcast(gb, b.shape))

        return bw

    return Tensor._from_op(data, (a, b), build, "matmul")


# -- attention / regularization primitives ----------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            y = out.data
            inner = (g * y).sum(axis=axis, keepdims=True)
            a._accumulate(y * (g - inner))

        return bw

    return Tensor._from_op(data, (a,), build, "softmax")


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is True with ``value`` (no grad there)."""
    mask = np.asarray(mask, dtype=bool)
    data = np.where(mask, value, a.data)

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            a._accumulate(_unbroadcast(np.where(mask, 0.0, g), a.shape))

        return bw

    return Tensor._from_op(data, (a,), build, "masked_fill")


def dropout(a: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-rate) so eval is identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return a
    keep = rng.random(a.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    factor = keep * scale

    def build(out: Tensor):
        def bw(g: np.ndarray) -> None:
            a._accumulate(g * factor)

        return bw

    return Tensor._from_op(a.data * factor, (a,), build, "dropout")


def global_grad_norm(tensors: Iterable[Tensor]) -> float:
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    return float(np.sqrt(total))
